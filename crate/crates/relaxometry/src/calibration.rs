//! Readout-phase ↔ population algebra for dispersive three-level calibration.
//!
//! A dispersive readout of a transmon/fluxonium-style circuit transmits a
//! resonator phase that is, to first order, a population-weighted mixture of
//! the pure-state phases φ_g, φ_e, φ_f. Measuring the same prepared state
//! four times — bare, after a π pulse on e↔f, after a π pulse on g↔e, and
//! after both — permutes which population multiplies which phase:
//!
//! ```text
//! M₁ = p_g·φ_g + p_e·φ_e + p_f·φ_f        (no pulse)
//! M₂ = p_g·φ_g + p_f·φ_e + p_e·φ_f        (π on e↔f)
//! M₃ = p_e·φ_g + p_g·φ_e + p_f·φ_f        (π on g↔e)
//! M₄ = p_e·φ_g + p_f·φ_e + p_g·φ_f        (π on g↔e, then π on e↔f)
//! ```
//!
//! Collected at several preparation delays and closed by the physical fact
//! that the out-of-manifold |f⟩ population has fully decayed at the longest
//! delay (p_f = 0, p_g + p_e = 1 there), this bilinear system determines the
//! three phases and the per-delay populations jointly — in particular the
//! *phase contrast* φ_e − φ_g that converts a paired readout into a qubit
//! polarization via `M₀ − M_π = (p_e − p_g)(φ_e − φ_g)`.
//!
//! # Layout
//!
//! * [`PhaseModel`] / [`Populations3`] — validated value types.
//! * [`readout_phase`] and [`four_measurements`] — the forward mixing and its
//!   four pulse-permuted variants.
//! * [`solve_phase_contrast`] — the joint inverse solve across delays.
//! * [`phase_pair_to_z`] — paired-readout phase difference → polarization.
//! * [`smooth_contrast_table`] — least-squares polynomial smoothing of a
//!   contrast-versus-frequency calibration table.
//!
//! # Algorithm (inverse solve)
//!
//! The system is bilinear (populations multiply phases), but it linearizes
//! exactly through the four per-delay combinations
//!
//! ```text
//! u = M₁ − M₃ = (p_g − p_e)(φ_g − φ_e)      v = M₂ − M₄ = (p_g − p_e)(φ_g − φ_f)
//! a = M₁ + M₃                               b = M₂ + M₄
//! ```
//!
//! `u/v` pools across delays into the phase-difference ratio
//! `(φ_g − φ_e)/(φ_g − φ_f)`, the closure delay supplies `a = φ_g + φ_e`,
//! `b = φ_g + φ_f` and `b − a = φ_f − φ_e`, and the remaining delays' sums
//! are affine in their p_f. That closed-form solution (exact on noiseless
//! data) seeds a Levenberg–Marquardt polish of all 4·(number of delays)
//! residuals, which performs the ordinary-least-squares reconciliation when
//! measurement noise makes the system overdetermined.
//!
//! All pulses are treated as perfect population swaps; pulse error is out of
//! scope here.

use crate::analysis::{fit_least_squares, solve_weighted_linear, FitOptions};
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Two degenerate-geometry guards: a phase difference (radians) smaller than
/// this, or a polarization signal smaller than this relative to the data
/// scale, cannot anchor the solve.
const DEGENERACY_TOL: f64 = 1e-9;

/// Solver outputs may leave the population simplex by at most this much
/// (numerical round-off plus mild noise); larger excursions are reported as
/// model inconsistency rather than silently clamped.
const SIMPLEX_SNAP_TOL: f64 = 1e-6;

/// Default polynomial order for [`smooth_contrast_table`].
pub const DEFAULT_SMOOTHING_ORDER: usize = 5;

/// Transmitted resonator phase for each pure state, radians.
///
/// The g/e contrast must not vanish — it is the denominator of every
/// phase-to-polarization conversion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseModel {
    /// Phase transmitted with the circuit in |g⟩, radians.
    pub phi_g: f64,
    /// Phase transmitted with the circuit in |e⟩, radians.
    pub phi_e: f64,
    /// Phase transmitted with the circuit in the out-of-manifold |f⟩ state,
    /// radians.
    pub phi_f: f64,
}

impl PhaseModel {
    /// Validated constructor: all phases finite, `phi_e ≠ phi_g`.
    pub fn new(phi_g: f64, phi_e: f64, phi_f: f64) -> Result<Self> {
        if !(phi_g.is_finite() && phi_e.is_finite() && phi_f.is_finite()) {
            return Err(Error::InvalidInput(
                "phase model: all phases must be finite".into(),
            ));
        }
        if phi_e == phi_g {
            return Err(Error::InvalidInput(
                "phase model: phi_e must differ from phi_g (zero readout contrast)".into(),
            ));
        }
        Ok(Self {
            phi_g,
            phi_e,
            phi_f,
        })
    }

    /// The g/e phase contrast `φ_e − φ_g`, radians.
    #[must_use]
    pub fn contrast_rad(&self) -> f64 {
        self.phi_e - self.phi_g
    }
}

/// Occupations of |g⟩, |e⟩, |f⟩: each in `[0, 1]`, summing to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Populations3 {
    /// Ground-state occupation, dimensionless.
    pub p_g: f64,
    /// Excited-state occupation, dimensionless.
    pub p_e: f64,
    /// Out-of-manifold (second excited) occupation, dimensionless.
    pub p_f: f64,
}

impl Populations3 {
    /// Validated constructor: each occupation in `[0, 1]`, sum within 1e−9
    /// of 1.
    pub fn new(p_g: f64, p_e: f64, p_f: f64) -> Result<Self> {
        for (name, p) in [("p_g", p_g), ("p_e", p_e), ("p_f", p_f)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidInput(format!(
                    "populations: {name} = {p} outside [0, 1]"
                )));
            }
        }
        let sum = p_g + p_e + p_f;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "populations: sum = {sum} differs from 1 beyond 1e-9"
            )));
        }
        Ok(Self { p_g, p_e, p_f })
    }

    /// Construct from solver output, snapping round-off-sized simplex
    /// violations (≤ [`SIMPLEX_SNAP_TOL`]) and rejecting anything larger as a
    /// degenerate (model-inconsistent) result.
    fn from_solver(p_g: f64, p_e: f64, p_f: f64) -> Result<Self> {
        let worst = [p_g, p_e, p_f]
            .iter()
            .map(|p| (-*p).max(*p - 1.0).max(0.0))
            .fold(0.0_f64, f64::max)
            .max((p_g + p_e + p_f - 1.0).abs());
        if worst > SIMPLEX_SNAP_TOL {
            return Err(Error::Degenerate(format!(
                "fitted populations leave the simplex by {worst:.2e}; \
                 the data are inconsistent with the three-level model"
            )));
        }
        let g = p_g.clamp(0.0, 1.0);
        let e = p_e.clamp(0.0, 1.0);
        let f = p_f.clamp(0.0, 1.0);
        let sum = g + e + f;
        Self::new(g / sum, e / sum, f / sum)
    }

    /// Populations after a perfect π pulse on the g↔e transition (swaps the
    /// g and e occupations). Applying it twice is the identity.
    #[must_use]
    pub fn after_pi_ge(&self) -> Self {
        Self {
            p_g: self.p_e,
            p_e: self.p_g,
            p_f: self.p_f,
        }
    }

    /// Populations after a perfect π pulse on the e↔f transition (swaps the
    /// e and f occupations). Applying it twice is the identity.
    #[must_use]
    pub fn after_pi_ef(&self) -> Self {
        Self {
            p_g: self.p_g,
            p_e: self.p_f,
            p_f: self.p_e,
        }
    }

    /// Qubit polarization `p_e − p_g` under the two-level reading (ignores
    /// any |f⟩ weight).
    #[must_use]
    pub fn polarization(&self) -> f64 {
        self.p_e - self.p_g
    }
}

/// Population-weighted transmitted phase `p_g·φ_g + p_e·φ_e + p_f·φ_f`,
/// radians.
///
/// This is the bare (no-pulse) readout; compose with
/// [`Populations3::after_pi_ge`] / [`Populations3::after_pi_ef`] for the
/// pulse-prefixed variants, or use [`four_measurements`] for all four at
/// once.
#[must_use]
pub fn readout_phase(pop: &Populations3, model: &PhaseModel) -> f64 {
    pop.p_g * model.phi_g + pop.p_e * model.phi_e + pop.p_f * model.phi_f
}

/// The four pulse-permuted readouts `[M₁, M₂, M₃, M₄]` of one prepared
/// state: bare, after π(e↔f), after π(g↔e), and after π(g↔e) then π(e↔f).
#[must_use]
pub fn four_measurements(pop: &Populations3, model: &PhaseModel) -> [f64; 4] {
    let swapped = pop.after_pi_ge();
    [
        readout_phase(pop, model),
        readout_phase(&pop.after_pi_ef(), model),
        readout_phase(&swapped, model),
        readout_phase(&swapped.after_pi_ef(), model),
    ]
}

/// One delay's four pulse-permuted readouts, as consumed by
/// [`solve_phase_contrast`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseQuartet {
    /// Preparation delay before the readouts, seconds. Only its ordering
    /// matters: the longest delay is the closure point where the
    /// out-of-manifold population is taken to have decayed away.
    pub delay_s: f64,
    /// `[M₁, M₂, M₃, M₄]` in the order of [`four_measurements`], radians.
    pub m: [f64; 4],
}

/// Joint solution of the four-readout system across delays.
#[derive(Debug, Clone)]
pub struct ContrastSolution {
    /// The three recovered pure-state phases, radians.
    pub model: PhaseModel,
    /// The g/e phase contrast `φ_e − φ_g`, radians — the calibration factor
    /// used by [`phase_pair_to_z`].
    pub contrast_rad: f64,
    /// Recovered level populations, one per input quartet, input order.
    pub populations: Vec<Populations3>,
    /// Root-mean-square residual of the 4·n reconstructed readouts against
    /// the measured ones, radians.
    pub residual_rms_rad: f64,
}

/// Per-delay linear combinations of a quartet used by the closed-form seed:
/// `u = M₁ − M₃`, `v = M₂ − M₄`, `a = M₁ + M₃`, `b = M₂ + M₄`.
#[derive(Debug, Clone, Copy)]
struct Combos {
    u: f64,
    v: f64,
    a: f64,
    b: f64,
}

impl Combos {
    fn of(m: &[f64; 4]) -> Self {
        Self {
            u: m[0] - m[2],
            v: m[1] - m[3],
            a: m[0] + m[2],
            b: m[1] + m[3],
        }
    }
}

/// Closed-form solution of the noiseless system; the Levenberg–Marquardt
/// polish starts here. Returns `(phi_g, phi_e, phi_f, populations)`.
///
/// `closure_idx` is the quartet taken to satisfy p_f = 0; with
/// `pf_zero_everywhere` all quartets are.
fn algebraic_seed(
    quartets: &[PhaseQuartet],
    closure_idx: usize,
    pf_zero_everywhere: bool,
) -> Result<(f64, f64, f64, Vec<[f64; 3]>)> {
    let combos: Vec<Combos> = quartets.iter().map(|q| Combos::of(&q.m)).collect();
    let scale = quartets
        .iter()
        .flat_map(|q| q.m.iter().map(|m| m.abs()))
        .fold(0.0_f64, f64::max)
        .max(1.0);

    // Pooled ratio r = (φ_g − φ_e)/(φ_g − φ_f) from u = d·(φ_g − φ_e),
    // v = d·(φ_g − φ_f), d = p_g − p_e; both identities hold at every delay
    // regardless of p_f.
    let uu: f64 = combos.iter().map(|c| c.u * c.u).sum();
    let uv: f64 = combos.iter().map(|c| c.u * c.v).sum();
    let vv: f64 = combos.iter().map(|c| c.v * c.v).sum();
    if uu.sqrt() < DEGENERACY_TOL * scale {
        return Err(Error::Degenerate(
            "phase solve: M1 − M3 vanishes at every delay — either the g/e \
             populations are balanced throughout or the g/e phase contrast is \
             zero; the contrast cannot be anchored"
                .into(),
        ));
    }

    let at_closure = combos[closure_idx];
    // At the closure delay p_f = 0, p_g + p_e = 1, so a = φ_g + φ_e and
    // b = φ_g + φ_f exactly, giving b − a = φ_f − φ_e.
    let delta = at_closure.b - at_closure.a;
    // c1 = φ_g − φ_e. With c2 = φ_g − φ_f and the closure identity
    // c1 − c2 = φ_f − φ_e = delta: c1 = r·delta/(r − 1) when c2 ≠ 0, and
    // plain delta when v ≡ 0 (φ_f = φ_g, i.e. c2 = 0).
    let c1 = if vv.sqrt() < DEGENERACY_TOL * scale {
        delta
    } else {
        let r = uv / vv;
        if (r - 1.0).abs() < DEGENERACY_TOL {
            return Err(Error::Degenerate(
                "phase solve: the e and f readout phases coincide, making the \
                 four-readout system rank-deficient"
                    .into(),
            ));
        }
        r * delta / (r - 1.0)
    };
    if c1.abs() < DEGENERACY_TOL {
        return Err(Error::Degenerate(
            "phase solve: recovered g/e phase contrast is zero".into(),
        ));
    }

    let phi_g = (at_closure.a + c1) / 2.0;
    let phi_e = at_closure.a - phi_g;
    let phi_f = at_closure.b - phi_g;

    // Per-delay populations. The sums drift away from the closure values
    // affinely in p_f: a_j − a_cl = p_f·(2φ_f − a_cl),
    // b_j − b_cl = p_f·(2φ_e − b_cl); use whichever lever arm is larger.
    let lever_a = 2.0 * phi_f - at_closure.a;
    let lever_b = 2.0 * phi_e - at_closure.b;
    let mut pops = Vec::with_capacity(quartets.len());
    for (j, c) in combos.iter().enumerate() {
        let p_f = if pf_zero_everywhere || j == closure_idx {
            0.0
        } else if lever_a.abs() >= lever_b.abs() {
            if lever_a.abs() < DEGENERACY_TOL {
                return Err(Error::Degenerate(
                    "phase solve: the e and f readout phases coincide, making \
                     the four-readout system rank-deficient"
                        .into(),
                ));
            }
            (c.a - at_closure.a) / lever_a
        } else {
            (c.b - at_closure.b) / lever_b
        };
        let p_f = p_f.clamp(0.0, 1.0);
        let d = c.u / c1; // p_g − p_e
        let p_g = ((1.0 - p_f + d) / 2.0).clamp(0.0, 1.0);
        let p_e = ((1.0 - p_f - d) / 2.0).clamp(0.0, 1.0);
        pops.push([p_g, p_e, p_f]);
    }
    Ok((phi_g, phi_e, phi_f, pops))
}

/// Solve the four-readout system jointly across delays for the pure-state
/// phases and per-delay populations.
///
/// Closure: the longest delay is taken to have no remaining out-of-manifold
/// population (`p_f = 0`, `p_g + p_e = 1`) — the |f⟩ state decays much
/// faster than the delays are spaced. With `assume_pf_zero_at_last = false`
/// that assumption is instead applied at *every* delay, reducing the system
/// to its two-level form (useful when the preparation never touches |f⟩).
///
/// Requires at least two delays. The exact closed-form solution of the
/// noiseless system seeds a least-squares polish over all `4·n` readouts, so
/// overdetermined noisy systems are reconciled in the ordinary-least-squares
/// sense. Degenerate geometries — vanishing g/e contrast, balanced g/e
/// populations at every delay, or coinciding e/f phases — are reported as
/// [`Error::Degenerate`].
pub fn solve_phase_contrast(
    quartets: &[PhaseQuartet],
    assume_pf_zero_at_last: bool,
) -> Result<ContrastSolution> {
    if quartets.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "phase solve needs at least 2 delays, got {}",
            quartets.len()
        )));
    }
    for q in quartets {
        if !q.delay_s.is_finite() || q.m.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidInput(
                "phase solve: delays and readouts must be finite".into(),
            ));
        }
    }
    let closure_idx = quartets
        .iter()
        .enumerate()
        .max_by(|(_, a), (_, b)| a.delay_s.total_cmp(&b.delay_s))
        .map(|(i, _)| i)
        .expect("non-empty");
    let pf_zero_everywhere = !assume_pf_zero_at_last;

    let (phi_g0, phi_e0, phi_f0, pops0) =
        algebraic_seed(quartets, closure_idx, pf_zero_everywhere)?;

    // Polish parameterization: the three phases, the closure delay's
    // polarization x (p_g = (1+x)/2), and for every other delay either its
    // polarization alone (two-level mode) or its (p_g, p_e) pair. p_f is
    // always the simplex remainder, so the closures hold exactly throughout.
    let n = quartets.len();
    let mut init = vec![phi_g0, phi_e0, phi_f0];
    for (j, p) in pops0.iter().enumerate() {
        if j == closure_idx {
            init.push(p[0] - p[1]);
        } else if pf_zero_everywhere {
            init.push(p[0] - p[1]);
        } else {
            init.push(p[0]);
            init.push(p[1]);
        }
    }

    let unpack = |params: &[f64]| -> (PhaseModel, Vec<[f64; 3]>) {
        let model = PhaseModel {
            phi_g: params[0],
            phi_e: params[1],
            phi_f: params[2],
        };
        let mut pops = Vec::with_capacity(n);
        let mut k = 3;
        for j in 0..n {
            if j == closure_idx || pf_zero_everywhere {
                let x = params[k];
                k += 1;
                pops.push([(1.0 + x) / 2.0, (1.0 - x) / 2.0, 0.0]);
            } else {
                let (g, e) = (params[k], params[k + 1]);
                k += 2;
                pops.push([g, e, 1.0 - g - e]);
            }
        }
        (model, pops)
    };

    let residuals = |params: &[f64]| -> Result<Vec<f64>> {
        let (model, pops) = unpack(params);
        let mut r = Vec::with_capacity(4 * n);
        for (q, p) in quartets.iter().zip(&pops) {
            // Direct mixing (not via Populations3) so the optimizer may probe
            // slightly outside the simplex while searching.
            let m1 = p[0] * model.phi_g + p[1] * model.phi_e + p[2] * model.phi_f;
            let m2 = p[0] * model.phi_g + p[2] * model.phi_e + p[1] * model.phi_f;
            let m3 = p[1] * model.phi_g + p[0] * model.phi_e + p[2] * model.phi_f;
            let m4 = p[1] * model.phi_g + p[2] * model.phi_e + p[0] * model.phi_f;
            r.push(m1 - q.m[0]);
            r.push(m2 - q.m[1]);
            r.push(m3 - q.m[2]);
            r.push(m4 - q.m[3]);
        }
        Ok(r)
    };

    let fit = fit_least_squares(residuals, &init, &FitOptions::default())?;
    if !fit.converged {
        return Err(Error::FitDidNotConverge(
            "phase solve: least-squares polish hit its iteration cap".into(),
        ));
    }
    let (model_raw, pops_raw) = unpack(&fit.params);
    if (model_raw.phi_e - model_raw.phi_g).abs() < DEGENERACY_TOL {
        return Err(Error::Degenerate(
            "phase solve: fitted g/e phase contrast is zero".into(),
        ));
    }
    let model = PhaseModel::new(model_raw.phi_g, model_raw.phi_e, model_raw.phi_f)?;
    let populations = pops_raw
        .iter()
        .map(|p| Populations3::from_solver(p[0], p[1], p[2]))
        .collect::<Result<Vec<_>>>()?;
    Ok(ContrastSolution {
        model,
        contrast_rad: model.contrast_rad(),
        populations,
        residual_rms_rad: (fit.cost / (4 * n) as f64).sqrt(),
    })
}

/// Convert a paired readout into a qubit polarization.
///
/// `m0` is the bare readout phase, `m_pi` the readout after a π pulse on
/// g↔e; their difference is `(p_e − p_g)(φ_e − φ_g)`, so dividing by the
/// calibrated contrast returns the polarization `Z = p_e − p_g` under the
/// two-level closure. The contrast must be nonzero.
pub fn phase_pair_to_z(m0: f64, m_pi: f64, contrast_rad: f64) -> Result<f64> {
    if !(m0.is_finite() && m_pi.is_finite() && contrast_rad.is_finite()) {
        return Err(Error::InvalidInput(
            "phase pair: readouts and contrast must be finite".into(),
        ));
    }
    if contrast_rad == 0.0 {
        return Err(Error::InvalidInput(
            "phase pair: contrast must be nonzero".into(),
        ));
    }
    Ok((m0 - m_pi) / contrast_rad)
}

/// Least-squares polynomial smoothing of a contrast-versus-frequency
/// calibration table.
///
/// Fits a single polynomial of the given `order` (see
/// [`DEFAULT_SMOOTHING_ORDER`]) to `(freq_hz, contrast_rad)` over the
/// frequency axis mapped to `[−1, 1]`, and returns the fitted contrast at
/// each input frequency. Needs at least `order + 1` points with a nonzero
/// frequency span; an exactly polynomial table of degree ≤ `order` is
/// reproduced to round-off.
pub fn smooth_contrast_table(
    freq_hz: &[f64],
    contrast_rad: &[f64],
    order: usize,
) -> Result<Vec<f64>> {
    if freq_hz.len() != contrast_rad.len() {
        return Err(Error::InvalidInput(format!(
            "contrast smoothing: {} frequencies but {} contrasts",
            freq_hz.len(),
            contrast_rad.len()
        )));
    }
    if freq_hz.len() < order + 1 {
        return Err(Error::InvalidInput(format!(
            "contrast smoothing: order {order} needs at least {} points, got {}",
            order + 1,
            freq_hz.len()
        )));
    }
    if freq_hz.iter().chain(contrast_rad).any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput(
            "contrast smoothing: inputs must be finite".into(),
        ));
    }
    let (min, max) = freq_hz
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &f| {
            (lo.min(f), hi.max(f))
        });
    if max <= min {
        return Err(Error::InvalidInput(
            "contrast smoothing: frequency axis has zero span".into(),
        ));
    }
    let center = 0.5 * (min + max);
    let half_span = 0.5 * (max - min);
    let xi: Vec<f64> = freq_hz.iter().map(|f| (f - center) / half_span).collect();

    let n = xi.len();
    let p = order + 1;
    let mut design = DMatrix::zeros(n, p);
    for (i, &x) in xi.iter().enumerate() {
        let mut pow = 1.0;
        for j in 0..p {
            design[(i, j)] = pow;
            pow *= x;
        }
    }
    let y = DVector::from_column_slice(contrast_rad);
    let (beta, _) = solve_weighted_linear(&design, &y, &vec![1.0; n])?;
    Ok(xi
        .iter()
        .map(|&x| {
            // Horner evaluation of the fitted polynomial.
            (0..p).rev().fold(0.0, |acc, j| acc * x + beta[j])
        })
        .collect())
}
