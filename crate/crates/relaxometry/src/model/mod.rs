//! Polarization-exchange (Solomon) rate model for one qubit coupled to a set
//! of discrete two-level defects.
//!
//! # State and dynamics
//!
//! The qubit polarization `Z = p_e − p_g` and each defect polarization `p_k`
//! obey coupled linear rate equations:
//!
//! ```text
//! dZ/dt   = −Γ_q   (Z   − Z_eq)   − Σ_k Γ_qt,k (Z − p_k)
//! dp_k/dt = −Γ_t,k (p_k − p_eq,k) −     Γ_qt,k (p_k − Z)
//! ```
//!
//! `Γ_q` is the qubit's background relaxation rate toward its thermal
//! equilibrium `Z_eq`, `Γ_t,k` the defect's own relaxation rate toward
//! `p_eq,k`, and `Γ_qt,k` the resonant polarization-exchange rate between
//! qubit and defect `k`.
//!
//! # Exchange rate
//!
//! For a transverse coupling `g` (Hz) and a defect dephasing linewidth `Γ₂`
//! (Hz, half width at half maximum of the exchange resonance), the exchange
//! rate at qubit–defect detuning `Δ` is the Lorentzian
//!
//! ```text
//! Γ_qt(Δ) = 2 g̃² Γ̃₂ / (Γ̃₂² + Δ̃²)        (x̃ ≡ 2π·x, rates in 1/s)
//! ```
//!
//! Angular conversion happens only inside [`gamma_qt`]; every public interface
//! stays in ordinary Hz.
//!
//! # Composite rates
//!
//! With all defects attached, the instantaneous decay obeys
//! `dZ/dt = −Z·Γ_Σ − Γ_δ` with
//!
//! ```text
//! Γ_Σ = Γ_q + Σ_k Γ_qt,k                     (state-independent)
//! Γ_δ = −Γ_q·Z_eq − Σ_k Γ_qt,k·p_k          (bath-state-dependent)
//! ```
//!
//! so `Γ_Σ` is what a fast repeated slope measurement sees, while `Γ_δ`
//! encodes the current defect polarizations.

mod propagator;

pub use propagator::{propagate, AffinePropagator, PinnedPropagator, SegmentOp};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Background (non-defect) properties of the qubit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QubitParams {
    /// Qubit transition frequency in Hz (the sweep variable in spectroscopy).
    pub freq_hz: f64,
    /// Background relaxation rate toward `z_eq`, in 1/s.
    pub gamma_q_per_s: f64,
    /// Thermal-equilibrium polarization, in `[-1, 1]`.
    pub z_eq: f64,
}

/// One discrete two-level defect coupled to the qubit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TlsParams {
    /// Defect transition frequency in Hz.
    pub freq_hz: f64,
    /// Transverse qubit–defect coupling in Hz.
    pub g_hz: f64,
    /// Defect dephasing linewidth in Hz (HWHM of the exchange resonance).
    pub gamma2_hz: f64,
    /// Defect relaxation rate toward `p_eq`, in 1/s.
    pub gamma_t_per_s: f64,
    /// Defect thermal-equilibrium polarization, in `[-1, 1]`.
    pub p_eq: f64,
}

impl TlsParams {
    /// Build a defect whose on-resonance exchange rate equals
    /// `gamma_qt_per_s`, given the linewidth.
    ///
    /// Inverts `Γ_qt(0) = 2·(2πg)²/(2πΓ₂)`, which is convenient when a
    /// scenario specifies the exchange rate directly rather than a coupling.
    pub fn from_exchange_rate(
        freq_hz: f64,
        gamma_qt_per_s: f64,
        gamma2_hz: f64,
        gamma_t_per_s: f64,
        p_eq: f64,
    ) -> Result<Self> {
        if gamma2_hz <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "gamma2_hz must be positive, got {gamma2_hz}"
            )));
        }
        if gamma_qt_per_s < 0.0 {
            return Err(Error::InvalidInput(format!(
                "exchange rate must be non-negative, got {gamma_qt_per_s}"
            )));
        }
        let gamma2_ang = TAU * gamma2_hz;
        let g_ang = (gamma_qt_per_s * gamma2_ang / 2.0).sqrt();
        Ok(Self {
            freq_hz,
            g_hz: g_ang / TAU,
            gamma2_hz,
            gamma_t_per_s,
            p_eq,
        })
    }
}

/// Pair of directed qubit relaxation rates.
///
/// `Γ_↓` drives `|e⟩ → |g⟩` and `Γ_↑` the reverse. The observable combinations
/// are the total rate `Γ_Σ = Γ_↓ + Γ_↑` (inverse lifetime) and the imbalance
/// `Γ_δ = Γ_↓ − Γ_↑`, giving `dZ/dt = −Z·Γ_Σ − Γ_δ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionRates {
    /// Downward (emission) rate in 1/s.
    pub gamma_down_per_s: f64,
    /// Upward (absorption) rate in 1/s.
    pub gamma_up_per_s: f64,
}

impl TransitionRates {
    /// Validate and construct; both rates must be non-negative and finite.
    pub fn new(gamma_down_per_s: f64, gamma_up_per_s: f64) -> Result<Self> {
        if !gamma_down_per_s.is_finite() || !gamma_up_per_s.is_finite() {
            return Err(Error::InvalidInput(
                "transition rates must be finite".into(),
            ));
        }
        if gamma_down_per_s < 0.0 || gamma_up_per_s < 0.0 {
            return Err(Error::InvalidInput(format!(
                "transition rates must be non-negative, got down={gamma_down_per_s}, up={gamma_up_per_s}"
            )));
        }
        Ok(Self {
            gamma_down_per_s,
            gamma_up_per_s,
        })
    }

    /// Total relaxation rate `Γ_Σ = Γ_↓ + Γ_↑` (1/s); this is `1/T1`.
    pub fn gamma_sigma_per_s(&self) -> f64 {
        self.gamma_down_per_s + self.gamma_up_per_s
    }

    /// Rate imbalance `Γ_δ = Γ_↓ − Γ_↑` (1/s).
    pub fn gamma_delta_per_s(&self) -> f64 {
        self.gamma_down_per_s - self.gamma_up_per_s
    }
}

/// Equilibrium polarization implied by a pair of directed rates:
/// `Z_eq = −Γ_δ / Γ_Σ`.
///
/// Errors if both rates are zero (no steady state).
pub fn equilibrium_z(rates: TransitionRates) -> Result<f64> {
    let sigma = rates.gamma_sigma_per_s();
    if sigma <= 0.0 {
        return Err(Error::Degenerate(
            "equilibrium undefined when gamma_sigma is zero".into(),
        ));
    }
    Ok(-rates.gamma_delta_per_s() / sigma)
}

/// Full model environment: one qubit plus any number of defects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub qubit: QubitParams,
    #[serde(default)]
    pub tls: Vec<TlsParams>,
    /// Residual exchange rate while the qubit is driven out of the `{g,e}`
    /// manifold (state preparation and readout), in 1/s. Zero by default:
    /// pumping/readout detunes the qubit far enough that exchange stops.
    #[serde(default)]
    pub gamma_qt_eff_per_s: f64,
}

impl Environment {
    /// Validate all parameters (finite, rates non-negative, linewidths
    /// positive, equilibria in `[-1, 1]`).
    pub fn validate(&self) -> Result<()> {
        let q = &self.qubit;
        for (name, v) in [
            ("qubit.freq_hz", q.freq_hz),
            ("qubit.gamma_q_per_s", q.gamma_q_per_s),
            ("qubit.z_eq", q.z_eq),
            ("gamma_qt_eff_per_s", self.gamma_qt_eff_per_s),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidInput(format!("{name} must be finite, got {v}")));
            }
        }
        if q.gamma_q_per_s < 0.0 {
            return Err(Error::InvalidInput(format!(
                "qubit.gamma_q_per_s must be non-negative, got {}",
                q.gamma_q_per_s
            )));
        }
        if !(-1.0..=1.0).contains(&q.z_eq) {
            return Err(Error::InvalidInput(format!(
                "qubit.z_eq must lie in [-1, 1], got {}",
                q.z_eq
            )));
        }
        if self.gamma_qt_eff_per_s < 0.0 {
            return Err(Error::InvalidInput(format!(
                "gamma_qt_eff_per_s must be non-negative, got {}",
                self.gamma_qt_eff_per_s
            )));
        }
        for (k, t) in self.tls.iter().enumerate() {
            for (name, v) in [
                ("freq_hz", t.freq_hz),
                ("g_hz", t.g_hz),
                ("gamma2_hz", t.gamma2_hz),
                ("gamma_t_per_s", t.gamma_t_per_s),
                ("p_eq", t.p_eq),
            ] {
                if !v.is_finite() {
                    return Err(Error::InvalidInput(format!(
                        "tls[{k}].{name} must be finite, got {v}"
                    )));
                }
            }
            if t.g_hz < 0.0 {
                return Err(Error::InvalidInput(format!(
                    "tls[{k}].g_hz must be non-negative, got {}",
                    t.g_hz
                )));
            }
            if t.gamma2_hz <= 0.0 {
                return Err(Error::InvalidInput(format!(
                    "tls[{k}].gamma2_hz must be positive, got {}",
                    t.gamma2_hz
                )));
            }
            if t.gamma_t_per_s < 0.0 {
                return Err(Error::InvalidInput(format!(
                    "tls[{k}].gamma_t_per_s must be non-negative, got {}",
                    t.gamma_t_per_s
                )));
            }
            if !(-1.0..=1.0).contains(&t.p_eq) {
                return Err(Error::InvalidInput(format!(
                    "tls[{k}].p_eq must lie in [-1, 1], got {}",
                    t.p_eq
                )));
            }
        }
        Ok(())
    }

    /// Exchange rate `Γ_qt,k` (1/s) of every defect at the current qubit
    /// frequency.
    pub fn exchange_rates_per_s(&self) -> Vec<f64> {
        self.tls
            .iter()
            .map(|t| gamma_qt(self.qubit.freq_hz, t).expect("validated environment"))
            .collect()
    }

    /// Total rate `Γ_Σ = Γ_q + Σ_k Γ_qt,k` (1/s) at the current qubit
    /// frequency.
    pub fn gamma_sigma_per_s(&self) -> f64 {
        self.qubit.gamma_q_per_s + self.exchange_rates_per_s().iter().sum::<f64>()
    }

    /// Rate imbalance `Γ_δ = −Γ_q·Z_eq − Σ_k Γ_qt,k·p_k` (1/s) for the given
    /// defect polarizations.
    pub fn gamma_delta_per_s(&self, tls_polarizations: &[f64]) -> f64 {
        let rates = self.exchange_rates_per_s();
        let mut delta = -self.qubit.gamma_q_per_s * self.qubit.z_eq;
        for (c, p) in rates.iter().zip(tls_polarizations) {
            delta -= c * p;
        }
        delta
    }
}

/// Instantaneous polarizations of the coupled system.
///
/// Component `0` is the qubit `Z`; components `1..` are the defects in
/// environment order. All components live in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    z: f64,
    p: Vec<f64>,
}

/// Slack allowed when validating polarizations against `[-1, 1]`.
///
/// The exact propagator is contractive, so overshoot can only come from
/// floating-point rounding in the eigenbasis round trip; observed overshoot is
/// below 1e-13. Values inside the slack are clamped, values beyond it are
/// rejected as genuine errors.
const POLARIZATION_SLACK: f64 = 1e-9;

impl SystemState {
    /// Validate and construct a state; polarizations must be finite and in
    /// `[-1, 1]` (up to [`POLARIZATION_SLACK`], which is clamped away).
    pub fn new(z: f64, p: Vec<f64>) -> Result<Self> {
        let check = |name: &str, v: f64| -> Result<f64> {
            if !v.is_finite() || v.abs() > 1.0 + POLARIZATION_SLACK {
                return Err(Error::InvalidInput(format!(
                    "{name} must be a polarization in [-1, 1], got {v}"
                )));
            }
            Ok(v.clamp(-1.0, 1.0))
        };
        let z = check("z", z)?;
        let p = p
            .into_iter()
            .enumerate()
            .map(|(k, v)| check(&format!("p[{k}]"), v))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { z, p })
    }

    /// Thermal state of an environment: qubit at `z_eq`, every defect at its
    /// own `p_eq`.
    pub fn thermal(env: &Environment) -> Self {
        Self {
            z: env.qubit.z_eq,
            p: env.tls.iter().map(|t| t.p_eq).collect(),
        }
    }

    /// Qubit polarization.
    pub fn z(&self) -> f64 {
        self.z
    }

    /// Copy of this state with the qubit polarization replaced — the effect
    /// of an idealized instantaneous qubit reset or π rotation. Defect
    /// polarizations are untouched.
    pub fn with_z(&self, z: f64) -> Result<Self> {
        Self::new(z, self.p.clone())
    }

    /// Defect polarizations, in environment order.
    pub fn tls_polarizations(&self) -> &[f64] {
        &self.p
    }

    /// Number of defects.
    pub fn tls_count(&self) -> usize {
        self.p.len()
    }
}

const TAU: f64 = std::f64::consts::TAU;

/// Qubit–defect polarization-exchange rate (1/s) at the given qubit frequency.
///
/// `Γ_qt = 2 g̃² Γ̃₂ / (Γ̃₂² + Δ̃²)` with `x̃ = 2π·x` and `Δ = f_qubit − f_tls`.
/// On resonance this is `2g̃²/Γ̃₂`; at detuning `|Δ| = Γ₂` it is half that.
///
/// Errors if `gamma2_hz ≤ 0` (the resonance would have no width) or `g_hz < 0`.
pub fn gamma_qt(qubit_freq_hz: f64, tls: &TlsParams) -> Result<f64> {
    if tls.gamma2_hz <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "gamma2_hz must be positive, got {}",
            tls.gamma2_hz
        )));
    }
    if tls.g_hz < 0.0 {
        return Err(Error::InvalidInput(format!(
            "g_hz must be non-negative, got {}",
            tls.g_hz
        )));
    }
    let g = TAU * tls.g_hz;
    let gamma2 = TAU * tls.gamma2_hz;
    let delta = TAU * (qubit_freq_hz - tls.freq_hz);
    Ok(2.0 * g * g * gamma2 / (gamma2 * gamma2 + delta * delta))
}

/// Time derivative of the full system state under the exchange equations.
///
/// Returns `(dZ/dt, dp_k/dt ...)` in 1/s. With `interaction_on == false`
/// every `Γ_qt,k` is replaced by the environment's suppressed rate
/// `gamma_qt_eff_per_s` (zero by default), which models the qubit being
/// pumped or read out.
pub fn solomon_derivative(
    state: &SystemState,
    env: &Environment,
    interaction_on: bool,
) -> Result<(f64, Vec<f64>)> {
    env.validate()?;
    if state.tls_count() != env.tls.len() {
        return Err(Error::InvalidInput(format!(
            "state has {} defects but environment has {}",
            state.tls_count(),
            env.tls.len()
        )));
    }
    let q = &env.qubit;
    let rates: Vec<f64> = if interaction_on {
        env.exchange_rates_per_s()
    } else {
        vec![env.gamma_qt_eff_per_s; env.tls.len()]
    };
    let mut dz = -q.gamma_q_per_s * (state.z - q.z_eq);
    let mut dp = Vec::with_capacity(env.tls.len());
    for ((tls, c), p) in env.tls.iter().zip(&rates).zip(state.tls_polarizations()) {
        dz -= c * (state.z - p);
        dp.push(-tls.gamma_t_per_s * (p - tls.p_eq) - c * (p - state.z));
    }
    Ok((dz, dp))
}

/// Quasi-steady defect polarization under a constant qubit polarization `z`:
///
/// `p' = (Γ_t·p_eq + Γ_qt·z) / (Γ_t + Γ_qt)`.
///
/// This is the fixed point of the defect equation with the qubit clamped, the
/// short-time limit in which the defect has equilibrated but the bath drive
/// pattern has not changed.
pub fn tls_steady_state(tls: &TlsParams, gamma_qt_per_s: f64, z: f64) -> Result<f64> {
    let denom = tls.gamma_t_per_s + gamma_qt_per_s;
    if denom <= 0.0 {
        return Err(Error::Degenerate(
            "tls steady state undefined when gamma_t + gamma_qt is zero".into(),
        ));
    }
    Ok((tls.gamma_t_per_s * tls.p_eq + gamma_qt_per_s * z) / denom)
}

/// Duty-cycle description of a periodic measurement block, as seen by a slow
/// defect.
///
/// Over one block the defect sees the qubit in three regimes:
/// * a fraction `eta` with exchange fully on and the qubit averaging `zbar`
///   (idle windows and interaction delays),
/// * a fraction `epsilon` with exchange suppressed to `Γ_qt_eff` and the qubit
///   parked at `z_pump` (pumping and readout),
/// * the remainder with exchange suppressed and no defined qubit drive
///   (trailing dead time), which contributes nothing when `Γ_qt_eff = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DutyCycle {
    /// Interaction-on time fraction of the block, in `[0, 1]`.
    pub eta: f64,
    /// Suppressed-interaction (pump + readout) time fraction, in `[0, 1]`.
    pub epsilon: f64,
    /// Qubit polarization clamp during pump/readout windows.
    pub z_pump: f64,
    /// Residual exchange rate during pump/readout windows, 1/s.
    pub gamma_qt_eff_per_s: f64,
}

impl DutyCycle {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.eta)
            || !(0.0..=1.0).contains(&self.epsilon)
            || self.eta + self.epsilon > 1.0 + 1e-12
        {
            return Err(Error::InvalidInput(format!(
                "duty fractions must satisfy 0 <= eta, epsilon and eta + epsilon <= 1, got eta={}, epsilon={}",
                self.eta, self.epsilon
            )));
        }
        if self.gamma_qt_eff_per_s < 0.0 {
            return Err(Error::InvalidInput(format!(
                "gamma_qt_eff_per_s must be non-negative, got {}",
                self.gamma_qt_eff_per_s
            )));
        }
        Ok(())
    }
}

/// Saturated defect polarization under a repeated measurement block whose
/// interaction-on windows average qubit polarization `zbar`:
///
/// `p* = (Γ_t·p_eq + Γ_qt·η·z̄ + Γ_qt_eff·ε·z_pump) / (Γ_t + Γ_qt·η + Γ_qt_eff·ε)`.
///
/// Evaluated with the high-half `z̄` this is the maximum block-averaged defect
/// polarization the sequence can pump; with the low-half `z̄`, the minimum.
pub fn tls_duty_cycled_fixed_point(
    tls: &TlsParams,
    gamma_qt_per_s: f64,
    duty: &DutyCycle,
    zbar: f64,
) -> Result<f64> {
    duty.validate()?;
    let denom =
        tls.gamma_t_per_s + gamma_qt_per_s * duty.eta + duty.gamma_qt_eff_per_s * duty.epsilon;
    if denom <= 0.0 {
        return Err(Error::Degenerate(
            "duty-cycled fixed point undefined when all defect drive rates vanish".into(),
        ));
    }
    Ok((tls.gamma_t_per_s * tls.p_eq
        + gamma_qt_per_s * duty.eta * zbar
        + duty.gamma_qt_eff_per_s * duty.epsilon * duty.z_pump)
        / denom)
}

/// Defect polarizability: the swing `p_max − p_min` the sequence imprints on
/// the defect per unit of qubit polarization contrast,
///
/// `p_Δ = Γ_qt·η / (Γ_t + Γ_qt·η + Γ_qt_eff·ε) · (z̄_H − z̄_L)`.
///
/// A long-lived defect driven hard (`Γ_qt·η ≫ Γ_t`) approaches the full
/// contrast; a fast-relaxing defect barely moves.
pub fn tls_polarizability(
    tls: &TlsParams,
    gamma_qt_per_s: f64,
    duty: &DutyCycle,
    zbar_h: f64,
    zbar_l: f64,
) -> Result<f64> {
    duty.validate()?;
    let denom =
        tls.gamma_t_per_s + gamma_qt_per_s * duty.eta + duty.gamma_qt_eff_per_s * duty.epsilon;
    if denom <= 0.0 {
        return Err(Error::Degenerate(
            "polarizability undefined when all defect drive rates vanish".into(),
        ));
    }
    Ok(gamma_qt_per_s * duty.eta / denom * (zbar_h - zbar_l))
}

/// Total-rate spectrum `Γ_Σ(f) = Γ_q + Σ_k Γ_qt,k(f)` (1/s) — a constant
/// background plus one Lorentzian per defect.
pub fn gamma_sigma_model(qubit_freq_hz: f64, gamma_q_per_s: f64, tls: &[TlsParams]) -> Result<f64> {
    let mut total = gamma_q_per_s;
    for t in tls {
        total += gamma_qt(qubit_freq_hz, t)?;
    }
    Ok(total)
}

/// Pumped rate-imbalance spectrum `Γ_δδ(f) = Γ_δL − Γ_δH` (1/s): how much the
/// measured imbalance differs between the bath's low- and high-polarized
/// saturated states,
///
/// `Γ_δδ = Σ_k Γ_qt,k²·η / (Γ_t,k + Γ_qt,k·η + Γ_qt_eff·ε) · (z̄_H − z̄_L)`.
///
/// Each defect contributes its exchange rate times its own polarizability, so
/// the spectrum peaks only where defects are both coupled and long-lived.
pub fn gamma_deltadelta_model(
    qubit_freq_hz: f64,
    tls: &[TlsParams],
    duty: &DutyCycle,
    zbar_h: f64,
    zbar_l: f64,
) -> Result<f64> {
    let mut total = 0.0;
    for t in tls {
        let c = gamma_qt(qubit_freq_hz, t)?;
        total += c * tls_polarizability(t, c, duty, zbar_h, zbar_l)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sample_tls() -> TlsParams {
        TlsParams {
            freq_hz: 250.0e6,
            g_hz: 50.0e3,
            gamma2_hz: 1.7e6,
            gamma_t_per_s: 1.0e3,
            p_eq: -0.1,
        }
    }

    #[test]
    fn exchange_rate_on_resonance_matches_closed_form() {
        // 2·(2π·50 kHz)²/(2π·1.7 MHz) = 1.848e4 1/s.
        let tls = sample_tls();
        let rate = gamma_qt(tls.freq_hz, &tls).unwrap();
        assert_relative_eq!(rate, 1.848e4, max_relative = 1e-3);
    }

    #[test]
    fn exchange_rate_halves_at_one_linewidth_detuning() {
        let tls = sample_tls();
        let on = gamma_qt(tls.freq_hz, &tls).unwrap();
        let off = gamma_qt(tls.freq_hz + tls.gamma2_hz, &tls).unwrap();
        assert_relative_eq!(off, on / 2.0, max_relative = 1e-12);
        // Symmetric in the sign of the detuning.
        let off_neg = gamma_qt(tls.freq_hz - tls.gamma2_hz, &tls).unwrap();
        assert_relative_eq!(off, off_neg, max_relative = 1e-12);
    }

    #[test]
    fn exchange_rate_peak_value_is_2g2_over_gamma2_angular() {
        let tls = sample_tls();
        let on = gamma_qt(tls.freq_hz, &tls).unwrap();
        let g_ang = TAU * tls.g_hz;
        let gamma2_ang = TAU * tls.gamma2_hz;
        assert_relative_eq!(on, 2.0 * g_ang * g_ang / gamma2_ang, max_relative = 1e-14);
    }

    #[test]
    fn exchange_rate_rejects_nonpositive_linewidth() {
        let mut tls = sample_tls();
        tls.gamma2_hz = 0.0;
        assert!(gamma_qt(tls.freq_hz, &tls).is_err());
    }

    #[test]
    fn equilibrium_follows_rate_imbalance() {
        // Γ_↓ = 2, Γ_↑ = 1 → Z_eq = −1/3.
        let rates = TransitionRates::new(2.0, 1.0).unwrap();
        assert_relative_eq!(equilibrium_z(rates).unwrap(), -1.0 / 3.0, epsilon = 1e-15);
        // Equal rates → unpolarized equilibrium.
        let rates = TransitionRates::new(5.0, 5.0).unwrap();
        assert_relative_eq!(equilibrium_z(rates).unwrap(), 0.0, epsilon = 1e-15);
        assert!(equilibrium_z(TransitionRates::new(0.0, 0.0).unwrap()).is_err());
    }

    #[test]
    fn derivative_matches_hand_computed_example() {
        // Γ_qt = 10/ms, Γ_q = 0.5/ms, Z_eq = −0.2, p_eq = −0.1, Z = 1,
        // p = −0.1 → dZ/dt = −0.5·1.2 − 10·1.1 = −11.6/ms.
        let tls = TlsParams::from_exchange_rate(250.0e6, 10.0e3, 1.0e6, 1.0e3, -0.1).unwrap();
        let env = Environment {
            qubit: QubitParams {
                freq_hz: 250.0e6,
                gamma_q_per_s: 0.5e3,
                z_eq: -0.2,
            },
            tls: vec![tls],
            gamma_qt_eff_per_s: 0.0,
        };
        let state = SystemState::new(1.0, vec![-0.1]).unwrap();
        let (dz, dp) = solomon_derivative(&state, &env, true).unwrap();
        assert_relative_eq!(dz, -11.6e3, max_relative = 1e-9);
        // dp/dt = −Γ_t(p − p_eq) − Γ_qt(p − Z) = 0 − 10/ms·(−1.1) = 11/ms.
        assert_relative_eq!(dp[0], 11.0e3, max_relative = 1e-9);
    }

    #[test]
    fn derivative_with_interaction_off_uses_suppressed_rate() {
        let tls = sample_tls();
        let env = Environment {
            qubit: QubitParams {
                freq_hz: tls.freq_hz,
                gamma_q_per_s: 100.0,
                z_eq: 0.0,
            },
            tls: vec![tls],
            gamma_qt_eff_per_s: 0.0,
        };
        let state = SystemState::new(0.8, vec![-0.5]).unwrap();
        let (dz, dp) = solomon_derivative(&state, &env, false).unwrap();
        assert_relative_eq!(dz, -100.0 * 0.8, max_relative = 1e-12);
        // Defect decays only through its own Γ_t.
        assert_relative_eq!(
            dp[0],
            -tls.gamma_t_per_s * (-0.5 - tls.p_eq),
            max_relative = 1e-12
        );
    }

    #[test]
    fn coefficient_identities_hold_for_random_environments() {
        // dZ/dt regrouped as −Z·Γ_Σ − Γ_δ must match the direct form, with
        // Γ_Σ = Γ_q + ΣΓ_qt,k and Γ_δ = −Γ_q·Z_eq − ΣΓ_qt,k·p_k.
        use rand::{RngExt, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(7);
        for _ in 0..50 {
            let n = rng.random_range(0..5);
            let qubit_freq = 3.0e8;
            let tls: Vec<TlsParams> = (0..n)
                .map(|_| TlsParams {
                    freq_hz: qubit_freq + rng.random_range(-5.0e6..5.0e6),
                    g_hz: rng.random_range(0.0..8.0e4),
                    gamma2_hz: rng.random_range(1.0e5..5.0e6),
                    gamma_t_per_s: rng.random_range(0.0..1.0e4),
                    p_eq: rng.random_range(-1.0..1.0),
                })
                .collect();
            let env = Environment {
                qubit: QubitParams {
                    freq_hz: qubit_freq,
                    gamma_q_per_s: rng.random_range(0.0..1.0e3),
                    z_eq: rng.random_range(-1.0..1.0),
                },
                tls,
                gamma_qt_eff_per_s: 0.0,
            };
            let z = rng.random_range(-1.0..1.0);
            let p: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let state = SystemState::new(z, p.clone()).unwrap();
            let (dz, _) = solomon_derivative(&state, &env, true).unwrap();
            let regrouped = -z * env.gamma_sigma_per_s() - env.gamma_delta_per_s(&p);
            assert_relative_eq!(dz, regrouped, max_relative = 1e-12, epsilon = 1e-12);
        }
    }

    #[test]
    fn steady_state_averages_drive_and_equilibrium() {
        // Γ_t = Γ_qt, p_eq = −0.1, Z = 0.5 → p' = 0.2.
        let tls = TlsParams {
            gamma_t_per_s: 500.0,
            p_eq: -0.1,
            ..sample_tls()
        };
        let p = tls_steady_state(&tls, 500.0, 0.5).unwrap();
        assert_relative_eq!(p, 0.2, epsilon = 1e-15);
    }

    #[test]
    fn polarizability_at_matched_rates_is_half_contrast() {
        // Γ_qt·η = Γ_t with Γ_qt_eff = 0 → p_Δ = (z̄_H − z̄_L)/2.
        let tls = TlsParams {
            gamma_t_per_s: 700.0,
            ..sample_tls()
        };
        let duty = DutyCycle {
            eta: 0.7,
            epsilon: 0.25,
            z_pump: 0.0,
            gamma_qt_eff_per_s: 0.0,
        };
        let p = tls_polarizability(&tls, 1000.0, &duty, 1.0, 0.0).unwrap();
        assert_relative_eq!(p, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn deltadelta_with_instant_tls_relaxation_vanishes() {
        // Γ_t → ∞ (here: enormous compared to Γ_qt) → nothing is pumped.
        let tls = TlsParams {
            gamma_t_per_s: 1.0e12,
            ..sample_tls()
        };
        let duty = DutyCycle {
            eta: 0.7,
            epsilon: 0.25,
            z_pump: 0.0,
            gamma_qt_eff_per_s: 0.0,
        };
        let dd = gamma_deltadelta_model(tls.freq_hz, &[tls], &duty, 0.5, -0.5).unwrap();
        assert!(dd < 1e-3, "expected negligible pumping, got {dd}");
    }

    #[test]
    fn deltadelta_with_immortal_tls_equals_exchange_times_contrast() {
        // Γ_t = 0, Γ_qt_eff = 0 → Γ_δδ = Σ Γ_qt·(z̄_H − z̄_L); η cancels.
        let tls = TlsParams {
            gamma_t_per_s: 0.0,
            ..sample_tls()
        };
        let duty = DutyCycle {
            eta: 0.33,
            epsilon: 0.4,
            z_pump: 0.0,
            gamma_qt_eff_per_s: 0.0,
        };
        let c = gamma_qt(tls.freq_hz, &tls).unwrap();
        let dd = gamma_deltadelta_model(tls.freq_hz, &[tls], &duty, 0.4, -0.6).unwrap();
        assert_relative_eq!(dd, c * 1.0, max_relative = 1e-12);
    }

    #[test]
    fn deltadelta_decreases_with_faster_tls_relaxation() {
        let duty = DutyCycle {
            eta: 0.726,
            epsilon: 0.252,
            z_pump: 0.0,
            gamma_qt_eff_per_s: 0.0,
        };
        let mut last = f64::INFINITY;
        for gamma_t in [0.0, 1.0e2, 1.0e3, 1.0e4, 1.0e5] {
            let tls = TlsParams {
                gamma_t_per_s: gamma_t,
                ..sample_tls()
            };
            let dd = gamma_deltadelta_model(tls.freq_hz, &[tls], &duty, 0.5, -0.5).unwrap();
            assert!(dd < last, "Γ_δδ must fall monotonically with Γ_t");
            last = dd;
        }
    }

    #[test]
    fn state_validation_rejects_out_of_range_and_clamps_roundoff() {
        assert!(SystemState::new(1.5, vec![]).is_err());
        assert!(SystemState::new(f64::NAN, vec![]).is_err());
        assert!(SystemState::new(0.0, vec![-1.2]).is_err());
        let s = SystemState::new(1.0 + 1e-12, vec![-1.0 - 1e-12]).unwrap();
        assert_eq!(s.z(), 1.0);
        assert_eq!(s.tls_polarizations()[0], -1.0);
    }

    #[test]
    fn environment_validation_covers_each_field() {
        let mut env = Environment {
            qubit: QubitParams {
                freq_hz: 3.0e8,
                gamma_q_per_s: 100.0,
                z_eq: -0.2,
            },
            tls: vec![sample_tls()],
            gamma_qt_eff_per_s: 0.0,
        };
        assert!(env.validate().is_ok());
        env.qubit.z_eq = -1.4;
        assert!(env.validate().is_err());
        env.qubit.z_eq = -0.2;
        env.tls[0].gamma2_hz = -1.0;
        assert!(env.validate().is_err());
    }

    #[test]
    fn from_exchange_rate_round_trips() {
        let tls = TlsParams::from_exchange_rate(3.0e8, 1.0e4, 1.0e6, 1.0e3, 0.0).unwrap();
        let rate = gamma_qt(3.0e8, &tls).unwrap();
        assert_relative_eq!(rate, 1.0e4, max_relative = 1e-12);
    }
}
