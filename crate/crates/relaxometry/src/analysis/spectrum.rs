//! Spectrum-level fits: from per-frequency rate points to defect parameters.
//!
//! # Two stages
//!
//! 1. **Total rate.** `Γ_Σ(f) = Γ_q + Σ_k Γ_qt,k(f)` — a flat background
//!    plus one Lorentzian per defect. [`detect_peaks`] seeds the defect
//!    count and starting values; [`fit_gamma_sigma_spectrum`] refines
//!    `(f_k, g_k, Γ₂_k)` and `Γ_q` jointly.
//! 2. **Pumped imbalance.** Holding stage 1 fixed, [`fit_gamma_t`] fits each
//!    defect's intrinsic relaxation rate `Γ_t,k` to
//!
//!    ```text
//!    Γ_δδ(f) = Σ_k Γ_qt,k(f)²·η / (Γ_t,k + Γ_qt,k(f)·η) · (z̄_H − z̄_L)
//!    ```
//!
//!    using each point's own duty-cycle bookkeeping. `Γ_δδ` saturates as
//!    `Γ_t → 0`, so a defect much longer-lived than the drive rate is only
//!    bounded from above; `Γ_t` is therefore reported as a
//!    profile-likelihood interval (`Δχ² = 1`) rather than a bare point.
//!
//! [`polarizability_estimates`] reduces each point to the dimensionless
//! ratio `Γ_δδ / (2(Γ_Σ − Γ_q))`, a model-light summary of how polarizable
//! the bath is at that frequency.

use serde::{Deserialize, Serialize};

use crate::analysis::least_squares::{fit_least_squares, FitOptions};
use crate::analysis::record_pipeline::RelaxometryPoint;
use crate::error::{Error, Result};
use crate::model::{gamma_qt, TlsParams};

/// Upper search limit for a defect relaxation rate, 1/s. An interval whose
/// upper bound equals this cap is unbounded above by the data.
pub const GAMMA_T_SEARCH_CAP_PER_S: f64 = 1.0e9;

/// Starting values for one spectral peak.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakGuess {
    /// Peak center, Hz.
    pub freq_hz: f64,
    /// Coupling implied by the peak height, Hz.
    pub g_hz: f64,
    /// Linewidth implied by the peak width (half of FWHM), Hz.
    pub gamma2_hz: f64,
}

/// One defect from the total-rate fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FittedDefect {
    pub freq_hz: f64,
    pub freq_uncertainty_hz: f64,
    pub g_hz: f64,
    pub g_uncertainty_hz: f64,
    pub gamma2_hz: f64,
    pub gamma2_uncertainty_hz: f64,
}

/// Result of the total-rate stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumFit {
    /// Background relaxation rate, 1/s.
    pub gamma_q_per_s: f64,
    pub gamma_q_uncertainty_per_s: f64,
    /// Fitted defects, sorted by frequency.
    pub defects: Vec<FittedDefect>,
    /// Weighted sum of squared residuals.
    pub chi2: f64,
    /// Residual degrees of freedom.
    pub dof: usize,
}

/// Profile-likelihood estimate of one defect's relaxation rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TlsRateEstimate {
    /// Best-fit relaxation rate, 1/s.
    pub gamma_t_per_s: f64,
    /// Lower `Δχ² = 1` bound, 1/s; `0` when unbounded below.
    pub lower_per_s: f64,
    /// Upper `Δχ² = 1` bound, 1/s; [`GAMMA_T_SEARCH_CAP_PER_S`] when
    /// unbounded above.
    pub upper_per_s: f64,
}

/// Per-frequency bath polarizability summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarizabilityPoint {
    pub qubit_freq_hz: f64,
    /// `Γ_δδ / (2(Γ_Σ − Γ_q))`, clipped to `[0, 1]`.
    pub polarizability: f64,
    /// The same ratio before clipping.
    pub raw: f64,
    /// Whether the raw ratio fell outside `[0, 1]`.
    pub out_of_range: bool,
    /// Whether both `Γ_Σ − Γ_q` and `Γ_δδ` exceed twice their uncertainties;
    /// only significant points carry polarizability information.
    pub significant: bool,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Find candidate Lorentzian peaks in the total-rate spectrum.
///
/// Local maxima more than `3σ` above the median baseline are kept (with `σ`
/// the median reported point uncertainty), candidates closer than one
/// linewidth are merged into the taller one, and each survivor's height and
/// full width at half maximum seed `(g, Γ₂)`.
#[must_use]
pub fn detect_peaks(points: &[RelaxometryPoint]) -> Vec<PeakGuess> {
    if points.len() < 3 {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[a].qubit_freq_hz.total_cmp(&points[b].qubit_freq_hz));
    let f: Vec<f64> = order.iter().map(|&i| points[i].qubit_freq_hz).collect();
    let y: Vec<f64> = order.iter().map(|&i| points[i].gamma_sigma_per_s).collect();

    let baseline = median(&mut y.clone());
    let mut sigmas: Vec<f64> = order
        .iter()
        .map(|&i| points[i].gamma_sigma_uncertainty_per_s)
        .filter(|s| s.is_finite() && *s > 0.0)
        .collect();
    let noise = if sigmas.is_empty() {
        // No reported uncertainties: fall back to the median absolute
        // deviation of the spectrum itself.
        let mut dev: Vec<f64> = y.iter().map(|v| (v - baseline).abs()).collect();
        median(&mut dev).max(1e-12 * baseline.abs().max(1.0))
    } else {
        median(&mut sigmas)
    };
    let threshold = baseline + 3.0 * noise;

    // Half-maximum crossing on one side of a local maximum, linearly
    // interpolated; `None` when the spectrum never drops below the level
    // before the sweep edge.
    let crossing = |peak: usize, dir: isize, level: f64| -> Option<f64> {
        let mut j = peak as isize;
        loop {
            let next = j + dir;
            if next < 0 || next as usize >= y.len() {
                return None;
            }
            if y[next as usize] < level {
                let (y0, y1) = (y[j as usize], y[next as usize]);
                let (f0, f1) = (f[j as usize], f[next as usize]);
                let frac = (y0 - level) / (y0 - y1);
                return Some(f0 + frac * (f1 - f0));
            }
            j = next;
        }
    };

    struct Candidate {
        freq_hz: f64,
        height: f64,
        fwhm_hz: f64,
    }
    let mut candidates = Vec::new();
    for i in 1..y.len() - 1 {
        if y[i] >= y[i - 1] && y[i] > y[i + 1] && y[i] > threshold {
            let height = y[i] - baseline;
            let level = baseline + 0.5 * height;
            let left = crossing(i, -1, level);
            let right = crossing(i, 1, level);
            let fwhm = match (left, right) {
                (Some(l), Some(r)) => r - l,
                (Some(l), None) => 2.0 * (f[i] - l),
                (None, Some(r)) => 2.0 * (r - f[i]),
                (None, None) => f[y.len() - 1] - f[0],
            };
            candidates.push(Candidate {
                freq_hz: f[i],
                height,
                fwhm_hz: fwhm.max(f64::MIN_POSITIVE),
            });
        }
    }

    // Tallest first; drop candidates within one linewidth of an accepted one.
    candidates.sort_by(|a, b| b.height.total_cmp(&a.height));
    let mut accepted: Vec<Candidate> = Vec::new();
    for c in candidates {
        if accepted
            .iter()
            .all(|a| (c.freq_hz - a.freq_hz).abs() > a.fwhm_hz.max(c.fwhm_hz))
        {
            accepted.push(c);
        }
    }

    let mut guesses: Vec<PeakGuess> = accepted
        .into_iter()
        .map(|c| {
            let gamma2_hz = 0.5 * c.fwhm_hz;
            // height = 2·(2πg)²/(2πΓ₂) → g = √(height·π·Γ₂)/(2π).
            let g_hz = (c.height * std::f64::consts::PI * gamma2_hz).sqrt()
                / (2.0 * std::f64::consts::PI);
            PeakGuess {
                freq_hz: c.freq_hz,
                g_hz,
                gamma2_hz,
            }
        })
        .collect();
    guesses.sort_by(|a, b| a.freq_hz.total_cmp(&b.freq_hz));
    guesses
}

fn sigma_floor(values: impl Iterator<Item = f64>) -> f64 {
    1e-9 * values.fold(1.0_f64, |acc, v| acc.max(v.abs()))
}

/// Fit the flat-background-plus-Lorentzians model to the total-rate
/// spectrum.
///
/// `init` overrides peak detection with explicit starting values; passing
/// more peaks than the detector resolves is an
/// [`Error::OverParameterized`] — extra defects would only chase noise.
///
/// Frequencies are fitted as MHz-scale offsets from their starting values
/// and `(Γ_q, g, Γ₂)` in log space, so all parameters are O(1) for the
/// shared least-squares engine.
pub fn fit_gamma_sigma_spectrum(
    points: &[RelaxometryPoint],
    init: Option<&[PeakGuess]>,
) -> Result<SpectrumFit> {
    if points.len() < 2 {
        return Err(Error::InvalidInput(
            "spectrum fit needs at least two frequency points".into(),
        ));
    }
    for p in points {
        if !p.qubit_freq_hz.is_finite() || !p.gamma_sigma_per_s.is_finite() {
            return Err(Error::InvalidInput(
                "spectrum contains non-finite frequencies or rates".into(),
            ));
        }
    }
    let detected = detect_peaks(points);
    let guesses: Vec<PeakGuess> = match init {
        Some(list) => {
            if list.len() > detected.len() {
                return Err(Error::OverParameterized {
                    requested: list.len(),
                    resolvable: detected.len(),
                });
            }
            list.to_vec()
        }
        None => detected,
    };

    let floor = sigma_floor(points.iter().map(|p| p.gamma_sigma_per_s));
    let weights: Vec<f64> = points
        .iter()
        .map(|p| 1.0 / p.gamma_sigma_uncertainty_per_s.max(floor))
        .collect();

    if points.len() < 1 + 3 * guesses.len() + 1 {
        return Err(Error::OverParameterized {
            requested: guesses.len(),
            resolvable: (points.len().saturating_sub(2)) / 3,
        });
    }

    let mut baseline = median(&mut points.iter().map(|p| p.gamma_sigma_per_s).collect::<Vec<_>>());
    if !(baseline > 0.0) {
        baseline = 1.0;
    }
    let mut params = Vec::with_capacity(1 + 3 * guesses.len());
    params.push(baseline.ln());
    for g in &guesses {
        params.push(0.0); // frequency offset from the guess, MHz
        params.push(g.g_hz.max(1.0).ln());
        params.push(g.gamma2_hz.max(1.0).ln());
    }

    let model_at = |theta: &[f64], freq_hz: f64| -> Result<f64> {
        let mut total = theta[0].exp();
        for (k, guess) in guesses.iter().enumerate() {
            let tls = TlsParams {
                freq_hz: guess.freq_hz + theta[1 + 3 * k] * 1e6,
                g_hz: theta[2 + 3 * k].exp(),
                gamma2_hz: theta[3 + 3 * k].exp(),
                gamma_t_per_s: 0.0,
                p_eq: 0.0,
            };
            total += gamma_qt(freq_hz, &tls)?;
        }
        Ok(total)
    };
    let fit = fit_least_squares(
        |theta| {
            points
                .iter()
                .zip(&weights)
                .map(|(p, w)| Ok((model_at(theta, p.qubit_freq_hz)? - p.gamma_sigma_per_s) * w))
                .collect()
        },
        &params,
        &FitOptions::default(),
    )?;
    if !fit.converged {
        return Err(Error::FitDidNotConverge(
            "total-rate spectrum fit did not converge".into(),
        ));
    }
    let n_params = params.len();
    let dof = points.len() - n_params;
    let scale2 = if dof > 0 {
        (fit.cost / dof as f64).max(1.0)
    } else {
        1.0
    };
    // Singular covariance (exactly degenerate parameters) gives unbounded
    // uncertainties rather than an error: the point estimates still stand.
    let var = |j: usize| -> f64 {
        fit.covariance
            .as_ref()
            .map_or(f64::INFINITY, |c| (c[(j, j)] * scale2).max(0.0))
    };

    let gamma_q_per_s = fit.params[0].exp();
    let mut defects = Vec::with_capacity(guesses.len());
    for (k, guess) in guesses.iter().enumerate() {
        let g_hz = fit.params[2 + 3 * k].exp();
        let gamma2_hz = fit.params[3 + 3 * k].exp();
        defects.push(FittedDefect {
            freq_hz: guess.freq_hz + fit.params[1 + 3 * k] * 1e6,
            freq_uncertainty_hz: var(1 + 3 * k).sqrt() * 1e6,
            g_hz,
            g_uncertainty_hz: g_hz * var(2 + 3 * k).sqrt(),
            gamma2_hz,
            gamma2_uncertainty_hz: gamma2_hz * var(3 + 3 * k).sqrt(),
        });
    }
    defects.sort_by(|a, b| a.freq_hz.total_cmp(&b.freq_hz));

    Ok(SpectrumFit {
        gamma_q_per_s,
        gamma_q_uncertainty_per_s: gamma_q_per_s * var(0).sqrt(),
        defects,
        chi2: fit.cost,
        dof,
    })
}

/// Per-point inputs of the imbalance model, precomputed.
struct ImbalanceData {
    /// `Γ_qt,k(f_i)·η_i` for every point `i` and defect `k`.
    drive: Vec<Vec<f64>>,
    /// `Γ_qt,k(f_i)²·η_i·(z̄_H − z̄_L)_i`.
    strength: Vec<Vec<f64>>,
    y: Vec<f64>,
    inv_sigma: Vec<f64>,
}

impl ImbalanceData {
    fn build(points: &[RelaxometryPoint], fit: &SpectrumFit) -> Result<Self> {
        let floor = sigma_floor(points.iter().map(|p| p.gamma_deltadelta_per_s));
        let mut drive = Vec::with_capacity(points.len());
        let mut strength = Vec::with_capacity(points.len());
        let mut y = Vec::with_capacity(points.len());
        let mut inv_sigma = Vec::with_capacity(points.len());
        for p in points {
            let contrast = p.zbar_h - p.zbar_l;
            let mut drive_row = Vec::with_capacity(fit.defects.len());
            let mut strength_row = Vec::with_capacity(fit.defects.len());
            for d in &fit.defects {
                let tls = TlsParams {
                    freq_hz: d.freq_hz,
                    g_hz: d.g_hz,
                    gamma2_hz: d.gamma2_hz,
                    gamma_t_per_s: 0.0,
                    p_eq: 0.0,
                };
                let c = gamma_qt(p.qubit_freq_hz, &tls)?;
                drive_row.push(c * p.eta);
                strength_row.push(c * c * p.eta * contrast);
            }
            drive.push(drive_row);
            strength.push(strength_row);
            y.push(p.gamma_deltadelta_per_s);
            inv_sigma.push(1.0 / p.gamma_deltadelta_uncertainty_per_s.max(floor));
        }
        Ok(Self {
            drive,
            strength,
            y,
            inv_sigma,
        })
    }

    fn n_points(&self) -> usize {
        self.y.len()
    }

    /// Weighted residuals at defect rates `gammas`.
    fn residuals(&self, gammas: &[f64]) -> Vec<f64> {
        (0..self.n_points())
            .map(|i| {
                let model: f64 = gammas
                    .iter()
                    .enumerate()
                    .map(|(k, g)| self.strength[i][k] / (g + self.drive[i][k]))
                    .sum();
                (model - self.y[i]) * self.inv_sigma[i]
            })
            .collect()
    }

    fn chi2(&self, gammas: &[f64]) -> f64 {
        self.residuals(gammas).iter().map(|r| r * r).sum()
    }

    /// χ² minimized over all defect rates except `fixed_k`, which is pinned.
    /// Rates are optimized as `θ² = Γ_t` to keep them non-negative.
    fn profiled_chi2(&self, best: &[f64], fixed_k: usize, gamma_fixed: f64) -> f64 {
        let free: Vec<usize> = (0..best.len()).filter(|&k| k != fixed_k).collect();
        if free.is_empty() {
            let mut gammas = best.to_vec();
            gammas[fixed_k] = gamma_fixed;
            return self.chi2(&gammas);
        }
        let init: Vec<f64> = free.iter().map(|&k| best[k].max(0.0).sqrt()).collect();
        let assemble = |theta: &[f64]| -> Vec<f64> {
            let mut gammas = vec![0.0; best.len()];
            gammas[fixed_k] = gamma_fixed;
            for (j, &k) in free.iter().enumerate() {
                gammas[k] = theta[j] * theta[j];
            }
            gammas
        };
        let result = fit_least_squares(
            |theta| Ok(self.residuals(&assemble(theta))),
            &init,
            &FitOptions {
                max_iter: 100,
                ..FitOptions::default()
            },
        );
        match result {
            Ok(fit) => fit.cost,
            Err(_) => f64::INFINITY,
        }
    }
}

/// Fit every defect's relaxation rate to the pumped-imbalance spectrum,
/// holding the stage-1 defect parameters fixed.
///
/// Returns one estimate per `fit.defects` entry, in the same order. The
/// interval is the `Δχ² = 1` profile-likelihood region; see
/// [`GAMMA_T_SEARCH_CAP_PER_S`] for the meaning of a capped upper bound.
pub fn fit_gamma_t(
    points: &[RelaxometryPoint],
    fit: &SpectrumFit,
) -> Result<Vec<TlsRateEstimate>> {
    if fit.defects.is_empty() {
        return Ok(Vec::new());
    }
    if points.len() < fit.defects.len() + 1 {
        return Err(Error::InvalidInput(
            "fewer spectrum points than defect rates to fit".into(),
        ));
    }
    let data = ImbalanceData::build(points, fit)?;

    // Initialize each rate by inverting the single-defect model at the point
    // nearest the defect's resonance.
    let mut init = Vec::with_capacity(fit.defects.len());
    for (k, d) in fit.defects.iter().enumerate() {
        let nearest = (0..points.len())
            .min_by(|&a, &b| {
                (points[a].qubit_freq_hz - d.freq_hz)
                    .abs()
                    .total_cmp(&(points[b].qubit_freq_hz - d.freq_hz).abs())
            })
            .expect("points is non-empty");
        let y = data.y[nearest];
        let gamma_init = if y > 0.0 {
            (data.strength[nearest][k] / y - data.drive[nearest][k]).max(1.0)
        } else {
            1.0e6
        };
        init.push(gamma_init.sqrt());
    }

    let joint = fit_least_squares(
        |theta| {
            let gammas: Vec<f64> = theta.iter().map(|t| t * t).collect();
            Ok(data.residuals(&gammas))
        },
        &init,
        &FitOptions::default(),
    )?;
    let best: Vec<f64> = joint.params.iter().map(|t| t * t).collect();
    let chi2_min = joint.cost;
    let target = chi2_min + 1.0;

    // Bisect the Δχ² = 1 crossing on a log scale between a bracketing pair.
    let bisect = |k: usize, mut ln_in: f64, mut ln_out: f64| -> f64 {
        for _ in 0..30 {
            let mid = 0.5 * (ln_in + ln_out);
            if data.profiled_chi2(&best, k, mid.exp()) < target {
                ln_in = mid;
            } else {
                ln_out = mid;
            }
        }
        (0.5 * (ln_in + ln_out)).exp()
    };

    let mut estimates = Vec::with_capacity(best.len());
    for (k, &gamma_best) in best.iter().enumerate() {
        // Keep the pivot strictly positive for the log-scale search.
        let pivot = gamma_best.max(1e-3);
        let upper = if data.profiled_chi2(&best, k, GAMMA_T_SEARCH_CAP_PER_S) < target {
            GAMMA_T_SEARCH_CAP_PER_S
        } else {
            bisect(k, pivot.ln(), GAMMA_T_SEARCH_CAP_PER_S.ln())
        };
        let tiny = 1e-6 * pivot;
        let lower = if data.profiled_chi2(&best, k, tiny) < target {
            0.0
        } else {
            bisect(k, pivot.ln(), tiny.ln())
        };
        estimates.push(TlsRateEstimate {
            gamma_t_per_s: gamma_best,
            lower_per_s: lower,
            upper_per_s: upper,
        });
    }
    Ok(estimates)
}

/// Reduce each spectrum point to the polarizability ratio
/// `Γ_δδ / (2(Γ_Σ − Γ_q))`.
///
/// Points where either `Γ_Σ − Γ_q` or `Γ_δδ` is within twice its uncertainty
/// of zero are marked insignificant — the ratio there is noise over noise.
#[must_use]
pub fn polarizability_estimates(
    points: &[RelaxometryPoint],
    fit: &SpectrumFit,
) -> Vec<PolarizabilityPoint> {
    points
        .iter()
        .map(|p| {
            let excess = p.gamma_sigma_per_s - fit.gamma_q_per_s;
            let significant = excess > 2.0 * p.gamma_sigma_uncertainty_per_s
                && p.gamma_deltadelta_per_s > 2.0 * p.gamma_deltadelta_uncertainty_per_s;
            let raw = if excess != 0.0 {
                p.gamma_deltadelta_per_s / (2.0 * excess)
            } else {
                f64::INFINITY
            };
            let polarizability = raw.clamp(0.0, 1.0);
            PolarizabilityPoint {
                qubit_freq_hz: p.qubit_freq_hz,
                polarizability,
                raw,
                out_of_range: !(0.0..=1.0).contains(&raw),
                significant,
            }
        })
        .collect()
}

/// Mean clipped polarizability over the significant points, or `None` when
/// no point is significant.
#[must_use]
pub fn mean_significant_polarizability(points: &[PolarizabilityPoint]) -> Option<f64> {
    let significant: Vec<f64> = points
        .iter()
        .filter(|p| p.significant)
        .map(|p| p.polarizability)
        .collect();
    if significant.is_empty() {
        None
    } else {
        Some(significant.iter().sum::<f64>() / significant.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::gamma_sigma_model;
    use approx::assert_relative_eq;

    /// Synthetic spectrum points from the closed-form rate models; only the
    /// fields the spectrum fits read are populated meaningfully.
    fn synth_points(
        gamma_q: f64,
        tls: &[TlsParams],
        eta: f64,
        contrast: f64,
        sigma_rate: f64,
    ) -> Vec<RelaxometryPoint> {
        let mut points = Vec::new();
        let mut f = 200.0e6;
        while f <= 400.0e6 {
            let gs = gamma_sigma_model(f, gamma_q, tls).unwrap();
            let mut dd = 0.0;
            for t in tls {
                let c = gamma_qt(f, t).unwrap();
                dd += c * c * eta / (t.gamma_t_per_s + c * eta) * contrast;
            }
            points.push(RelaxometryPoint {
                qubit_freq_hz: f,
                gamma_sigma_per_s: gs,
                gamma_sigma_uncertainty_per_s: sigma_rate,
                gamma_deltadelta_per_s: dd,
                gamma_deltadelta_uncertainty_per_s: sigma_rate,
                gamma_sigma_h_per_s: gs,
                gamma_sigma_l_per_s: gs,
                tau_bath_s: Some(1.0e-3),
                eta,
                epsilon: 0.25,
                z_pump: 0.95,
                zbar_h: contrast / 2.0,
                zbar_l: -contrast / 2.0,
            });
            f += 1.0e6;
        }
        points
    }

    fn two_defects() -> Vec<TlsParams> {
        vec![
            TlsParams {
                freq_hz: 250.0e6,
                g_hz: 50.0e3,
                gamma2_hz: 1.7e6,
                gamma_t_per_s: 1.0e3,
                p_eq: 0.0,
            },
            TlsParams {
                freq_hz: 320.0e6,
                g_hz: 30.0e3,
                gamma2_hz: 3.0e6,
                gamma_t_per_s: 1.0e5,
                p_eq: 0.0,
            },
        ]
    }

    #[test]
    fn peaks_are_detected_with_sane_seed_values() {
        let tls = two_defects();
        let points = synth_points(555.6, &tls, 0.726, 1.3, 20.0);
        let guesses = detect_peaks(&points);
        assert_eq!(guesses.len(), 2);
        assert!((guesses[0].freq_hz - 250.0e6).abs() <= 1.0e6);
        assert!((guesses[1].freq_hz - 320.0e6).abs() <= 1.0e6);
        assert_relative_eq!(guesses[0].g_hz, 50.0e3, max_relative = 0.3);
        assert_relative_eq!(guesses[0].gamma2_hz, 1.7e6, max_relative = 0.5);
    }

    #[test]
    fn noiseless_single_defect_is_recovered_exactly() {
        let tls = vec![TlsParams {
            freq_hz: 287.3e6,
            g_hz: 42.0e3,
            gamma2_hz: 2.2e6,
            gamma_t_per_s: 0.0,
            p_eq: 0.0,
        }];
        let points = synth_points(555.6, &tls, 0.726, 1.3, 10.0);
        let fit = fit_gamma_sigma_spectrum(&points, None).unwrap();
        assert_eq!(fit.defects.len(), 1);
        assert_relative_eq!(fit.gamma_q_per_s, 555.6, max_relative = 1e-5);
        assert!((fit.defects[0].freq_hz - 287.3e6).abs() < 100.0);
        assert_relative_eq!(fit.defects[0].g_hz, 42.0e3, max_relative = 1e-5);
        assert_relative_eq!(fit.defects[0].gamma2_hz, 2.2e6, max_relative = 1e-5);
        assert!(fit.chi2 < 1e-10);
    }

    #[test]
    fn two_defect_spectrum_fit_recovers_both() {
        let tls = two_defects();
        let points = synth_points(555.6, &tls, 0.726, 1.3, 10.0);
        let fit = fit_gamma_sigma_spectrum(&points, None).unwrap();
        assert_eq!(fit.defects.len(), 2);
        for (d, t) in fit.defects.iter().zip(&tls) {
            assert!((d.freq_hz - t.freq_hz).abs() < 1.0e4);
            assert_relative_eq!(d.g_hz, t.g_hz, max_relative = 1e-4);
            assert_relative_eq!(d.gamma2_hz, t.gamma2_hz, max_relative = 1e-4);
        }
    }

    #[test]
    fn requesting_more_peaks_than_resolvable_errors() {
        let tls = vec![two_defects()[0]];
        let points = synth_points(555.6, &tls, 0.726, 1.3, 10.0);
        let fake = PeakGuess {
            freq_hz: 300.0e6,
            g_hz: 10.0e3,
            gamma2_hz: 1.0e6,
        };
        let init = vec![fake; 3];
        match fit_gamma_sigma_spectrum(&points, Some(&init)) {
            Err(Error::OverParameterized {
                requested,
                resolvable,
            }) => {
                assert_eq!(requested, 3);
                assert_eq!(resolvable, 1);
            }
            other => panic!("expected over-parameterization, got {other:?}"),
        }
    }

    #[test]
    fn defect_rates_are_bracketed_by_profile_intervals() {
        let tls = two_defects();
        let points = synth_points(555.6, &tls, 0.726, 1.3, 5.0);
        let fit = fit_gamma_sigma_spectrum(&points, None).unwrap();
        let rates = fit_gamma_t(&points, &fit).unwrap();
        assert_eq!(rates.len(), 2);
        for (r, t) in rates.iter().zip(&tls) {
            assert!(
                r.lower_per_s <= t.gamma_t_per_s && t.gamma_t_per_s <= r.upper_per_s,
                "true rate {} outside [{}, {}]",
                t.gamma_t_per_s,
                r.lower_per_s,
                r.upper_per_s
            );
            assert!(r.lower_per_s <= r.gamma_t_per_s && r.gamma_t_per_s <= r.upper_per_s);
        }
        // The slow defect is well identified on both sides.
        assert!(rates[0].upper_per_s < 1.0e4);
        assert_relative_eq!(rates[0].gamma_t_per_s, 1.0e3, max_relative = 0.2);
    }

    #[test]
    fn lossless_defect_with_unit_contrast_has_half_polarizability() {
        let tls = vec![TlsParams {
            freq_hz: 300.0e6,
            g_hz: 40.0e3,
            gamma2_hz: 2.0e6,
            gamma_t_per_s: 0.0,
            p_eq: 0.0,
        }];
        // Γ_t = 0, unit contrast: Γ_δδ = Γ_qt·1 and Γ_Σ − Γ_q = Γ_qt, so the
        // ratio is exactly 1/2 at every point regardless of η.
        let points = synth_points(555.6, &tls, 0.726, 1.0, 1.0);
        let fit = fit_gamma_sigma_spectrum(&points, None).unwrap();
        let pol = polarizability_estimates(&points, &fit);
        let on_peak = pol
            .iter()
            .find(|p| (p.qubit_freq_hz - 300.0e6).abs() < 0.5e6)
            .unwrap();
        assert!(on_peak.significant);
        assert!(!on_peak.out_of_range);
        assert_relative_eq!(on_peak.polarizability, 0.5, max_relative = 1e-3);
        let mean = mean_significant_polarizability(&pol).unwrap();
        assert_relative_eq!(mean, 0.5, max_relative = 0.02);
    }

    #[test]
    fn insignificant_points_are_masked() {
        let points = vec![RelaxometryPoint {
            qubit_freq_hz: 250.0e6,
            gamma_sigma_per_s: 600.0,
            gamma_sigma_uncertainty_per_s: 100.0,
            gamma_deltadelta_per_s: 5.0,
            gamma_deltadelta_uncertainty_per_s: 50.0,
            gamma_sigma_h_per_s: 600.0,
            gamma_sigma_l_per_s: 600.0,
            tau_bath_s: None,
            eta: 0.7,
            epsilon: 0.25,
            z_pump: 0.95,
            zbar_h: 0.6,
            zbar_l: -0.6,
        }];
        let fit = SpectrumFit {
            gamma_q_per_s: 555.6,
            gamma_q_uncertainty_per_s: 10.0,
            defects: vec![],
            chi2: 0.0,
            dof: 0,
        };
        let pol = polarizability_estimates(&points, &fit);
        assert!(!pol[0].significant);
        assert!(mean_significant_polarizability(&pol).is_none());
    }
}
