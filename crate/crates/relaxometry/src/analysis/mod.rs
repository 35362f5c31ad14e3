//! Estimators: from raw sample tables to defect parameters.
//!
//! # Pipeline
//!
//! 1. [`analyze_record`] groups one record's samples per (half, block),
//!    extracts the initial decay slope `Ż(T)` at each slow-axis position
//!    ([`extract_slope`]), and fits the joint slow-axis model
//!    ([`fit_bath_relaxation`]) to produce one spectrum point: the total
//!    rate `Γ_Σ` and the pumped imbalance `Γ_δδ` with uncertainties.
//! 2. [`detect_peaks`] and [`fit_gamma_sigma_spectrum`] decompose the
//!    `Γ_Σ(f)` spectrum into a flat background plus one Lorentzian per
//!    defect (couplings, linewidths, frequencies).
//! 3. [`fit_gamma_t`] fits each defect's relaxation rate to the `Γ_δδ(f)`
//!    spectrum using the per-point duty-cycle bookkeeping, and brackets it
//!    with profile-likelihood intervals.
//!
//! Supporting estimators: [`zdot_to_rates`] (slope pairs → directed rates),
//! [`fit_single_exponential`] (conventional lifetime fits),
//! [`fit_double_exponential`] (bath-prepared curve families),
//! [`dipole_moment`] (coupling → electric dipole), and a small
//! Levenberg–Marquardt engine ([`fit_least_squares`]) that all of the above
//! share.

mod bath_fit;
mod dipole;
mod double_exp;
mod least_squares;
mod record_pipeline;
mod slopes;
mod spectrum;

pub use bath_fit::{fit_bath_relaxation, BathFitConfig, BathRelaxationFit, SlopePoint};
pub use dipole::{dipole_moment, DipoleMoment};
pub use double_exp::{fit_double_exponential, DoubleExpFit};
pub use least_squares::{
    fit_least_squares, solve_weighted_linear, FitOptions, FitResult,
};
pub use record_pipeline::{
    analyze_record, analyze_record_detailed, AnalyzedRecord, RelaxometryPoint, SpectrumDataset,
};
pub use slopes::{extract_slope, fit_single_exponential, ExponentialFit, SlopeFit};
pub use spectrum::{
    detect_peaks, fit_gamma_sigma_spectrum, fit_gamma_t, mean_significant_polarizability,
    polarizability_estimates, FittedDefect, PeakGuess, PolarizabilityPoint, SpectrumFit,
    TlsRateEstimate, GAMMA_T_SEARCH_CAP_PER_S,
};

use crate::error::{Error, Result};
use crate::model::TransitionRates;

/// Convert a pair of initial-slope measurements taken from two known starting
/// polarizations into directed transition rates.
///
/// From `Ż = −Z₀·Γ_Σ − Γ_δ` evaluated at two preparations:
///
/// ```text
/// Γ_Σ = −(Ż_e − Ż_g) / (Z_e − Z_g)
/// Γ_δ = −Ż_e − Z_e·Γ_Σ
/// Γ_↓ = (Γ_Σ + Γ_δ)/2,   Γ_↑ = (Γ_Σ − Γ_δ)/2
/// ```
///
/// Errors if the two starting polarizations coincide (the system is then
/// unsolvable) or if the implied directed rates are unphysical (negative
/// beyond numerical tolerance), which indicates inconsistent inputs.
pub fn zdot_to_rates(
    z_e_init: f64,
    zdot_e_per_s: f64,
    z_g_init: f64,
    zdot_g_per_s: f64,
) -> Result<TransitionRates> {
    let span = z_e_init - z_g_init;
    if span.abs() < 1e-9 {
        return Err(Error::Degenerate(format!(
            "starting polarizations must differ to separate the rates, got {z_e_init} and {z_g_init}"
        )));
    }
    let gamma_sigma = -(zdot_e_per_s - zdot_g_per_s) / span;
    let gamma_delta = -zdot_e_per_s - z_e_init * gamma_sigma;
    let down = 0.5 * (gamma_sigma + gamma_delta);
    let up = 0.5 * (gamma_sigma - gamma_delta);
    // Tolerate small negative excursions from measurement noise by clamping;
    // reject clearly unphysical inputs.
    let floor = -1e-6 * gamma_sigma.abs().max(1.0);
    if down < floor || up < floor {
        return Err(Error::InvalidInput(format!(
            "slope pair implies negative directed rates (down = {down}, up = {up})"
        )));
    }
    TransitionRates::new(down.max(0.0), up.max(0.0))
}
