//! Shared-rate double-exponential fit for families of decay curves.
//!
//! A qubit exchanging with one dominant long-lived defect relaxes as the sum
//! of two exponentials whose rates are properties of the coupled pair, not
//! of the preparation: preparing qubit and bath in different polarizations
//! only reweights the two modes. This module fits
//!
//! ```text
//! z_c(t) = offset + a_c,fast·e^{−r_fast·t} + a_c,slow·e^{−r_slow·t}
//! ```
//!
//! to a whole family of curves `c` at once, sharing `offset`, `r_fast`, and
//! `r_slow` across the family while giving every curve its own pair of
//! amplitudes.
//!
//! # Method
//!
//! For fixed rates the model is linear in the offset and amplitudes, so the
//! rates are profiled: a log-spaced grid over ordered rate pairs with an
//! exact weighted linear solve at each node seeds a Levenberg–Marquardt
//! polish over `(ln r_slow, ln(r_fast/r_slow − 1))` — a parameterization
//! that keeps the rates ordered and strictly separated.

use nalgebra::{DMatrix, DVector};

use crate::analysis::least_squares::{fit_least_squares, solve_weighted_linear, FitOptions};
use crate::error::{Error, Result};
use crate::sequence::DecayCurve;

/// Result of [`fit_double_exponential`].
#[derive(Debug, Clone)]
pub struct DoubleExpFit {
    /// Faster of the two shared rates, 1/s.
    pub rate_fast_per_s: f64,
    pub rate_fast_uncertainty_per_s: f64,
    /// Slower of the two shared rates, 1/s.
    pub rate_slow_per_s: f64,
    pub rate_slow_uncertainty_per_s: f64,
    /// Shared asymptote.
    pub offset: f64,
    /// Fast-mode amplitude of each curve, in input order.
    pub amplitudes_fast: Vec<f64>,
    /// Slow-mode amplitude of each curve, in input order.
    pub amplitudes_slow: Vec<f64>,
    /// Weighted sum of squared residuals at the optimum.
    pub chi2: f64,
    /// Residual degrees of freedom.
    pub dof: usize,
}

/// Rows of the conditional-linear design at fixed rates: columns are
/// `[1, e^{−r_fast t} per curve, e^{−r_slow t} per curve]` with the per-curve
/// columns zero outside their own curve's rows.
fn design_at(
    curves: &[DecayCurve],
    r_fast: f64,
    r_slow: f64,
) -> (DMatrix<f64>, DVector<f64>) {
    let n_rows: usize = curves.iter().map(|c| c.delays_s.len()).sum();
    let n_cols = 1 + 2 * curves.len();
    let mut x = DMatrix::zeros(n_rows, n_cols);
    let mut y = DVector::zeros(n_rows);
    let mut row = 0;
    for (c, curve) in curves.iter().enumerate() {
        for (t, z) in curve.delays_s.iter().zip(&curve.z) {
            x[(row, 0)] = 1.0;
            x[(row, 1 + c)] = (-r_fast * t).exp();
            x[(row, 1 + curves.len() + c)] = (-r_slow * t).exp();
            y[row] = *z;
            row += 1;
        }
    }
    (x, y)
}

fn profiled_residuals(
    curves: &[DecayCurve],
    weights: &[f64],
    r_fast: f64,
    r_slow: f64,
) -> Result<(Vec<f64>, DVector<f64>)> {
    let (x, y) = design_at(curves, r_fast, r_slow);
    let (beta, _) = solve_weighted_linear(&x, &y, weights)?;
    let r = x * &beta - y;
    let weighted = r
        .iter()
        .zip(weights)
        .map(|(ri, w)| ri * w.sqrt())
        .collect();
    Ok((weighted, beta))
}

/// Fit a shared-rate double exponential to a family of decay curves.
///
/// `sigma` is the per-sample readout noise (the same for every point);
/// pass `0` for an unweighted fit. Rate uncertainties come from the profiled
/// curvature, scaled by `max(1, χ²_red)` so an understated `sigma` cannot
/// understate them.
///
/// # Errors
///
/// [`Error::InvalidInput`] on malformed curves or too few points,
/// [`Error::FitDidNotConverge`] / [`Error::Degenerate`] when the polish
/// fails or the family does not resolve two distinct rates.
pub fn fit_double_exponential(curves: &[DecayCurve], sigma: f64) -> Result<DoubleExpFit> {
    if curves.is_empty() {
        return Err(Error::InvalidInput("need at least one decay curve".into()));
    }
    let mut t_max = 0.0_f64;
    let mut dt_min = f64::INFINITY;
    let mut n_rows = 0;
    for (i, c) in curves.iter().enumerate() {
        if c.delays_s.len() != c.z.len() || c.delays_s.len() < 3 {
            return Err(Error::InvalidInput(format!(
                "curve {i} needs at least 3 matched (delay, z) points"
            )));
        }
        let mut sorted = c.delays_s.clone();
        sorted.sort_by(f64::total_cmp);
        for (a, b) in sorted.iter().zip(sorted.iter().skip(1)) {
            if b - a > 0.0 {
                dt_min = dt_min.min(b - a);
            }
        }
        for (t, z) in c.delays_s.iter().zip(&c.z) {
            if !t.is_finite() || *t < 0.0 || !z.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "curve {i} has a non-finite or negative-delay point"
                )));
            }
            t_max = t_max.max(*t);
        }
        n_rows += c.delays_s.len();
    }
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::InvalidInput(format!(
            "sigma must be non-negative, got {sigma}"
        )));
    }
    let n_linear = 1 + 2 * curves.len();
    // Two profiled rates on top of the linear parameters.
    if n_rows < n_linear + 3 || t_max <= 0.0 || !dt_min.is_finite() {
        return Err(Error::InvalidInput(
            "curve family has too few distinct delays for a two-rate fit".into(),
        ));
    }
    let w = if sigma > 0.0 { 1.0 / (sigma * sigma) } else { 1.0 };
    let weights = vec![w; n_rows];

    // Grid over ordered rate pairs.
    let (r_lo, r_hi) = (1e-2 / t_max, 1e2 / dt_min);
    let nodes = 30;
    let rate_at =
        |i: usize| r_lo * (r_hi / r_lo).powf(i as f64 / (nodes - 1) as f64);
    let mut best: Option<(f64, f64, f64)> = None; // (cost, r_fast, r_slow)
    for i in 0..nodes {
        for j in (i + 1)..nodes {
            let (r_slow, r_fast) = (rate_at(i), rate_at(j));
            let Ok((res, _)) = profiled_residuals(curves, &weights, r_fast, r_slow) else {
                continue;
            };
            let cost: f64 = res.iter().map(|r| r * r).sum();
            if best.as_ref().is_none_or(|b| cost < b.0) {
                best = Some((cost, r_fast, r_slow));
            }
        }
    }
    let (_, r_fast0, r_slow0) = best.ok_or_else(|| {
        Error::Degenerate("no rate pair in the searched range fits the curve family".into())
    })?;

    // Polish over θ = (ln r_slow, ln(r_fast/r_slow − 1)).
    let unpack = |theta: &[f64]| -> (f64, f64) {
        let r_slow = theta[0].exp();
        let r_fast = r_slow * (1.0 + theta[1].exp());
        (r_fast, r_slow)
    };
    let init = [r_slow0.ln(), (r_fast0 / r_slow0 - 1.0).ln()];
    let fit = fit_least_squares(
        |theta| {
            let (r_fast, r_slow) = unpack(theta);
            profiled_residuals(curves, &weights, r_fast, r_slow).map(|(res, _)| res)
        },
        &init,
        &FitOptions::default(),
    )?;
    if !fit.converged {
        return Err(Error::FitDidNotConverge(
            "shared-rate polish did not converge".into(),
        ));
    }
    let (r_fast, r_slow) = unpack(&fit.params);
    let (res, beta) = profiled_residuals(curves, &weights, r_fast, r_slow)?;
    let chi2: f64 = res.iter().map(|r| r * r).sum();
    let dof = n_rows.saturating_sub(n_linear + 2);
    let scale2 = if dof > 0 { (chi2 / dof as f64).max(1.0) } else { 1.0 };

    // Rate variances by the delta method from the profiled covariance:
    // r_slow = e^{θ0}, r_fast = e^{θ0}(1 + e^{θ1}).
    let (var_fast, var_slow) = match &fit.covariance {
        Some(cov) => {
            let e1 = fit.params[1].exp();
            let d_fast = [r_fast, r_slow * e1];
            let var_fast = d_fast[0] * d_fast[0] * cov[(0, 0)]
                + 2.0 * d_fast[0] * d_fast[1] * cov[(0, 1)]
                + d_fast[1] * d_fast[1] * cov[(1, 1)];
            let var_slow = r_slow * r_slow * cov[(0, 0)];
            (var_fast, var_slow)
        }
        None => (f64::NAN, f64::NAN),
    };

    let n_curves = curves.len();
    Ok(DoubleExpFit {
        rate_fast_per_s: r_fast,
        rate_fast_uncertainty_per_s: (var_fast * scale2).sqrt(),
        rate_slow_per_s: r_slow,
        rate_slow_uncertainty_per_s: (var_slow * scale2).sqrt(),
        offset: beta[0],
        amplitudes_fast: beta.as_slice()[1..1 + n_curves].to_vec(),
        amplitudes_slow: beta.as_slice()[1 + n_curves..].to_vec(),
        chi2,
        dof,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn synth_family(
        rates: (f64, f64),
        offset: f64,
        amps: &[(f64, f64)],
        n_points: usize,
        t_max: f64,
    ) -> Vec<DecayCurve> {
        amps.iter()
            .map(|&(af, asl)| {
                let delays_s: Vec<f64> = (0..n_points)
                    .map(|i| t_max * i as f64 / (n_points - 1) as f64)
                    .collect();
                let z = delays_s
                    .iter()
                    .map(|t| offset + af * (-rates.0 * t).exp() + asl * (-rates.1 * t).exp())
                    .collect();
                DecayCurve { delays_s, z }
            })
            .collect()
    }

    #[test]
    fn four_curve_family_recovers_shared_rates() {
        let amps = [(0.6, 0.3), (0.7, -0.2), (-0.5, 0.4), (-0.6, -0.3)];
        let curves = synth_family((4.5e3, 0.5e3), -0.05, &amps, 30, 5.0e-3);
        let fit = fit_double_exponential(&curves, 0.0).unwrap();
        assert_relative_eq!(fit.rate_fast_per_s, 4.5e3, max_relative = 1e-6);
        assert_relative_eq!(fit.rate_slow_per_s, 0.5e3, max_relative = 1e-6);
        assert_relative_eq!(fit.offset, -0.05, epsilon = 1e-8);
        for (i, &(af, asl)) in amps.iter().enumerate() {
            assert_relative_eq!(fit.amplitudes_fast[i], af, max_relative = 1e-6);
            assert_relative_eq!(fit.amplitudes_slow[i], asl, max_relative = 1e-6);
        }
        assert!(fit.rate_fast_per_s > fit.rate_slow_per_s);
    }

    #[test]
    fn single_curve_with_well_separated_rates_fits() {
        let curves = synth_family((8.0e3, 0.9e3), 0.0, &[(0.7, 0.25)], 40, 4.0e-3);
        let fit = fit_double_exponential(&curves, 0.0).unwrap();
        assert_relative_eq!(fit.rate_fast_per_s, 8.0e3, max_relative = 1e-5);
        assert_relative_eq!(fit.rate_slow_per_s, 0.9e3, max_relative = 1e-5);
    }

    #[test]
    fn noisy_fit_reports_finite_uncertainties() {
        use rand::{RngExt, SeedableRng};
        let amps = [(0.6, 0.3), (-0.5, 0.4)];
        let mut curves = synth_family((4.5e3, 0.5e3), -0.05, &amps, 40, 5.0e-3);
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(7);
        for c in &mut curves {
            for z in &mut c.z {
                *z += 0.005 * (rng.random_range(0.0..1.0) - 0.5);
            }
        }
        let fit = fit_double_exponential(&curves, 0.002).unwrap();
        assert_relative_eq!(fit.rate_fast_per_s, 4.5e3, max_relative = 0.05);
        assert_relative_eq!(fit.rate_slow_per_s, 0.5e3, max_relative = 0.05);
        assert!(fit.rate_fast_uncertainty_per_s.is_finite());
        assert!(fit.rate_fast_uncertainty_per_s > 0.0);
        assert!(fit.rate_slow_uncertainty_per_s < 0.05 * fit.rate_slow_per_s);
    }

    #[test]
    fn malformed_curves_are_rejected() {
        let bad = DecayCurve {
            delays_s: vec![0.0, 1.0e-4],
            z: vec![0.5],
        };
        assert!(fit_double_exponential(&[bad], 0.0).is_err());
        assert!(fit_double_exponential(&[], 0.0).is_err());
    }
}
