//! Small dense nonlinear least-squares engine (Levenberg–Marquardt) and a
//! weighted linear solver, shared by every estimator in this crate.
//!
//! The problems here are tiny (tens of residuals, at most a few dozen
//! parameters), so the implementation favors robustness and transparency:
//! forward-difference Jacobians, Marquardt diagonal damping, Cholesky
//! solves with automatic damping escalation, and a covariance estimate from
//! the Gauss–Newton Hessian at the optimum.
//!
//! Callers are expected to pre-scale parameters to order unity (log-rates,
//! megahertz offsets); the step heuristics assume it.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

/// Convergence and damping controls for [`fit_least_squares`].
#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    /// Maximum accepted-step iterations.
    pub max_iter: usize,
    /// Stop when an accepted step reduces the cost by less than this
    /// relative amount.
    pub rel_cost_tol: f64,
    /// Stop when the gradient's infinity norm falls below this.
    pub grad_tol: f64,
    /// Initial Marquardt damping.
    pub initial_lambda: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            rel_cost_tol: 1e-10,
            grad_tol: 1e-12,
            initial_lambda: 1e-3,
        }
    }
}

/// Outcome of a nonlinear least-squares fit.
#[derive(Debug, Clone)]
pub struct FitResult {
    /// Parameter vector at the best point found.
    pub params: Vec<f64>,
    /// Sum of squared (weighted) residuals at `params`.
    pub cost: f64,
    /// `(JᵀJ)⁻¹` at the optimum — the parameter covariance when residuals
    /// are scaled to unit variance. `None` when the Hessian is singular.
    pub covariance: Option<DMatrix<f64>>,
    /// Accepted-step iterations used.
    pub iterations: usize,
    /// Whether a convergence criterion (rather than the iteration cap) ended
    /// the fit.
    pub converged: bool,
}

fn jacobian<F>(residuals: &F, params: &[f64], r0: &DVector<f64>) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let n = r0.len();
    let p = params.len();
    let mut jac = DMatrix::zeros(n, p);
    let mut probe = params.to_vec();
    for j in 0..p {
        let h = f64::EPSILON.sqrt() * params[j].abs().max(1.0);
        probe[j] = params[j] + h;
        let rj = residuals(&probe)?;
        if rj.len() != n {
            return Err(Error::InvalidInput(
                "residual function changed its output length".into(),
            ));
        }
        for i in 0..n {
            jac[(i, j)] = (rj[i] - r0[i]) / h;
        }
        probe[j] = params[j];
    }
    Ok(jac)
}

/// Minimize `Σ rᵢ(p)²` over `p` starting from `init`.
///
/// `residuals` must return the same number of (already weighted) residuals
/// on every call; it may return an error for unevaluable parameters, which
/// aborts the fit. The result's `converged` flag distinguishes a genuine
/// optimum from hitting the iteration cap — callers decide whether that is
/// fatal for their use case.
pub fn fit_least_squares<F>(residuals: F, init: &[f64], opts: &FitOptions) -> Result<FitResult>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if init.is_empty() {
        return Err(Error::InvalidInput("fit needs at least one parameter".into()));
    }
    let mut params = init.to_vec();
    let mut r = DVector::from_vec(residuals(&params)?);
    if r.len() < params.len() {
        return Err(Error::InvalidInput(format!(
            "underdetermined fit: {} residuals for {} parameters",
            r.len(),
            params.len()
        )));
    }
    let mut cost = r.norm_squared();
    let mut lambda = opts.initial_lambda;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        let jac = jacobian(&residuals, &params, &r)?;
        let grad = jac.transpose() * &r;
        if grad.amax() < opts.grad_tol {
            converged = true;
            break;
        }
        let hess = jac.transpose() * &jac;
        // Inner damping escalation: retry with stronger damping until a step
        // both solves and reduces the cost.
        let mut stepped = false;
        while lambda < 1e12 {
            let mut damped = hess.clone();
            for j in 0..params.len() {
                // Marquardt scaling keeps the damping meaningful for
                // parameters of very different curvature; the additive floor
                // handles exactly-zero diagonal entries.
                damped[(j, j)] = hess[(j, j)] * (1.0 + lambda) + 1e-30 * lambda;
            }
            let Some(chol) = Cholesky::new(damped) else {
                lambda *= 10.0;
                continue;
            };
            let step = chol.solve(&(-&grad));
            let mut trial = params.clone();
            for j in 0..trial.len() {
                trial[j] += step[j];
            }
            let Ok(trial_r_vec) = residuals(&trial) else {
                lambda *= 10.0;
                continue;
            };
            let trial_r = DVector::from_vec(trial_r_vec);
            let trial_cost = trial_r.norm_squared();
            if trial_cost.is_finite() && trial_cost < cost {
                let improvement = (cost - trial_cost) / cost.max(f64::MIN_POSITIVE);
                params = trial;
                r = trial_r;
                cost = trial_cost;
                lambda = (lambda / 3.0).max(1e-12);
                stepped = true;
                if improvement < opts.rel_cost_tol {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        iterations += 1;
        if !stepped {
            // Damping maxed out without an acceptable step: local optimum to
            // within floating-point resolution.
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }

    // Covariance from the undamped Gauss–Newton Hessian at the optimum.
    let jac = jacobian(&residuals, &params, &r)?;
    let hess = jac.transpose() * &jac;
    let covariance = Cholesky::new(hess).map(|c| c.inverse());
    Ok(FitResult {
        params,
        cost,
        covariance,
        iterations,
        converged,
    })
}

/// Solve the weighted linear least-squares problem `min ‖W^{1/2}(Xβ − y)‖²`.
///
/// `weights` are `1/σᵢ²` (pass `1.0` for unweighted rows). Returns the
/// coefficients and their covariance `(XᵀWX)⁻¹`. Errors with
/// [`Error::Degenerate`] when the normal equations are singular, i.e. the
/// design does not determine the coefficients.
pub fn solve_weighted_linear(
    design: &DMatrix<f64>,
    y: &DVector<f64>,
    weights: &[f64],
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (n, p) = design.shape();
    if y.len() != n || weights.len() != n {
        return Err(Error::InvalidInput(format!(
            "design is {n}×{p} but y has {} rows and weights {}",
            y.len(),
            weights.len()
        )));
    }
    if n < p {
        return Err(Error::InvalidInput(format!(
            "underdetermined linear system: {n} rows for {p} coefficients"
        )));
    }
    let mut xtwx = DMatrix::zeros(p, p);
    let mut xtwy = DVector::zeros(p);
    for i in 0..n {
        let w = weights[i];
        for a in 0..p {
            xtwy[a] += w * design[(i, a)] * y[i];
            for b in a..p {
                xtwx[(a, b)] += w * design[(i, a)] * design[(i, b)];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            xtwx[(a, b)] = xtwx[(b, a)];
        }
    }
    let chol = Cholesky::new(xtwx).ok_or_else(|| {
        Error::Degenerate("weighted linear solve: normal equations are singular".into())
    })?;
    let beta = chol.solve(&xtwy);
    let cov = chol.inverse();
    Ok((beta, cov))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn recovers_exponential_parameters_from_clean_data() {
        // y = 2.5·e^{−1.7 t} + 0.3, parameters (ln a, ln k, c).
        let ts: Vec<f64> = (0..30).map(|i| i as f64 * 0.1).collect();
        let ys: Vec<f64> = ts.iter().map(|t| 2.5 * (-1.7 * t).exp() + 0.3).collect();
        let residuals = |p: &[f64]| -> Result<Vec<f64>> {
            let (a, k, c) = (p[0].exp(), p[1].exp(), p[2]);
            Ok(ts
                .iter()
                .zip(&ys)
                .map(|(t, y)| a * (-k * t).exp() + c - y)
                .collect())
        };
        let fit = fit_least_squares(residuals, &[0.0, 0.0, 0.0], &FitOptions::default()).unwrap();
        assert!(fit.converged);
        assert_relative_eq!(fit.params[0].exp(), 2.5, max_relative = 1e-7);
        assert_relative_eq!(fit.params[1].exp(), 1.7, max_relative = 1e-7);
        assert_relative_eq!(fit.params[2], 0.3, max_relative = 1e-6);
        assert!(fit.cost < 1e-16);
        assert!(fit.covariance.is_some());
    }

    #[test]
    fn exactly_solvable_linear_problem_converges_in_few_iterations() {
        // Linear residuals: LM reduces to one Gauss–Newton step.
        let residuals = |p: &[f64]| -> Result<Vec<f64>> {
            Ok(vec![p[0] - 3.0, p[1] + 4.0, p[0] + p[1] + 1.0])
        };
        let fit = fit_least_squares(residuals, &[0.0, 0.0], &FitOptions::default()).unwrap();
        assert!(fit.converged);
        assert!(fit.iterations <= 5);
        assert_relative_eq!(fit.params[0], 3.0, epsilon = 1e-8);
        assert_relative_eq!(fit.params[1], -4.0, epsilon = 1e-8);
    }

    #[test]
    fn underdetermined_problems_are_rejected() {
        let residuals = |p: &[f64]| -> Result<Vec<f64>> { Ok(vec![p[0] + p[1]]) };
        assert!(fit_least_squares(residuals, &[0.0, 0.0], &FitOptions::default()).is_err());
    }

    #[test]
    fn weighted_linear_solver_matches_hand_solution() {
        // Fit y = β₀ + β₁x through three points with unequal weights;
        // verified against the explicit normal-equation solution.
        let design = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0]);
        let y = DVector::from_vec(vec![1.0, 2.0, 4.0]);
        let w = [1.0, 4.0, 1.0];
        let (beta, cov) = solve_weighted_linear(&design, &y, &w).unwrap();
        // Normal equations: [6, 6; 6, 8]·β = [13, 16] → β = (2/3, 3/2).
        assert_relative_eq!(beta[0], 2.0 / 3.0, max_relative = 1e-12);
        assert_relative_eq!(beta[1], 1.5, max_relative = 1e-12);
        // Covariance = inverse of the normal matrix: [[2/3, −1/2], [−1/2, 1/2]].
        assert_relative_eq!(cov[(0, 0)], 2.0 / 3.0, max_relative = 1e-12);
        assert_relative_eq!(cov[(1, 1)], 0.5, max_relative = 1e-12);
        assert_relative_eq!(cov[(0, 1)], -0.5, max_relative = 1e-12);
    }

    #[test]
    fn singular_designs_report_degeneracy() {
        // Two identical columns.
        let design = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert!(solve_weighted_linear(&design, &y, &[1.0; 3]).is_err());
    }
}
