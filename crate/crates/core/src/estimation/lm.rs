//! Damped least squares (Levenberg–Marquardt with Marquardt's diagonal
//! scaling).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A weighted least-squares problem: minimise `Σ r_i(p)²`.
pub trait LeastSquares {
    fn residuals(&self, params: &DVector<f64>) -> DVector<f64>;
    fn jacobian(&self, params: &DVector<f64>) -> DMatrix<f64>;

    /// Steps into infeasible regions are rejected like uphill steps.
    fn feasible(&self, _params: &DVector<f64>) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Converged once every `|δ_j| ≤ tol · |p_j|`.
    pub param_tolerance: f64,
    pub initial_damping: f64,
    pub damping_up: f64,
    pub damping_down: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            param_tolerance: 1e-10,
            initial_damping: 1e-3,
            damping_up: 10.0,
            damping_down: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub names: Vec<String>,
    pub parameters: Vec<f64>,
    /// Row-major, `parameters.len()` squared.
    pub covariance: Vec<Vec<f64>>,
    /// `√(Σ r_i²)` at the solution.
    pub residual_norm: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl FitResult {
    pub fn std_error(&self, index: usize) -> f64 {
        self.covariance[index][index].max(0.0).sqrt()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.parameters[i])
    }
}

/// Minimises the problem from `start`. The returned covariance is
/// `(JᵀJ)⁻¹` at the solution, i.e. appropriate for residuals already divided
/// by their standard errors.
pub fn levenberg_marquardt<P: LeastSquares>(
    problem: &P,
    start: DVector<f64>,
    names: &[&str],
    options: LmOptions,
) -> Result<FitResult> {
    let n = start.len();
    assert_eq!(names.len(), n, "one name per parameter");
    let mut x = start;
    if !problem.feasible(&x) {
        return Err(Error::fit("starting point infeasible", 0));
    }
    let mut r = problem.residuals(&x);
    let mut cost = r.norm_squared();
    if !cost.is_finite() {
        return Err(Error::fit("non-finite residuals at starting point", 0));
    }
    let mut lambda = options.initial_damping;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < options.max_iterations {
        iterations += 1;
        if cost == 0.0 {
            converged = true;
            break;
        }
        let jac = problem.jacobian(&x);
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * &r;
        if grad.iter().all(|g| *g == 0.0) {
            converged = true;
            break;
        }
        let mut damped = jtj.clone();
        for i in 0..n {
            let d = jtj[(i, i)];
            damped[(i, i)] += lambda * if d > 0.0 { d } else { 1.0 };
        }
        let Some(step) = damped.cholesky().map(|c| c.solve(&(-&grad))) else {
            lambda *= options.damping_up;
            continue;
        };
        let small = step
            .iter()
            .zip(x.iter())
            .all(|(d, p)| d.abs() <= options.param_tolerance * p.abs().max(f64::MIN_POSITIVE));
        let candidate = &x + &step;
        let accepted = if problem.feasible(&candidate) {
            let r_new = problem.residuals(&candidate);
            let cost_new = r_new.norm_squared();
            if cost_new.is_finite() && cost_new <= cost {
                x = candidate;
                r = r_new;
                cost = cost_new;
                true
            } else {
                false
            }
        } else {
            false
        };
        if small {
            converged = true;
            break;
        }
        if accepted {
            lambda /= options.damping_down;
        } else {
            lambda *= options.damping_up;
            if lambda > 1e20 {
                // no downhill step exists at any damping: a local minimum
                converged = true;
                break;
            }
        }
    }

    let jac = problem.jacobian(&x);
    let info = jac.transpose() * &jac;
    let covariance = info
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::fit("singular information matrix at solution", iterations))?;
    let fit = FitResult {
        names: names.iter().map(|s| s.to_string()).collect(),
        parameters: x.iter().copied().collect(),
        covariance: (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| 0.5 * (covariance[(i, j)] + covariance[(j, i)]))
                    .collect()
            })
            .collect(),
        residual_norm: cost.sqrt(),
        converged,
        iterations,
    };
    if !converged {
        return Err(Error::fit(
            format!(
                "no convergence; last parameters {:?}, residual norm {:e}",
                fit.parameters, fit.residual_norm
            ),
            iterations,
        ));
    }
    Ok(fit)
}
