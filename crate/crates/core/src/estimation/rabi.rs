//! Single-parameter fit of excitation-versus-energy data.
//!
//! The effective Rabi frequency scales as `Ω_eff = α √C_sc` with `C_sc` the
//! background scatter counts of the pulse (proportional to its energy).
//! Duration and detuning are held at their spectrometer values and only `α`
//! is fitted.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::lm::{levenberg_marquardt, FitResult, LeastSquares, LmOptions};
use crate::dynamics::{rect_probability, rect_probability_gradient};
use crate::quantities::{AngularFrequency, Duration};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RabiDataPoint {
    pub scatter_counts: f64,
    pub excited_population: f64,
    pub population_std_error: f64,
}

impl RabiDataPoint {
    pub fn new(scatter_counts: f64, excited_population: f64, population_std_error: f64) -> Result<Self> {
        if !(scatter_counts.is_finite() && scatter_counts >= 0.0) {
            return Err(Error::invalid(format!(
                "scatter counts must be non-negative, got {scatter_counts}"
            )));
        }
        // a 3/2-scaled estimate may overshoot 1 statistically
        if !(0.0..=1.05).contains(&excited_population) {
            return Err(Error::invalid(format!(
                "population {excited_population} outside [0, 1.05]"
            )));
        }
        if !(population_std_error.is_finite() && population_std_error >= 0.0) {
            return Err(Error::invalid("population standard error must be non-negative"));
        }
        Ok(Self {
            scatter_counts,
            excited_population,
            population_std_error,
        })
    }
}

/// Fitted curve `P_ex(α √C_sc, Δ, t_eff)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RabiCurveModel {
    /// rad/s per √count.
    pub alpha: f64,
    pub alpha_variance: f64,
    pub t_eff: Duration,
    pub detuning: AngularFrequency,
    pub fit: FitResult,
}

impl RabiCurveModel {
    pub fn alpha_std_error(&self) -> f64 {
        self.alpha_variance.max(0.0).sqrt()
    }

    pub fn rabi_frequency(&self, scatter_counts: f64) -> f64 {
        self.alpha * scatter_counts.max(0.0).sqrt()
    }

    pub fn pulse_area(&self, scatter_counts: f64) -> f64 {
        self.rabi_frequency(scatter_counts) * self.t_eff.value()
    }

    pub fn predict(&self, scatter_counts: f64) -> f64 {
        rect_probability(
            self.rabi_frequency(scatter_counts),
            self.detuning.value(),
            self.t_eff.value(),
        )
    }

    /// ∂P/∂α at the given scatter counts.
    pub fn d_alpha(&self, scatter_counts: f64) -> f64 {
        let root = scatter_counts.max(0.0).sqrt();
        rect_probability_gradient(self.alpha * root, self.detuning.value(), self.t_eff.value()).d_rabi * root
    }

    /// Reduced chi-square of the fit.
    pub fn reduced_chi2(&self, points: usize) -> f64 {
        if points <= 1 {
            return f64::NAN;
        }
        self.fit.residual_norm.powi(2) / (points - 1) as f64
    }
}

/// Standard errors floor: points reported with zero error would dominate.
const MIN_STD_ERROR: f64 = 1e-6;

struct RabiProblem<'a> {
    points: &'a [RabiDataPoint],
    t_eff: f64,
    detuning: f64,
}

impl RabiProblem<'_> {
    fn weight(p: &RabiDataPoint) -> f64 {
        1.0 / p.population_std_error.max(MIN_STD_ERROR)
    }

    fn chi2(&self, alpha: f64) -> f64 {
        self.points
            .iter()
            .map(|p| {
                let model = rect_probability(alpha * p.scatter_counts.sqrt(), self.detuning, self.t_eff);
                ((model - p.excited_population) * Self::weight(p)).powi(2)
            })
            .sum()
    }
}

impl LeastSquares for RabiProblem<'_> {
    fn residuals(&self, params: &DVector<f64>) -> DVector<f64> {
        let alpha = params[0];
        DVector::from_iterator(
            self.points.len(),
            self.points.iter().map(|p| {
                let model = rect_probability(alpha * p.scatter_counts.sqrt(), self.detuning, self.t_eff);
                (model - p.excited_population) * Self::weight(p)
            }),
        )
    }

    fn jacobian(&self, params: &DVector<f64>) -> DMatrix<f64> {
        let alpha = params[0];
        DMatrix::from_iterator(
            self.points.len(),
            1,
            self.points.iter().map(|p| {
                let root = p.scatter_counts.sqrt();
                rect_probability_gradient(alpha * root, self.detuning, self.t_eff).d_rabi * root * Self::weight(p)
            }),
        )
    }

    fn feasible(&self, params: &DVector<f64>) -> bool {
        params[0] > 0.0
    }
}

/// Pulse-area range scanned for the starting value of α, in radians at the
/// largest scatter count.
const GUESS_AREA_RANGE: (f64, f64) = (0.05, 60.0);
const GUESS_GRID: usize = 3000;

/// Weighted least-squares fit of α with `t_eff` and `detuning` fixed.
///
/// The starting value comes from a log-spaced scan of α; among scan values
/// whose χ² is within `max(1, 1%)` of the best, the smallest α wins, so the
/// fit locks onto the first Rabi flop rather than a faster alias.
pub fn fit_rabi_curve(points: &[RabiDataPoint], t_eff: Duration, detuning: AngularFrequency) -> Result<RabiCurveModel> {
    if t_eff.value() <= 0.0 {
        return Err(Error::invalid("effective duration must be positive"));
    }
    if let Some(bad) = points.iter().find(|p| {
        !(p.scatter_counts.is_finite() && p.scatter_counts >= 0.0 && p.excited_population.is_finite())
            || p.population_std_error.is_nan()
            || p.population_std_error < 0.0
    }) {
        return Err(Error::invalid(format!("invalid data point {bad:?}")));
    }
    let mut distinct: Vec<f64> = points.iter().map(|p| p.scatter_counts).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 2 || distinct.last().copied().unwrap_or(0.0) <= 0.0 {
        return Err(Error::NonIdentifiable(format!(
            "need at least two distinct scatter counts with one positive, got {}",
            distinct.len()
        )));
    }
    let c_max = *distinct.last().unwrap();
    let problem = RabiProblem {
        points,
        t_eff: t_eff.value(),
        detuning: detuning.value(),
    };

    let scale = 1.0 / (t_eff.value() * c_max.sqrt());
    let (lo, hi) = (GUESS_AREA_RANGE.0 * scale, GUESS_AREA_RANGE.1 * scale);
    let grid: Vec<(f64, f64)> = (0..GUESS_GRID)
        .map(|k| {
            let alpha = lo * (hi / lo).powf(k as f64 / (GUESS_GRID - 1) as f64);
            (alpha, problem.chi2(alpha))
        })
        .collect();
    let best = grid.iter().map(|g| g.1).fold(f64::INFINITY, f64::min);
    let threshold = best + (0.01 * best).max(1.0);
    let (start, _) = *grid
        .iter()
        .find(|g| g.1 <= threshold)
        .expect("the best grid point satisfies its own threshold");
    // local refinement on the grid before handing over to the damped solver
    let start = grid
        .windows(3)
        .find(|w| w[1].0 >= start && w[1].1 <= w[0].1 && w[1].1 <= w[2].1)
        .map_or(start, |w| w[1].0);

    let fit = levenberg_marquardt(
        &problem,
        DVector::from_element(1, start),
        &["alpha"],
        LmOptions::default(),
    )?;
    Ok(RabiCurveModel {
        alpha: fit.parameters[0],
        alpha_variance: fit.covariance[0][0],
        t_eff,
        detuning,
        fit,
    })
}

/// Standard errors of the parameters held fixed in the fit.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FixedParameterUncertainty {
    pub t_eff: f64,
    pub detuning: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandPoint {
    pub scatter_counts: f64,
    pub pulse_area: f64,
    pub center: f64,
    pub lower: f64,
    pub upper: f64,
}

/// `P ± n_σ |∂P/∂α| σ_α` on each grid point.
pub fn confidence_band(model: &RabiCurveModel, c_sc_grid: &[f64], n_sigma: f64) -> Vec<BandPoint> {
    confidence_band_with(model, c_sc_grid, n_sigma, FixedParameterUncertainty::default())
}

/// [`confidence_band`] widened in quadrature by the uncertainties of the
/// fixed duration and detuning.
pub fn confidence_band_with(
    model: &RabiCurveModel,
    c_sc_grid: &[f64],
    n_sigma: f64,
    fixed: FixedParameterUncertainty,
) -> Vec<BandPoint> {
    let sigma_alpha = model.alpha_std_error();
    c_sc_grid
        .iter()
        .map(|&c| {
            let root = c.max(0.0).sqrt();
            let omega = model.alpha * root;
            let g = rect_probability_gradient(omega, model.detuning.value(), model.t_eff.value());
            let var = (g.d_rabi * root * sigma_alpha).powi(2)
                + (g.d_duration * fixed.t_eff).powi(2)
                + (g.d_detuning * fixed.detuning).powi(2);
            let center = model.predict(c);
            let half = n_sigma * var.sqrt();
            BandPoint {
                scatter_counts: c,
                pulse_area: model.pulse_area(c),
                center,
                lower: center - half,
                upper: center + half,
            }
        })
        .collect()
}
