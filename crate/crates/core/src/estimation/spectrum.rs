//! Gaussian-plus-baseline fit of a sampled spectrum.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::lm::{levenberg_marquardt, FitResult, LeastSquares, LmOptions};
use crate::pulse::SpectrumModel;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianSpectrumFit {
    /// `instrument_sigma` is left at zero; callers set it from the
    /// spectrometer resolution.
    pub model: SpectrumModel,
    pub baseline: f64,
    pub center_std_error: f64,
    pub sigma_std_error: f64,
    pub amplitude_std_error: f64,
    pub fit: FitResult,
}

/// Peak height required relative to the residual RMS.
const MIN_PEAK_TO_RESIDUAL: f64 = 10.0;

/// Fit in normalised coordinates `x = (f − offset) / scale`, `y / y_scale`.
struct GaussianProblem {
    x: Vec<f64>,
    y: Vec<f64>,
}

impl GaussianProblem {
    fn eval(p: &DVector<f64>, x: f64) -> (f64, [f64; 4]) {
        let (a, x0, s, b) = (p[0], p[1], p[2], p[3]);
        let u = (x - x0) / s;
        let g = (-0.5 * u * u).exp();
        (a * g + b, [g, a * g * u / s, a * g * u * u / s, 1.0])
    }
}

impl LeastSquares for GaussianProblem {
    fn residuals(&self, p: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.x.len(),
            self.x.iter().zip(&self.y).map(|(&x, &y)| Self::eval(p, x).0 - y),
        )
    }

    fn jacobian(&self, p: &DVector<f64>) -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(self.x.len(), 4);
        for (i, &x) in self.x.iter().enumerate() {
            let (_, d) = Self::eval(p, x);
            for (j, v) in d.into_iter().enumerate() {
                jac[(i, j)] = v;
            }
        }
        jac
    }

    fn feasible(&self, p: &DVector<f64>) -> bool {
        p[0] > 0.0 && p[2] > 0.0
    }
}

/// Least-squares fit of `A exp(−(f−f₀)²/2σ²) + baseline` to
/// `(frequency_Hz, amplitude)` samples.
pub fn fit_gaussian_spectrum(samples: &[(f64, f64)]) -> Result<GaussianSpectrumFit> {
    if samples.len() < 4 {
        return Err(Error::invalid(format!(
            "need at least 4 spectrum samples, got {}",
            samples.len()
        )));
    }
    if samples.iter().any(|(f, a)| !f.is_finite() || !a.is_finite()) {
        return Err(Error::invalid("spectrum contains non-finite values"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

    let f_lo = sorted[0].0;
    let f_hi = sorted[sorted.len() - 1].0;
    let span = f_hi - f_lo;
    if !(span > 0.0) {
        return Err(Error::fit("all samples share one frequency", 0));
    }
    let offset = 0.5 * (f_lo + f_hi);
    let scale = 0.5 * span;
    let (y_min, y_max) = sorted
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, a)| {
            (lo.min(a), hi.max(a))
        });
    let y_scale = y_max.abs().max(y_min.abs());
    if !(y_max - y_min > 1e-12 * y_scale) || y_scale == 0.0 {
        return Err(Error::fit("spectrum is flat", 0));
    }
    let peak_index = sorted
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .map(|(i, _)| i)
        .unwrap();
    if peak_index == 0 || peak_index == sorted.len() - 1 {
        return Err(Error::fit("spectrum maximum lies on the boundary (monotone data)", 0));
    }

    let x: Vec<f64> = sorted.iter().map(|s| (s.0 - offset) / scale).collect();
    let y: Vec<f64> = sorted.iter().map(|s| s.1 / y_scale).collect();
    let base0 = y_min / y_scale;
    let amp0 = (y_max - y_min) / y_scale;
    // width from the half-maximum crossings around the peak
    let half = base0 + 0.5 * amp0;
    let left = (0..peak_index).rev().find(|&i| y[i] < half).map_or(x[0], |i| x[i]);
    let right = (peak_index + 1..y.len())
        .find(|&i| y[i] < half)
        .map_or(x[x.len() - 1], |i| x[i]);
    let min_step = x.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    let sigma0 = ((right - left) / crate::pulse::FWHM_PER_SIGMA).max(min_step);
    let start = DVector::from_vec(vec![amp0, x[peak_index], sigma0, base0]);

    let problem = GaussianProblem { x, y };
    let fit = levenberg_marquardt(
        &problem,
        start,
        &["amplitude", "center", "sigma", "baseline"],
        LmOptions::default(),
    )?;
    let p = &fit.parameters;
    let dof = samples.len().saturating_sub(4).max(1) as f64;
    let rms = fit.residual_norm / (samples.len() as f64).sqrt();
    let var_scale = fit.residual_norm.powi(2) / dof;
    let se = |i: usize| (fit.covariance[i][i] * var_scale).max(0.0).sqrt();

    let center_x = p[1];
    let sigma_x = p[2];
    if !(-1.0..=1.0).contains(&center_x) {
        return Err(Error::fit("fitted centre outside the sampled range", fit.iterations));
    }
    if sigma_x < 0.5 * min_step || sigma_x > 2.0 {
        return Err(Error::fit(
            "fitted width incompatible with the sampling",
            fit.iterations,
        ));
    }
    if p[0] < MIN_PEAK_TO_RESIDUAL * rms || se(2) > 0.5 * sigma_x {
        return Err(Error::fit("no significant peak above the noise", fit.iterations));
    }

    let model = SpectrumModel {
        center_frequency: offset + center_x * scale,
        sigma: sigma_x * scale,
        amplitude: p[0] * y_scale,
        instrument_sigma: 0.0,
    };
    Ok(GaussianSpectrumFit {
        model,
        baseline: p[3] * y_scale,
        center_std_error: se(1) * scale,
        sigma_std_error: se(2) * scale,
        amplitude_std_error: se(0) * y_scale,
        fit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::cycle_rng;
    use rand_distr::{Distribution, Normal};

    fn gaussian(center: f64, sigma: f64, amp: f64, base: f64, n: usize, span: f64) -> Vec<(f64, f64)> {
        (0..n)
            .map(|i| {
                let f = center - span / 2.0 + span * i as f64 / (n - 1) as f64 + 0.123 * span / n as f64;
                (f, amp * (-0.5 * ((f - center) / sigma).powi(2)).exp() + base)
            })
            .collect()
    }

    #[test]
    fn exact_samples_recovered() {
        let s = gaussian(811.29e12 - 33e9, 120e9, 3.5, 0.2, 201, 1.2e12);
        let fit = fit_gaussian_spectrum(&s).unwrap();
        assert!((fit.model.center_frequency - (811.29e12 - 33e9)).abs() < 1e-10 * 120e9);
        assert!((fit.model.sigma / 120e9 - 1.0).abs() < 1e-10);
        assert!((fit.model.amplitude / 3.5 - 1.0).abs() < 1e-10);
        assert!((fit.baseline - 0.2).abs() < 1e-10);
    }

    #[test]
    fn noisy_samples_within_errors() {
        let mut s = gaussian(-190e9, 120e9, 1.0, 0.0, 301, 1.5e12);
        let noise = Normal::new(0.0, 0.01).unwrap();
        let mut rng = cycle_rng(9, 9, 9);
        for p in &mut s {
            p.1 += noise.sample(&mut rng);
        }
        let fit = fit_gaussian_spectrum(&s).unwrap();
        assert!((fit.model.center_frequency + 190e9).abs() < 4.0 * fit.center_std_error);
        assert!((fit.model.sigma - 120e9).abs() < 4.0 * fit.sigma_std_error);
    }

    #[test]
    fn degenerate_inputs_fail() {
        let flat: Vec<(f64, f64)> = (0..50).map(|i| (i as f64, 1.0)).collect();
        assert!(matches!(fit_gaussian_spectrum(&flat), Err(Error::FitFailure { .. })));
        let monotone: Vec<(f64, f64)> = (0..50).map(|i| (i as f64, i as f64)).collect();
        assert!(matches!(
            fit_gaussian_spectrum(&monotone),
            Err(Error::FitFailure { .. })
        ));
        assert!(fit_gaussian_spectrum(&flat[..3]).is_err());
        let noise = Normal::new(0.0, 1.0).unwrap();
        for seed in 0..20 {
            let mut rng = cycle_rng(seed, 1, 1);
            let white: Vec<(f64, f64)> = (0..200).map(|i| (i as f64 * 1e9, noise.sample(&mut rng))).collect();
            assert!(fit_gaussian_spectrum(&white).is_err(), "seed {seed}");
        }
    }
}
