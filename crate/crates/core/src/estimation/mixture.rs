//! Bright/dark mixture fits of readout photon-count histograms.
//!
//! Dark shots follow a Poisson law with the background mean. Bright shots
//! follow a Poisson law with signal plus background, except that the ion may
//! be pumped dark at an exponentially distributed time during readout, after
//! which only background counts accrue. With `ε` the leak rate times the
//! readout time (`s = t/T`):
//!
//! ```text
//! P(n) = e^{-ε} Pois(n; μ_s + μ_b) + ε ∫₀¹ e^{-ε s} Pois(n; μ_s s + μ_b) ds
//! ```

use std::f64::consts::PI;
use std::sync::OnceLock;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::protocol::{CountHistogram, ReferenceHistograms};
use crate::quantities::TransitionConstants;
use crate::{Error, Result};

const PMF_FLOOR: f64 = 1e-300;
const QUADRATURE_NODES: usize = 16;
/// Signal counts spanned by one quadrature panel.
const PANEL_SIGNAL: f64 = 8.0;

/// Count distribution of a bright ion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BrightPmf {
    pub signal_mean: f64,
    pub background_mean: f64,
    /// Leak rate × readout time.
    pub leak: f64,
}

impl BrightPmf {
    /// Probabilities of counts `0..=max_count`.
    pub fn table(&self, max_count: u64, ln_fact: &[f64]) -> Vec<f64> {
        let n_max = max_count as usize;
        let full = self.signal_mean + self.background_mean;
        let mut out: Vec<f64> = (0..=n_max)
            .map(|n| (-self.leak).exp() * poisson(n, full, ln_fact))
            .collect();
        if self.leak > 0.0 {
            // Pois(n; μ_s s + μ_b) has width ~√n/μ_s in s: one panel per few
            // signal counts keeps the quadrature resolved
            let panels = (self.signal_mean / PANEL_SIGNAL).ceil().max(1.0) as usize;
            let width = 1.0 / panels as f64;
            for panel in 0..panels {
                for &(x, w) in gauss_legendre_unit() {
                    let s = (panel as f64 + x) * width;
                    let mean = self.signal_mean * s + self.background_mean;
                    let weight = w * width * self.leak * (-self.leak * s).exp();
                    for (n, p) in out.iter_mut().enumerate() {
                        *p += weight * poisson(n, mean, ln_fact);
                    }
                }
            }
        }
        out
    }
}

/// Poisson probability with `ln_fact[n] = ln n!`.
fn poisson(n: usize, mean: f64, ln_fact: &[f64]) -> f64 {
    if mean <= 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    (n as f64 * mean.ln() - mean - ln_fact[n]).exp()
}

fn ln_factorials(max: u64) -> Vec<f64> {
    let mut out = Vec::with_capacity(max as usize + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for k in 1..=max {
        acc += (k as f64).ln();
        out.push(acc);
    }
    out
}

/// Gauss–Legendre nodes and weights on [0, 1].
fn gauss_legendre_unit() -> &'static [(f64, f64)] {
    static NODES: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    NODES.get_or_init(|| {
        let n = QUADRATURE_NODES;
        (1..=n)
            .map(|i| {
                let mut x = (PI * (i as f64 - 0.25) / (n as f64 + 0.5)).cos();
                let mut dp = 0.0;
                for _ in 0..100 {
                    let (mut p0, mut p1) = (1.0, x);
                    for k in 2..=n {
                        let k = k as f64;
                        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                        p0 = p1;
                        p1 = p2;
                    }
                    dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                    let dx = p1 / dp;
                    x -= dx;
                    if dx.abs() < 1e-16 {
                        break;
                    }
                }
                let w = 2.0 / ((1.0 - x * x) * dp * dp);
                (0.5 * (x + 1.0), 0.5 * w)
            })
            .collect()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MixtureMode {
    /// Component distributions fixed from reference histograms.
    Calibrated,
    /// Weight and both Poisson means fitted together.
    CoFitted,
}

/// Component distributions estimated from bright and dark reference shots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub bright: BrightPmf,
    pub dark_mean: f64,
}

impl Calibration {
    /// Maximum-likelihood component parameters: the dark mean is the dark
    /// sample mean; signal mean and leak are fitted to the bright shots with
    /// the background held at the dark mean.
    pub fn from_references(refs: &ReferenceHistograms) -> Result<Self> {
        if refs.dark.total() == 0 || refs.bright.total() == 0 {
            return Err(Error::invalid("reference histograms must not be empty"));
        }
        let dark_mean = refs.dark.mean();
        let excess = refs.bright.mean() - dark_mean;
        if !(excess > 0.0) {
            return Err(Error::NonIdentifiable(
                "bright reference is not brighter than the dark reference".into(),
            ));
        }
        let max = refs.bright.max_count().unwrap_or(0);
        let ln_fact = ln_factorials(max);
        let loglik = |signal: f64, leak: f64| {
            let table = BrightPmf {
                signal_mean: signal,
                background_mean: dark_mean,
                leak,
            }
            .table(max, &ln_fact);
            refs.bright
                .iter()
                .map(|(c, n)| n as f64 * table[c as usize].max(PMF_FLOOR).ln())
                .sum::<f64>()
        };
        // Profile likelihood in the leak, with the signal maximised inside.
        let best_signal = |leak: f64| {
            // with leak ε the mean signal is μ_s (1 - (1 - e^{-ε})/ε), so the
            // optimum lies below excess / that factor
            let upper = 4.0 * excess / leak_mean_factor(leak) + 10.0;
            golden_max(|s| loglik(s, leak), 0.0, upper, 1e-9)
        };
        let profile = |leak: f64| {
            let s = best_signal(leak);
            loglik(s, leak)
        };
        let leak = golden_max(profile, 0.0, 20.0, 1e-7);
        // the golden search never evaluates the boundary itself
        let leak = if profile(0.0) >= profile(leak) { 0.0 } else { leak };
        let signal_mean = if leak == 0.0 { excess } else { best_signal(leak) };
        Ok(Self {
            bright: BrightPmf {
                signal_mean,
                background_mean: dark_mean,
                leak,
            },
            dark_mean,
        })
    }
}

/// Fraction of the full readout time a bright ion stays bright on average.
fn leak_mean_factor(leak: f64) -> f64 {
    if leak < 1e-8 {
        1.0 - 0.5 * leak
    } else {
        (1.0 - (-leak).exp()) / leak
    }
}

/// Maximises a unimodal function on `[lo, hi]`.
fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, rel_tol: f64) -> f64 {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - ratio * (hi - lo);
    let mut b = lo + ratio * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    for _ in 0..200 {
        if (hi - lo) <= rel_tol * (a.abs() + b.abs()).max(1e-12) {
            break;
        }
        if fa < fb {
            lo = a;
            a = b;
            fa = fb;
            b = lo + ratio * (hi - lo);
            fb = f(b);
        } else {
            hi = b;
            b = a;
            fb = fa;
            a = hi - ratio * (hi - lo);
            fa = f(a);
        }
    }
    0.5 * (lo + hi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureFit {
    /// Weight of the bright component.
    pub bright_weight: f64,
    pub bright: BrightPmf,
    pub dark_mean: f64,
    pub log_likelihood: f64,
    pub weight_std_error: f64,
    pub mode: MixtureMode,
}

/// Fits `w·PMF_bright + (1−w)·PMF_dark` to `hist`.
///
/// With reference histograms the component distributions are fixed from
/// them first; without, both Poisson means are co-fitted with the weight.
pub fn fit_histogram(hist: &CountHistogram, references: Option<&ReferenceHistograms>) -> Result<MixtureFit> {
    match references {
        Some(refs) => fit_histogram_with(hist, &Calibration::from_references(refs)?),
        None => co_fit(hist),
    }
}

/// Weight-only fit with fixed component distributions.
pub fn fit_histogram_with(hist: &CountHistogram, calibration: &Calibration) -> Result<MixtureFit> {
    if hist.total() == 0 {
        return Err(Error::invalid("histogram is empty"));
    }
    let max = hist.max_count().unwrap_or(0);
    let ln_fact = ln_factorials(max);
    let bright = calibration.bright.table(max, &ln_fact);
    let bins: Vec<(f64, f64, f64)> = hist
        .iter()
        .map(|(c, n)| {
            let c = c as usize;
            (
                n as f64,
                bright[c].max(PMF_FLOOR),
                poisson(c, calibration.dark_mean, &ln_fact).max(PMF_FLOOR),
            )
        })
        .collect();
    let (w, info) = weight_mle(&bins);
    Ok(MixtureFit {
        bright_weight: w,
        bright: calibration.bright,
        dark_mean: calibration.dark_mean,
        log_likelihood: mixture_loglik(&bins, w),
        weight_std_error: 1.0 / info.sqrt(),
        mode: MixtureMode::Calibrated,
    })
}

fn mixture_loglik(bins: &[(f64, f64, f64)], w: f64) -> f64 {
    bins.iter()
        .map(|&(n, b, d)| n * (w * b + (1.0 - w) * d).max(PMF_FLOOR).ln())
        .sum()
}

/// Maximum-likelihood weight in [0, 1] and the observed information there.
fn weight_mle(bins: &[(f64, f64, f64)]) -> (f64, f64) {
    let score = |w: f64| -> (f64, f64) {
        bins.iter().fold((0.0, 0.0), |(s, i), &(n, b, d)| {
            let m = w * b + (1.0 - w) * d;
            let diff = b - d;
            (s + n * diff / m, i + n * diff * diff / (m * m))
        })
    };
    let w = if score(0.0).0 <= 0.0 {
        0.0
    } else if score(1.0).0 >= 0.0 {
        1.0
    } else {
        // the log-likelihood is concave in w: safeguarded Newton on the score
        let (mut lo, mut hi) = (0.0, 1.0);
        let mut w = 0.5;
        for _ in 0..200 {
            let (s, info) = score(w);
            if s > 0.0 {
                lo = w;
            } else {
                hi = w;
            }
            let newton = w + s / info;
            let next = if newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if (next - w).abs() < 1e-15 || hi - lo < 1e-15 {
                w = next;
                break;
            }
            w = next;
        }
        w
    };
    (w, score(w).1)
}

fn co_fit(hist: &CountHistogram) -> Result<MixtureFit> {
    if hist.total() == 0 {
        return Err(Error::invalid("histogram is empty"));
    }
    if hist.bins().len() < 2 {
        return Err(Error::NonIdentifiable(
            "a single-valued histogram cannot separate bright and dark components".into(),
        ));
    }
    let max = hist.max_count().unwrap_or(0);
    let ln_fact = ln_factorials(max);
    let total = hist.total() as f64;
    let split = hist.mean();
    let side_mean = |above: bool| {
        let (s, n) = hist
            .iter()
            .filter(|&(c, _)| (c as f64 > split) == above)
            .fold((0.0, 0.0), |(s, m), (c, n)| (s + c as f64 * n as f64, m + n as f64));
        (s / n.max(1.0), n)
    };
    let (mut mb, nb) = side_mean(true);
    let (mut md, _) = side_mean(false);
    let mut w = nb / total;

    let mut converged = false;
    for _ in 0..20_000 {
        let (mut sw, mut sb, mut sd) = (0.0, 0.0, 0.0);
        for (c, n) in hist.iter() {
            let pb = w * poisson(c as usize, mb, &ln_fact);
            let pd = (1.0 - w) * poisson(c as usize, md, &ln_fact);
            let r = if pb + pd > 0.0 { pb / (pb + pd) } else { 0.5 };
            let n = n as f64;
            sw += n * r;
            sb += n * r * c as f64;
            sd += n * (1.0 - r) * c as f64;
        }
        let w_new = sw / total;
        let mb_new = if sw > 0.0 { sb / sw } else { mb };
        let md_new = if total - sw > 0.0 { sd / (total - sw) } else { md };
        let delta = (w_new - w).abs() + (mb_new - mb).abs() / mb.max(1.0) + (md_new - md).abs() / md.max(1.0);
        w = w_new;
        mb = mb_new;
        md = md_new;
        if delta < 1e-12 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::fit("EM did not converge for co-fitted mixture", 20_000));
    }
    if mb < md {
        std::mem::swap(&mut mb, &mut md);
        w = 1.0 - w;
    }
    if (mb - md).abs() < 1e-9 {
        return Err(Error::NonIdentifiable("bright and dark components coincide".into()));
    }
    let loglik = |w: f64, mb: f64, md: f64| -> f64 {
        hist.iter()
            .map(|(c, n)| {
                let c = c as usize;
                let m = w * poisson(c, mb, &ln_fact) + (1.0 - w) * poisson(c, md, &ln_fact);
                n as f64 * m.max(PMF_FLOOR).ln()
            })
            .sum()
    };
    let conditional_info = {
        let bins: Vec<(f64, f64, f64)> = hist
            .iter()
            .map(|(c, n)| {
                let c = c as usize;
                (
                    n as f64,
                    poisson(c, mb, &ln_fact).max(PMF_FLOOR),
                    poisson(c, md, &ln_fact).max(PMF_FLOOR),
                )
            })
            .collect();
        weight_mle(&bins).1.max(0.0)
    };
    let std_error = if w > 1e-6 && w < 1.0 - 1e-6 {
        let p = [w, mb, md];
        let h = [1e-5, 1e-5 * mb.max(1.0), 1e-5 * md.max(1e-2)];
        let at = |d: [f64; 3]| loglik(p[0] + d[0], p[1] + d[1], p[2] + d[2]);
        let mut hess = Matrix3::zeros();
        for i in 0..3 {
            for j in 0..3 {
                let mut pp = [0.0; 3];
                let mut pm = [0.0; 3];
                let mut mp = [0.0; 3];
                let mut mm = [0.0; 3];
                pp[i] += h[i];
                pp[j] += h[j];
                pm[i] += h[i];
                pm[j] -= h[j];
                mp[i] -= h[i];
                mp[j] += h[j];
                mm[i] -= h[i];
                mm[j] -= h[j];
                hess[(i, j)] = (at(pp) - at(pm) - at(mp) + at(mm)) / (4.0 * h[i] * h[j]);
            }
        }
        (-hess)
            .try_inverse()
            .map(|cov| cov[(0, 0)])
            .filter(|v| v.is_finite() && *v > 0.0)
            .map(f64::sqrt)
            .unwrap_or(1.0 / conditional_info.sqrt())
    } else {
        1.0 / conditional_info.sqrt()
    };
    Ok(MixtureFit {
        bright_weight: w,
        bright: BrightPmf {
            signal_mean: mb - md,
            background_mean: md,
            leak: 0.0,
        },
        dark_mean: md,
        log_likelihood: loglik(w, mb, md),
        weight_std_error: std_error,
        mode: MixtureMode::CoFitted,
    })
}

/// Excited population before decay from the bright-state weight: `w · 3/2`
/// for equal branching into two bright and one dark state.
pub fn population_from_bright_weight(w: f64) -> f64 {
    1.5 * w
}

/// [`population_from_bright_weight`] for an arbitrary branching table.
pub fn population_from_bright_weight_for(w: f64, constants: &TransitionConstants) -> f64 {
    w / constants.bright_branching()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::cycle_rng;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, Poisson};

    fn synthetic(w: f64, bright_mean: f64, dark_mean: f64, n: u64, seed: u64) -> CountHistogram {
        let b = Poisson::new(bright_mean + dark_mean).unwrap();
        let d = Poisson::new(dark_mean).unwrap();
        let mut rng = cycle_rng(seed, 77, 0);
        CountHistogram::from_counts((0..n).map(|_| {
            if rng.random::<f64>() < w {
                b.sample(&mut rng) as u64
            } else {
                d.sample(&mut rng) as u64
            }
        }))
    }

    fn calibration(bright_mean: f64, dark_mean: f64) -> Calibration {
        Calibration {
            bright: BrightPmf {
                signal_mean: bright_mean,
                background_mean: dark_mean,
                leak: 0.0,
            },
            dark_mean,
        }
    }

    #[test]
    fn quadrature_integrates_polynomials() {
        let nodes = gauss_legendre_unit();
        let integral: f64 = nodes.iter().map(|(x, w)| w * x.powi(7)).sum();
        assert!((integral - 1.0 / 8.0).abs() < 1e-14);
        let total: f64 = nodes.iter().map(|(_, w)| w).sum();
        assert!((total - 1.0).abs() < 1e-14);
    }

    #[test]
    fn leaky_pmf_is_normalised() {
        let ln_fact = ln_factorials(400);
        for signal in [2.0, 25.0, 190.0] {
            let pmf = BrightPmf {
                signal_mean: signal,
                background_mean: 1.0,
                leak: 0.7,
            };
            let table = pmf.table(400, &ln_fact);
            let total: f64 = table.iter().sum();
            assert!((total - 1.0).abs() < 1e-10, "{total}");
            let mean: f64 = table.iter().enumerate().map(|(n, p)| n as f64 * p).sum();
            let expected = 1.0 + signal * leak_mean_factor(0.7);
            assert!((mean - expected).abs() < 1e-8 * expected, "{mean} vs {expected}");
        }
    }

    #[test]
    fn pure_dark_gives_zero_weight() {
        let h = synthetic(0.0, 20.0, 1.0, 68_500, 1);
        let fit = fit_histogram_with(&h, &calibration(20.0, 1.0)).unwrap();
        assert!(fit.bright_weight <= 2.0 * fit.weight_std_error, "{fit:?}");
    }

    #[test]
    fn pure_bright_gives_unit_weight() {
        let h = synthetic(1.0, 20.0, 1.0, 68_500, 2);
        let fit = fit_histogram_with(&h, &calibration(20.0, 1.0)).unwrap();
        assert!(
            (fit.bright_weight - 1.0).abs() <= 2.0 * fit.weight_std_error + 1e-12,
            "{fit:?}"
        );
    }

    #[test]
    fn recovers_mixture_weight() {
        let h = synthetic(0.6, 20.0, 1.0, 68_500, 3);
        let fit = fit_histogram_with(&h, &calibration(20.0, 1.0)).unwrap();
        // binomial limit for well-separated components
        let expected_se = (0.6 * 0.4 / 68_500f64).sqrt();
        assert!((fit.weight_std_error - expected_se).abs() < 0.1 * expected_se);
        assert!((fit.bright_weight - 0.6).abs() < 3.0 * fit.weight_std_error);
    }

    #[test]
    fn co_fit_recovers_weight_and_means() {
        let h = synthetic(0.6, 20.0, 1.0, 68_500, 4);
        let fit = fit_histogram(&h, None).unwrap();
        assert_eq!(fit.mode, MixtureMode::CoFitted);
        assert!((fit.bright_weight - 0.6).abs() < 3.0 * fit.weight_std_error);
        assert!((fit.dark_mean - 1.0).abs() < 0.05);
        assert!((fit.bright.signal_mean - 20.0).abs() < 0.2);
    }

    #[test]
    fn single_bin_without_calibration_is_not_identifiable() {
        let h = CountHistogram::from_counts([3, 3, 3]);
        assert!(matches!(fit_histogram(&h, None), Err(Error::NonIdentifiable(_))));
        assert!(fit_histogram_with(&h, &calibration(20.0, 1.0)).is_ok());
        assert!(fit_histogram(&CountHistogram::new(), None).is_err());
    }

    #[test]
    fn calibration_from_references() {
        let refs = ReferenceHistograms {
            bright: synthetic(1.0, 20.0, 1.0, 50_000, 5),
            dark: synthetic(0.0, 20.0, 1.0, 50_000, 6),
        };
        let cal = Calibration::from_references(&refs).unwrap();
        assert!((cal.dark_mean - 1.0).abs() < 0.03);
        assert!((cal.bright.signal_mean - 20.0).abs() < 0.2);
        assert!(cal.bright.leak < 0.05);
        let h = synthetic(0.3, 20.0, 1.0, 68_500, 7);
        let fit = fit_histogram(&h, Some(&refs)).unwrap();
        assert!((fit.bright_weight - 0.3).abs() < 3.0 * fit.weight_std_error);
    }

    #[test]
    fn calibration_detects_leak() {
        use crate::protocol::{simulate_references, CycleTiming, ReadoutModel};
        let readout = ReadoutModel {
            bright_rate: 30.0 / 227e-6,
            dark_rate: 1.0 / 227e-6,
            leak_rate: 0.5 / 227e-6,
            preparation_error: 0.0,
        };
        let refs = simulate_references(&readout, &CycleTiming::default(), 50_000, 8).unwrap();
        let cal = Calibration::from_references(&refs).unwrap();
        assert!((cal.bright.leak - 0.5).abs() < 0.1, "{cal:?}");
        assert!((cal.bright.signal_mean - 30.0).abs() < 1.0, "{cal:?}");
    }

    #[test]
    fn population_scaling() {
        assert!((population_from_bright_weight(2.0 / 3.0) - 1.0).abs() < 1e-15);
        assert_eq!(population_from_bright_weight(0.0), 0.0);
        assert!((population_from_bright_weight(0.6287) - 0.943).abs() < 1e-3);
        let c = crate::quantities::yb171_defaults();
        assert!((population_from_bright_weight_for(0.4, &c) - 0.6).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn scaling_inverts_decay(p in 0.0f64..=1.0) {
            prop_assert!((population_from_bright_weight(p * 2.0 / 3.0) - p).abs() < 1e-15);
        }

        #[test]
        fn weight_ignores_insertion_order(mut counts in proptest::collection::vec(0u64..40, 5..200)) {
            let cal = calibration(20.0, 1.0);
            let a = fit_histogram_with(&CountHistogram::from_counts(counts.clone()), &cal).unwrap();
            counts.reverse();
            let b = fit_histogram_with(&CountHistogram::from_counts(counts), &cal).unwrap();
            prop_assert_eq!(a.bright_weight, b.bright_weight);
        }
    }
}
