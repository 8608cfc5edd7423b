//! Two-level excitation during a picosecond pulse.
//!
//! Spontaneous emission is ignored while the pulse is on (the pulse is
//! thousands of times shorter than the excited-state lifetime); decay is
//! applied afterwards by [`bright_probability_after_decay`].

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::pulse::gaussian_field;
use crate::quantities::{AngularFrequency, Duration, Intensity, TransitionConstants};
use crate::{Error, Result};

/// Amplitudes of ground and excited state in the rotating frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoLevelState {
    pub ground: Complex64,
    pub excited: Complex64,
}

impl TwoLevelState {
    pub fn ground_state() -> Self {
        Self {
            ground: Complex64::new(1.0, 0.0),
            excited: Complex64::new(0.0, 0.0),
        }
    }

    pub fn excited_population(&self) -> f64 {
        self.excited.norm_sqr()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.ground.norm_sqr() + self.excited.norm_sqr()
    }

    fn max_abs_diff(&self, other: &Self) -> f64 {
        (self.ground - other.ground)
            .norm()
            .max((self.excited - other.excited).norm())
    }
}

/// Constant drive over a square pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriveParameters {
    pub rabi_frequency: AngularFrequency,
    pub detuning: AngularFrequency,
    pub duration: Duration,
}

impl DriveParameters {
    pub fn new(rabi_frequency: AngularFrequency, detuning: AngularFrequency, duration: Duration) -> Result<Self> {
        if rabi_frequency.value() < 0.0 {
            return Err(Error::invalid("Rabi frequency must be non-negative"));
        }
        if duration.value() <= 0.0 {
            return Err(Error::invalid("pulse duration must be positive"));
        }
        Ok(Self {
            rabi_frequency,
            detuning,
            duration,
        })
    }
}

/// Excited population after a square pulse:
/// `Ω²/(Ω²+Δ²) · sin²(½ t √(Ω²+Δ²))`.
pub fn excitation_probability_rect(drive: &DriveParameters) -> f64 {
    rect_probability(
        drive.rabi_frequency.value(),
        drive.detuning.value(),
        drive.duration.value(),
    )
}

/// Raw-valued form of [`excitation_probability_rect`] (rad/s, rad/s, s).
#[inline]
pub fn rect_probability(omega: f64, detuning: f64, t: f64) -> f64 {
    let w2 = omega * omega + detuning * detuning;
    if w2 == 0.0 {
        return 0.0;
    }
    let s = (0.5 * t * w2.sqrt()).sin();
    omega * omega / w2 * s * s
}

/// Partial derivatives of [`rect_probability`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RectGradient {
    pub d_rabi: f64,
    pub d_detuning: f64,
    pub d_duration: f64,
}

pub fn rect_probability_gradient(omega: f64, detuning: f64, t: f64) -> RectGradient {
    let w2 = omega * omega + detuning * detuning;
    if w2 == 0.0 {
        return RectGradient {
            d_rabi: 0.0,
            d_detuning: 0.0,
            d_duration: 0.0,
        };
    }
    let w = w2.sqrt();
    let prefactor = omega * omega / w2;
    let half = 0.5 * t * w;
    let sin2 = half.sin().powi(2);
    // d/dW sin²(tW/2) = (t/2) sin(tW)
    let d_sin2_dw = 0.5 * t * (t * w).sin();
    RectGradient {
        d_rabi: 2.0 * omega * detuning * detuning / (w2 * w2) * sin2 + prefactor * d_sin2_dw * omega / w,
        d_detuning: -2.0 * omega * omega * detuning / (w2 * w2) * sin2 + prefactor * d_sin2_dw * detuning / w,
        d_duration: prefactor * 0.5 * w * (t * w).sin(),
    }
}

/// `Ω_th = C Γ √(I_p / 2 I_s)`.
pub fn theoretical_rabi(constants: &TransitionConstants, peak_intensity: Intensity) -> AngularFrequency {
    let ratio = peak_intensity.value() / (2.0 * constants.saturation_intensity.value());
    AngularFrequency::new(constants.clebsch_gordan * constants.gamma.value() * ratio.sqrt())
        .expect("finite Rabi frequency")
}

/// Probability that the ion ends up bright after a full decay, given the
/// excited population left by the pulse.
pub fn bright_probability_after_decay(p_excited: f64, constants: &TransitionConstants) -> Result<f64> {
    if !(0.0..=1.0).contains(&p_excited) {
        return Err(Error::invalid(format!("excited population {p_excited} outside [0, 1]")));
    }
    Ok(p_excited * constants.bright_branching())
}

/// Time-dependent Rabi frequency Ω(t) in rad/s.
pub trait Envelope {
    fn rabi(&self, t: f64) -> f64;
    /// Interval outside which Ω(t) is negligible.
    fn support(&self) -> (f64, f64);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RectangularEnvelope {
    pub rabi: f64,
    pub duration: f64,
}

impl Envelope for RectangularEnvelope {
    fn rabi(&self, _t: f64) -> f64 {
        self.rabi
    }

    fn support(&self) -> (f64, f64) {
        (0.0, self.duration)
    }
}

/// `Ω_peak · exp(-t²/2d²)`, truncated at ±`cutoff`·d.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianEnvelope {
    pub peak_rabi: f64,
    pub duration: f64,
    pub cutoff: f64,
}

impl GaussianEnvelope {
    pub fn new(peak_rabi: f64, duration: Duration) -> Self {
        Self {
            peak_rabi,
            duration: duration.value(),
            cutoff: 10.0,
        }
    }
}

impl Envelope for GaussianEnvelope {
    fn rabi(&self, t: f64) -> f64 {
        self.peak_rabi * gaussian_field(t, self.duration)
    }

    fn support(&self) -> (f64, f64) {
        (-self.cutoff * self.duration, self.cutoff * self.duration)
    }
}

/// Uniformly sampled envelope with linear interpolation between samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledEnvelope {
    pub start: f64,
    pub step: f64,
    pub values: Vec<f64>,
}

impl Envelope for SampledEnvelope {
    fn rabi(&self, t: f64) -> f64 {
        let x = (t - self.start) / self.step;
        if x < 0.0 || self.values.is_empty() {
            return 0.0;
        }
        let i = x.floor() as usize;
        if i + 1 >= self.values.len() {
            return if i + 1 == self.values.len() {
                self.values[i]
            } else {
                0.0
            };
        }
        let frac = x - i as f64;
        self.values[i] * (1.0 - frac) + self.values[i + 1] * frac
    }

    fn support(&self) -> (f64, f64) {
        let n = self.values.len().saturating_sub(1);
        (self.start, self.start + n as f64 * self.step)
    }
}

/// Step control for [`integrate_schroedinger`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepControl {
    /// Bound on both the step-doubling difference and the norm drift.
    pub tolerance: f64,
    pub initial_steps: usize,
    pub max_steps: usize,
}

impl Default for StepControl {
    fn default() -> Self {
        Self {
            tolerance: 1e-11,
            initial_steps: 64,
            max_steps: 1 << 22,
        }
    }
}

/// Integrates `i ċ = H(t) c` across the envelope's support with
/// `H = [[-Δ/2, Ω(t)/2], [Ω(t)/2, Δ/2]]` (basis ground, excited).
///
/// Classic fourth-order Runge–Kutta; the step count is doubled until the
/// Richardson estimate of the error and the norm drift are both below the
/// tolerance.
pub fn integrate_schroedinger(
    envelope: &impl Envelope,
    detuning: AngularFrequency,
    initial: TwoLevelState,
    control: StepControl,
) -> Result<TwoLevelState> {
    if !(control.tolerance > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    let (t0, t1) = envelope.support();
    if !(t1 >= t0) {
        return Err(Error::invalid("envelope support is empty"));
    }
    let start_norm = initial.norm_sqr();
    let mut steps = control.initial_steps.max(1);
    let mut previous = rk4(envelope, detuning.value(), initial, t0, t1, steps);
    loop {
        steps *= 2;
        if steps > control.max_steps {
            return Err(Error::NonConvergence(format!(
                "step count exceeded {} before reaching tolerance {:e}",
                control.max_steps, control.tolerance
            )));
        }
        let current = rk4(envelope, detuning.value(), initial, t0, t1, steps);
        let richardson = current.max_abs_diff(&previous) / 15.0;
        let drift = (current.norm_sqr() - start_norm).abs();
        if richardson < control.tolerance && drift < control.tolerance {
            return Ok(current);
        }
        previous = current;
    }
}

fn rk4(
    envelope: &impl Envelope,
    detuning: f64,
    initial: TwoLevelState,
    t0: f64,
    t1: f64,
    steps: usize,
) -> TwoLevelState {
    let i = Complex64::i();
    let rhs = |t: f64, g: Complex64, e: Complex64| {
        let half_rabi = 0.5 * envelope.rabi(t);
        let half_det = 0.5 * detuning;
        (
            -i * (-half_det * g + half_rabi * e),
            -i * (half_rabi * g + half_det * e),
        )
    };
    let h = (t1 - t0) / steps as f64;
    let (mut g, mut e) = (initial.ground, initial.excited);
    for n in 0..steps {
        let t = t0 + n as f64 * h;
        let (k1g, k1e) = rhs(t, g, e);
        let (k2g, k2e) = rhs(t + 0.5 * h, g + 0.5 * h * k1g, e + 0.5 * h * k1e);
        let (k3g, k3e) = rhs(t + 0.5 * h, g + 0.5 * h * k2g, e + 0.5 * h * k2e);
        let (k4g, k4e) = rhs(t + h, g + h * k3g, e + h * k3e);
        g += h / 6.0 * (k1g + 2.0 * k2g + 2.0 * k3g + k4g);
        e += h / 6.0 * (k1e + 2.0 * k2e + 2.0 * k3e + k4e);
    }
    TwoLevelState { ground: g, excited: e }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pulse::effective_square_duration;
    use crate::quantities::{angular_from_hz, yb171_defaults};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn drive(omega: f64, delta: f64, t: f64) -> DriveParameters {
        DriveParameters::new(
            AngularFrequency::new(omega).unwrap(),
            AngularFrequency::new(delta).unwrap(),
            Duration::new(t).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn closed_form_examples() {
        assert_relative_eq!(
            excitation_probability_rect(&drive(PI / 2e-12, 0.0, 2e-12)),
            1.0,
            epsilon = 1e-15
        );
        assert_eq!(excitation_probability_rect(&drive(0.0, 1e11, 2e-12)), 0.0);
        assert_eq!(rect_probability(0.0, 0.0, 1e-12), 0.0);
        // frozen from an independent adaptive ODE solve of the same square pulse
        let p = excitation_probability_rect(&drive(1.226e12, angular_from_hz(33e9).value(), 2.36e-12));
        assert_relative_eq!(p, 0.961_800_912, epsilon = 1e-8);
        let p = excitation_probability_rect(&drive(1.226e12, angular_from_hz(190e9).value(), 2.25e-12));
        assert_relative_eq!(p, 0.451_513_884, epsilon = 1e-8);
    }

    #[test]
    fn theoretical_rabi_examples() {
        let c = yb171_defaults();
        let omega = theoretical_rabi(&c, Intensity::new(458e9).unwrap());
        assert_relative_eq!(omega.value(), 1.510e12, max_relative = 1e-3);
        assert_eq!(theoretical_rabi(&c, Intensity::ZERO).value(), 0.0);
        let mut unit = c.clone();
        unit.clebsch_gordan = 1.0;
        unit.gamma = AngularFrequency::new(1.0).unwrap();
        let omega = theoretical_rabi(&unit, Intensity::new(2.0 * 508.0).unwrap());
        assert_relative_eq!(omega.value(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn bright_after_decay() {
        let c = yb171_defaults();
        assert_relative_eq!(
            bright_probability_after_decay(1.0, &c).unwrap(),
            2.0 / 3.0,
            epsilon = 1e-15
        );
        assert_eq!(bright_probability_after_decay(0.0, &c).unwrap(), 0.0);
        assert_relative_eq!(bright_probability_after_decay(0.9, &c).unwrap(), 0.6, epsilon = 1e-15);
        assert!(bright_probability_after_decay(1.2, &c).is_err());
        assert!(bright_probability_after_decay(-0.1, &c).is_err());
    }

    #[test]
    fn integrator_resonant_pi_pulse() {
        let env = RectangularEnvelope {
            rabi: PI / 2e-12,
            duration: 2e-12,
        };
        let out = integrate_schroedinger(
            &env,
            AngularFrequency::ZERO,
            TwoLevelState::ground_state(),
            StepControl::default(),
        )
        .unwrap();
        assert!((out.excited_population() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn integrator_matches_closed_form() {
        for &(omega, delta, t) in &[
            (1.226e12, 2.07e11, 2.36e-12),
            (8e11, -1.19e12, 2.25e-12),
            (2.5e12, 5e11, 1.3e-12),
        ] {
            let env = RectangularEnvelope {
                rabi: omega,
                duration: t,
            };
            let out = integrate_schroedinger(
                &env,
                AngularFrequency::new(delta).unwrap(),
                TwoLevelState::ground_state(),
                StepControl::default(),
            )
            .unwrap();
            let exact = rect_probability(omega, delta, t);
            assert!(
                (out.excited_population() - exact).abs() <= 1e-8 * exact,
                "{omega} {delta} {t}"
            );
            assert!((out.norm_sqr() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn gaussian_pulse_with_square_equivalent_area_pi() {
        let d = Duration::from_ps(0.941).unwrap();
        let t_eff = effective_square_duration(d);
        let env = GaussianEnvelope::new(PI / t_eff.value(), d);
        let out = integrate_schroedinger(
            &env,
            AngularFrequency::ZERO,
            TwoLevelState::ground_state(),
            StepControl::default(),
        )
        .unwrap();
        assert!(
            (out.excited_population() - 1.0).abs() < 0.03,
            "{}",
            out.excited_population()
        );
    }

    #[test]
    fn sampled_envelope_interpolates() {
        let env = SampledEnvelope {
            start: 0.0,
            step: 1.0,
            values: vec![0.0, 2.0, 4.0],
        };
        assert_eq!(env.rabi(0.5), 1.0);
        assert_eq!(env.rabi(2.0), 4.0);
        assert_eq!(env.rabi(-1.0), 0.0);
        assert_eq!(env.rabi(5.0), 0.0);
        assert_eq!(env.support(), (0.0, 2.0));
    }

    #[test]
    fn integrator_reports_non_convergence() {
        let env = RectangularEnvelope {
            rabi: 1e14,
            duration: 1e-9,
        };
        let control = StepControl {
            max_steps: 1024,
            ..StepControl::default()
        };
        let err =
            integrate_schroedinger(&env, AngularFrequency::ZERO, TwoLevelState::ground_state(), control).unwrap_err();
        assert!(matches!(err, Error::NonConvergence(_)));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (omega, delta, t) = (1.1e12, 3e11, 2.3e-12);
        let g = rect_probability_gradient(omega, delta, t);
        let fd = |f: &dyn Fn(f64) -> f64, x: f64| {
            let h = x * 1e-6;
            (f(x + h) - f(x - h)) / (2.0 * h)
        };
        assert_relative_eq!(
            g.d_rabi,
            fd(&|x| rect_probability(x, delta, t), omega),
            max_relative = 1e-6
        );
        assert_relative_eq!(
            g.d_detuning,
            fd(&|x| rect_probability(omega, x, t), delta),
            max_relative = 1e-6
        );
        assert_relative_eq!(
            g.d_duration,
            fd(&|x| rect_probability(omega, delta, x), t),
            max_relative = 1e-6
        );
    }

    proptest! {
        #[test]
        fn probability_bounded_and_symmetric(omega in 0.0f64..5e12, delta in -3e12f64..3e12, t in 1e-14f64..5e-12) {
            let p = rect_probability(omega, delta, t);
            prop_assert!((0.0..=1.0).contains(&p));
            prop_assert_eq!(p, rect_probability(omega, -delta, t));
            let w2 = omega * omega + delta * delta;
            if w2 > 0.0 {
                prop_assert!(p <= omega * omega / w2 * (1.0 + 1e-15));
            }
        }

        #[test]
        fn resonant_reduction(omega in 0.0f64..5e12, t in 1e-14f64..5e-12) {
            let expected = (0.5 * omega * t).sin().powi(2);
            prop_assert!((rect_probability(omega, 0.0, t) - expected).abs() <= 1e-15);
        }
    }
}
