//! Browser bindings for a few interactive calculations.
//!
//! Every export returns a flat `Float64Array`; the layouts are documented on
//! each function.

use ionpulse::dynamics::{
    integrate_schroedinger, rect_probability, theoretical_rabi, GaussianEnvelope, StepControl, TwoLevelState,
};
use ionpulse::estimation::{fit_histogram, population_from_bright_weight};
use ionpulse::protocol::{
    run_experiment, simulate_references, CycleTiming, DynamicsMethod, ExperimentModel, RabiModel, ReadoutModel,
};
use ionpulse::pulse::{peak_intensity, PulseShape, PulseSpec};
use ionpulse::quantities::{yb171_defaults, AngularFrequency, Duration, Energy, Length};
use wasm_bindgen::prelude::*;

type Result<T> = std::result::Result<T, String>;

fn gaussian_spec(energy_nj: f64, waist_um: f64, duration_ps: f64, detuning_ghz: f64) -> Result<PulseSpec> {
    let err = |e: ionpulse::Error| e.to_string();
    let spec = PulseSpec {
        shape: PulseShape::Gaussian,
        energy: Energy::from_nj(energy_nj).map_err(err)?,
        shape_duration: Duration::from_ps(duration_ps).map_err(err)?,
        detuning: AngularFrequency::from_hz(detuning_ghz * 1e9).map_err(err)?,
        waist: Length::from_um(waist_um).map_err(err)?,
    };
    spec.validate().map_err(err)?;
    Ok(spec)
}

/// `[I_p (W/m²), Ω_th (rad/s), t_p (s), t_eff (s), Θ (rad)]`.
pub fn theory_values(energy_nj: f64, waist_um: f64, duration_ps: f64) -> Result<Vec<f64>> {
    let spec = gaussian_spec(energy_nj, waist_um, duration_ps, 0.0)?;
    let intensity = peak_intensity(&spec).map_err(|e| e.to_string())?;
    let omega = theoretical_rabi(&yb171_defaults(), intensity);
    let t_eff = spec.effective_duration();
    Ok(vec![
        intensity.value(),
        omega.value(),
        spec.intensity_square_width().value(),
        t_eff.value(),
        omega * t_eff,
    ])
}

/// Excitation against pulse energy from 0 to `max_energy_nj`, with the
/// theoretical Rabi frequency. Rows of `[energy_nJ, closed_form, integrated]`;
/// the closed form uses the square-pulse equivalent, the integration the
/// Gaussian envelope itself.
pub fn rabi_curve_values(
    max_energy_nj: f64,
    waist_um: f64,
    duration_ps: f64,
    detuning_ghz: f64,
    points: usize,
) -> Result<Vec<f64>> {
    if !(2..=2000).contains(&points) {
        return Err("points must be between 2 and 2000".into());
    }
    let base = gaussian_spec(0.0, waist_um, duration_ps, detuning_ghz)?;
    let constants = yb171_defaults();
    let t_eff = base.effective_duration().value();
    let mut out = Vec::with_capacity(3 * points);
    for i in 0..points {
        let e = max_energy_nj * i as f64 / (points - 1) as f64;
        let spec = base.with_energy(Energy::from_nj(e).map_err(|e| e.to_string())?);
        let omega = theoretical_rabi(&constants, peak_intensity(&spec).map_err(|e| e.to_string())?).value();
        let closed = rect_probability(omega, base.detuning.value(), t_eff);
        let env = GaussianEnvelope::new(omega, base.shape_duration);
        let control = StepControl {
            tolerance: 1e-8,
            ..StepControl::default()
        };
        let integrated = integrate_schroedinger(&env, base.detuning, TwoLevelState::ground_state(), control)
            .map_err(|e| e.to_string())?
            .excited_population();
        out.extend_from_slice(&[e, closed, integrated]);
    }
    Ok(out)
}

/// Simulated readout at excitation probability `p_excite` and its mixture
/// fit. Layout: `[population, population_std_error, n_0, n_1, …]` where
/// `n_k` is the number of cycles with `k` detected photons.
pub fn readout_values(p_excite: f64, repetitions: u32, seed: u32) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&p_excite) {
        return Err("p_excite must lie in [0, 1]".into());
    }
    let reps = u64::from(repetitions.clamp(1, 200_000));
    let seed = u64::from(seed);
    let pulse = gaussian_spec(0.0, 8.5, 0.941, 0.0)?;
    // on resonance, one scatter count then gives area 2 asin √p
    let alpha = 2.0 * p_excite.sqrt().asin() / pulse.effective_duration().value();
    let model = ExperimentModel {
        constants: yb171_defaults(),
        pulse,
        rabi: RabiModel::Scaling { alpha },
        dynamics: DynamicsMethod::ClosedForm,
        scatter_counts_per_joule: 1.0,
        readout: ReadoutModel::default(),
        timing: CycleTiming::default(),
    };
    let err = |e: ionpulse::Error| e.to_string();
    let point = run_experiment(&[Energy::new(1.0).map_err(err)?], &model, reps, seed)
        .map_err(err)?
        .remove(0);
    let refs = simulate_references(&model.readout, &model.timing, reps, seed).map_err(err)?;
    let fit = fit_histogram(&point.histogram, Some(&refs)).map_err(err)?;
    let max = point.histogram.max_count().unwrap_or(0) as usize;
    let mut out = vec![
        population_from_bright_weight(fit.bright_weight),
        population_from_bright_weight(fit.weight_std_error),
    ];
    out.resize(2 + max + 1, 0.0);
    for (c, n) in point.histogram.iter() {
        out[2 + c as usize] = n as f64;
    }
    Ok(out)
}

#[wasm_bindgen]
pub fn theory(energy_nj: f64, waist_um: f64, duration_ps: f64) -> std::result::Result<Vec<f64>, JsValue> {
    theory_values(energy_nj, waist_um, duration_ps).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn rabi_curve(
    max_energy_nj: f64,
    waist_um: f64,
    duration_ps: f64,
    detuning_ghz: f64,
    points: usize,
) -> std::result::Result<Vec<f64>, JsValue> {
    rabi_curve_values(max_energy_nj, waist_um, duration_ps, detuning_ghz, points).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn readout(p_excite: f64, repetitions: u32, seed: u32) -> std::result::Result<Vec<f64>, JsValue> {
    readout_values(p_excite, repetitions, seed).map_err(|e| JsValue::from_str(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn theory_matches_measured_parameters() {
        let v = theory_values(0.0867, 8.5, 0.941).unwrap();
        assert!((v[1] / 1.510e12 - 1.0).abs() < 0.01);
    }

    #[test]
    fn curve_rows_are_bounded() {
        let v = rabi_curve_values(0.3, 8.5, 0.941, -33.0, 16).unwrap();
        assert_eq!(v.len(), 48);
        assert!(v
            .chunks(3)
            .all(|r| (0.0..=1.0).contains(&r[1]) && (0.0..=1.0).contains(&r[2])));
        assert_eq!(v[1], 0.0);
    }

    #[test]
    fn readout_recovers_population() {
        let v = readout_values(0.5, 50_000, 1).unwrap();
        assert!((v[0] - 0.5).abs() < 5.0 * v[1] + 0.01, "{} ± {}", v[0], v[1]);
        assert_eq!(v[2..].iter().sum::<f64>(), 50_000.0);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        assert!(theory_values(-1.0, 8.5, 0.941).is_err());
        assert!(readout_values(1.5, 10, 1).is_err());
        assert!(rabi_curve_values(1.0, 8.5, 0.941, 0.0, 1).is_err());
    }
}
