use ionpulse::estimation::{fit_gaussian_spectrum, fit_histogram, population_from_bright_weight};
use ionpulse::protocol::{
    cycle_rng, run_experiment, simulate_cycle, simulate_references, CountHistogram, CycleTiming, DynamicsMethod,
    ExperimentModel, RabiModel, ReadoutModel,
};
use ionpulse::pulse::{
    duration_from_spectrum, effective_square_duration, equivalent_square_width_for_intensity, peak_intensity,
    transform_limited_spectrum, PulseShape, PulseSpec,
};
use ionpulse::quantities::{angular_from_hz, hz_from_angular, yb171_defaults, Duration, Energy, Length};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;

fn spec(energy: f64, waist: f64) -> PulseSpec {
    PulseSpec {
        shape: PulseShape::Gaussian,
        energy: Energy::new(energy).unwrap(),
        shape_duration: Duration::from_ps(0.941).unwrap(),
        detuning: angular_from_hz(-33e9),
        waist: Length::new(waist).unwrap(),
    }
}

fn model(alpha: f64) -> ExperimentModel {
    ExperimentModel {
        constants: yb171_defaults(),
        pulse: spec(0.0, 8.5e-6),
        rabi: RabiModel::Scaling { alpha },
        dynamics: DynamicsMethod::ClosedForm,
        scatter_counts_per_joule: 1e12,
        readout: ReadoutModel::default(),
        timing: CycleTiming::default(),
    }
}

#[test]
fn branching_sums_to_one() {
    let c = yb171_defaults();
    assert_eq!(c.branching.iter().map(|b| b.probability).sum::<f64>(), 1.0);
    assert!(c.validate().is_ok());
}

#[test]
fn peak_intensity_scales_exactly() {
    let base = peak_intensity(&spec(1e-10, 8.5e-6)).unwrap().value();
    let double = peak_intensity(&spec(2e-10, 8.5e-6)).unwrap().value();
    let half_waist = peak_intensity(&spec(1e-10, 4.25e-6)).unwrap().value();
    assert!((double / base - 2.0).abs() < 1e-15);
    assert!((half_waist / base - 4.0).abs() < 1e-15);
}

#[test]
fn conditional_structure_and_law_of_large_numbers() {
    let constants = yb171_defaults();
    let readout = ReadoutModel::default();
    let timing = CycleTiming::default();
    let p = 0.6;
    let expected = p * 2.0 / 3.0;
    let mut previous_error = f64::INFINITY;
    for n in [1_000u64, 10_000, 68_500] {
        let mut bright = 0u64;
        for cycle in 0..n {
            let r = simulate_cycle(p, &constants, &readout, &timing, &mut cycle_rng(5, n, cycle)).unwrap();
            assert!(r.excited || !r.decayed_bright, "decayed bright without excitation");
            bright += r.is_bright() as u64;
        }
        let fraction = bright as f64 / n as f64;
        let sigma = (expected * (1.0 - expected) / n as f64).sqrt();
        let error = (fraction - expected).abs();
        assert!(error < 4.0 * sigma, "N={n}: {fraction} vs {expected}");
        previous_error = previous_error.min(4.0 * sigma);
    }
    assert!(previous_error < 0.01);
}

#[cfg(feature = "parallel")]
#[test]
fn histograms_do_not_depend_on_worker_count() {
    let m = model(1.3e11);
    let energies: Vec<Energy> = [5e-11, 1.5e-10, 3e-10]
        .iter()
        .map(|&e| Energy::new(e).unwrap())
        .collect();
    let runs: Vec<_> = [1, 2, 3, 4]
        .iter()
        .map(|&threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| {
                    (
                        run_experiment(&energies, &m, 20_000, 9).unwrap(),
                        simulate_references(&m.readout, &m.timing, 20_000, 9).unwrap(),
                    )
                })
        })
        .collect();
    assert!(runs.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn mixture_weight_ignores_bin_order() {
    let m = model(1.3e11);
    let point = &run_experiment(&[Energy::new(1e-10).unwrap()], &m, 20_000, 4).unwrap()[0];
    let refs = simulate_references(&m.readout, &m.timing, 20_000, 4).unwrap();
    let mut counts: Vec<u64> = point
        .histogram
        .iter()
        .flat_map(|(c, n)| std::iter::repeat_n(c, n as usize))
        .collect();
    let forward = fit_histogram(&CountHistogram::from_counts(counts.iter().copied()), Some(&refs)).unwrap();
    counts.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(1));
    let shuffled = fit_histogram(&CountHistogram::from_counts(counts), Some(&refs)).unwrap();
    assert_eq!(forward.bright_weight, shuffled.bright_weight);
    let p = population_from_bright_weight(forward.bright_weight);
    assert!((p - point.p_excite).abs() < 0.03, "{p} vs {}", point.p_excite);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn hz_round_trip(hz in -1e15f64..1e15) {
        let back = hz_from_angular(angular_from_hz(hz));
        prop_assert!((back - hz).abs() <= 1e-15 * hz.abs().max(1e-300));
    }

    #[test]
    fn square_widths_differ_by_root_two(ps in 0.01f64..100.0) {
        let d = Duration::from_ps(ps).unwrap();
        let ratio = effective_square_duration(d).value() / equivalent_square_width_for_intensity(d).value();
        prop_assert!((ratio - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn population_inverts_the_bright_fraction(p in 0.0f64..=1.0) {
        prop_assert!((population_from_bright_weight(p * 2.0 / 3.0) - p).abs() < 1e-15);
    }

    #[test]
    fn fft_spectrum_recovers_duration(ps in 0.2f64..5.0, center_ghz in -400.0f64..400.0) {
        let d = Duration::from_ps(ps).unwrap();
        let center = 811.2915e12 + center_ghz * 1e9;
        let samples = transform_limited_spectrum(d, center, 5.0).unwrap();
        let fit = fit_gaussian_spectrum(&samples).unwrap();
        let recovered = duration_from_spectrum(&fit.model).unwrap();
        prop_assert!(((recovered.value() - d.value()) / d.value()).abs() < 1e-4);
        prop_assert!((fit.model.center_frequency - center).abs() < 1e-3 * fit.model.sigma);
    }
}
