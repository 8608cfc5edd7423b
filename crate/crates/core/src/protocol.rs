//! Monte Carlo model of the experimental cycle: Doppler cooling, optical
//! pumping into the dark F=0 state, a single excitation pulse, a decay wait,
//! and state-selective fluorescence readout.
//!
//! Every cycle draws from its own random stream keyed by
//! `(seed, point index, cycle index)`, so results do not depend on how the
//! cycles are distributed over worker threads.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Poisson};
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    integrate_schroedinger, rect_probability, theoretical_rabi, GaussianEnvelope, RectangularEnvelope, StepControl,
    TwoLevelState,
};
use crate::pulse::{peak_intensity, PulseShape, PulseSpec};
use crate::quantities::{AngularFrequency, Duration, Energy, TransitionConstants};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CycleTiming {
    pub cooling: Duration,
    pub pumping: Duration,
    pub decay_wait: Duration,
    pub readout: Duration,
    pub cycle_period: Duration,
}

impl Default for CycleTiming {
    /// 40 µs cooling, 20 µs pumping, 2 µs decay wait, 227 µs readout,
    /// repeated every 426.66 µs.
    fn default() -> Self {
        let d = |v: f64| Duration::new(v).expect("positive");
        Self {
            cooling: d(40e-6),
            pumping: d(20e-6),
            decay_wait: d(2e-6),
            readout: d(227e-6),
            cycle_period: d(426.66e-6),
        }
    }
}

impl CycleTiming {
    pub fn active(&self) -> Duration {
        Duration::new(self.cooling.value() + self.pumping.value() + self.decay_wait.value() + self.readout.value())
            .expect("sum of durations")
    }

    pub fn validate(&self) -> Result<()> {
        if self.active().value() > self.cycle_period.value() * (1.0 + 1e-12) {
            return Err(Error::invalid(format!(
                "cycle steps take {} but the period is {}",
                self.active(),
                self.cycle_period
            )));
        }
        if self.readout.value() <= 0.0 {
            return Err(Error::invalid("readout duration must be positive"));
        }
        Ok(())
    }
}

/// Photon-count model of the fluorescence readout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReadoutModel {
    /// Detected fluorescence rate of a bright ion, counts/s, on top of the
    /// background.
    pub bright_rate: f64,
    /// Background rate, counts/s.
    pub dark_rate: f64,
    /// Rate at which a bright ion is pumped dark during readout, 1/s.
    #[serde(default)]
    pub leak_rate: f64,
    /// Probability that pumping leaves the ion in the bright manifold.
    #[serde(default)]
    pub preparation_error: f64,
}

impl Default for ReadoutModel {
    /// 20 signal counts and 1 background count per 227 µs readout, no leak.
    fn default() -> Self {
        Self {
            bright_rate: 20.0 / 227e-6,
            dark_rate: 1.0 / 227e-6,
            leak_rate: 0.0,
            preparation_error: 0.0,
        }
    }
}

impl ReadoutModel {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("bright_rate", self.bright_rate),
            ("dark_rate", self.dark_rate),
            ("leak_rate", self.leak_rate),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.preparation_error) {
            return Err(Error::invalid("preparation_error must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Mean counts expected from a bright ion over `readout`, ignoring leak.
    pub fn bright_mean(&self, readout: Duration) -> f64 {
        self.bright_rate * readout.value()
    }

    pub fn dark_mean(&self, readout: Duration) -> f64 {
        self.dark_rate * readout.value()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleRecord {
    /// Pumping failed and the ion started in the bright manifold.
    pub prepared_bright: bool,
    pub excited: bool,
    /// Excited and then decayed into a bright state.
    pub decayed_bright: bool,
    pub photon_count: u64,
}

impl CycleRecord {
    pub fn is_bright(&self) -> bool {
        self.prepared_bright || self.decayed_bright
    }
}

/// Occurrences of each photon-count value.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<u64, u64>", into = "BTreeMap<u64, u64>")]
pub struct CountHistogram {
    bins: BTreeMap<u64, u64>,
    total: u64,
}

impl CountHistogram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_counts(counts: impl IntoIterator<Item = u64>) -> Self {
        let mut h = Self::new();
        for c in counts {
            h.add(c);
        }
        h
    }

    pub fn add(&mut self, count: u64) {
        self.add_many(count, 1);
    }

    pub fn add_many(&mut self, count: u64, occurrences: u64) {
        if occurrences == 0 {
            return;
        }
        *self.bins.entry(count).or_insert(0) += occurrences;
        self.total += occurrences;
    }

    /// Associative and commutative.
    pub fn merge(mut self, other: &Self) -> Self {
        for (&c, &n) in &other.bins {
            self.add_many(c, n);
        }
        self
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn bins(&self) -> &BTreeMap<u64, u64> {
        &self.bins
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.bins.iter().map(|(&c, &n)| (c, n))
    }

    pub fn max_count(&self) -> Option<u64> {
        self.bins.keys().next_back().copied()
    }

    pub fn mean(&self) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        self.iter().map(|(c, n)| c as f64 * n as f64).sum::<f64>() / self.total as f64
    }

    /// Fraction of shots with more than `threshold` counts.
    pub fn fraction_above(&self, threshold: u64) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        let above: u64 = self.bins.range(threshold + 1..).map(|(_, &n)| n).sum();
        above as f64 / self.total as f64
    }
}

impl TryFrom<BTreeMap<u64, u64>> for CountHistogram {
    type Error = Error;
    fn try_from(bins: BTreeMap<u64, u64>) -> Result<Self> {
        let mut total = 0u64;
        for &n in bins.values() {
            total = total
                .checked_add(n)
                .ok_or_else(|| Error::invalid("histogram total overflows"))?;
        }
        let bins = bins.into_iter().filter(|&(_, n)| n > 0).collect();
        Ok(Self { bins, total })
    }
}

impl From<CountHistogram> for BTreeMap<u64, u64> {
    fn from(h: CountHistogram) -> Self {
        h.bins
    }
}

/// Pre-validated sampler shared by all cycles at one excitation probability.
#[derive(Debug, Clone)]
struct CycleSampler {
    p_excite: f64,
    preparation_error: f64,
    /// Cumulative branching probabilities with their bright flags.
    branching: Vec<(f64, bool)>,
    readout: Duration,
    readout_model: ReadoutModel,
    dark: Option<Poisson<f64>>,
    bright: Option<Poisson<f64>>,
    leak: Option<Exp<f64>>,
}

impl CycleSampler {
    fn new(
        p_excite: f64,
        constants: &TransitionConstants,
        readout: &ReadoutModel,
        timing: &CycleTiming,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&p_excite) {
            return Err(Error::invalid(format!(
                "excitation probability {p_excite} outside [0, 1]"
            )));
        }
        readout.validate()?;
        timing.validate()?;
        let mut acc = 0.0;
        let branching = constants
            .branching
            .iter()
            .map(|c| {
                acc += c.probability;
                (acc, c.bright)
            })
            .collect();
        let t = timing.readout;
        let poisson = |mean: f64| if mean > 0.0 { Poisson::new(mean).ok() } else { None };
        Ok(Self {
            p_excite,
            preparation_error: readout.preparation_error,
            branching,
            readout: t,
            readout_model: *readout,
            dark: poisson(readout.dark_mean(t)),
            bright: poisson(readout.bright_mean(t) + readout.dark_mean(t)),
            leak: if readout.leak_rate > 0.0 {
                Exp::new(readout.leak_rate).ok()
            } else {
                None
            },
        })
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> CycleRecord {
        let prepared_bright = self.preparation_error > 0.0 && rng.random::<f64>() < self.preparation_error;
        let mut excited = false;
        let mut decayed_bright = false;
        if !prepared_bright {
            excited = rng.random::<f64>() < self.p_excite;
            if excited {
                let u: f64 = rng.random();
                decayed_bright = self
                    .branching
                    .iter()
                    .find(|(cum, _)| u < *cum)
                    .or(self.branching.last())
                    .map(|&(_, b)| b)
                    .unwrap_or(false);
            }
        }
        let bright = prepared_bright || decayed_bright;
        let photon_count = self.readout_counts(bright, rng);
        CycleRecord {
            prepared_bright,
            excited,
            decayed_bright,
            photon_count,
        }
    }

    fn readout_counts<R: Rng + ?Sized>(&self, bright: bool, rng: &mut R) -> u64 {
        let draw = |d: &Option<Poisson<f64>>, rng: &mut R| d.as_ref().map_or(0, |p| p.sample(rng) as u64);
        if !bright {
            return draw(&self.dark, rng);
        }
        if let Some(leak) = &self.leak {
            let t_leak: f64 = leak.sample(rng);
            let t = self.readout.value();
            if t_leak < t {
                let mean = self.readout_model.bright_rate * t_leak + self.readout_model.dark_rate * t;
                return draw(&(if mean > 0.0 { Poisson::new(mean).ok() } else { None }), rng);
            }
        }
        draw(&self.bright, rng)
    }
}

/// Simulates one cycle.
pub fn simulate_cycle<R: Rng + ?Sized>(
    p_excite: f64,
    constants: &TransitionConstants,
    readout: &ReadoutModel,
    timing: &CycleTiming,
    rng: &mut R,
) -> Result<CycleRecord> {
    Ok(CycleSampler::new(p_excite, constants, readout, timing)?.sample(rng))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn point_key(seed: u64, point: u64) -> [u8; 32] {
    let mut key = [0u8; 32];
    let mut state = splitmix64(seed) ^ splitmix64(point.wrapping_add(0x5851_f42d_4c95_7f2d));
    for chunk in key.chunks_exact_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    key
}

/// Random stream of one cycle.
pub fn cycle_rng(seed: u64, point: u64, cycle: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::from_seed(point_key(seed, point));
    rng.set_stream(cycle);
    rng
}

/// Stream index reserved for the bright reference histogram.
pub const BRIGHT_REFERENCE_POINT: u64 = u64::MAX;
/// Stream index reserved for the dark reference histogram.
pub const DARK_REFERENCE_POINT: u64 = u64::MAX - 1;

/// Per-point tallies of the hidden cycle outcomes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleTally {
    pub cycles: u64,
    pub prepared_bright: u64,
    pub excited: u64,
    pub decayed_bright: u64,
}

impl CycleTally {
    fn record(&mut self, r: &CycleRecord) {
        self.cycles += 1;
        self.prepared_bright += r.prepared_bright as u64;
        self.excited += r.excited as u64;
        self.decayed_bright += r.decayed_bright as u64;
    }

    fn merge(mut self, o: &Self) -> Self {
        self.cycles += o.cycles;
        self.prepared_bright += o.prepared_bright;
        self.excited += o.excited;
        self.decayed_bright += o.decayed_bright;
        self
    }
}

const BLOCK: u64 = 2048;

fn run_cycles(sampler: &CycleSampler, seed: u64, point: u64, cycles: u64) -> (CountHistogram, CycleTally) {
    let base = ChaCha8Rng::from_seed(point_key(seed, point));
    let blocks = cycles.div_ceil(BLOCK);
    let block = |b: u64| {
        let mut hist = CountHistogram::new();
        let mut tally = CycleTally::default();
        for cycle in b * BLOCK..((b + 1) * BLOCK).min(cycles) {
            let mut rng = base.clone();
            rng.set_stream(cycle);
            let rec = sampler.sample(&mut rng);
            hist.add(rec.photon_count);
            tally.record(&rec);
        }
        (hist, tally)
    };
    let merge =
        |(h1, t1): (CountHistogram, CycleTally), (h2, t2): (CountHistogram, CycleTally)| (h1.merge(&h2), t1.merge(&t2));
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..blocks)
            .into_par_iter()
            .map(block)
            .reduce(|| (CountHistogram::new(), CycleTally::default()), merge)
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..blocks)
            .map(block)
            .fold((CountHistogram::new(), CycleTally::default()), merge)
    }
}

/// How the excitation probability is computed from the drive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DynamicsMethod {
    /// Rectangular-pulse formula at the effective square duration.
    #[default]
    ClosedForm,
    /// Runge–Kutta integration over the actual pulse envelope.
    Integrator,
}

/// How the Rabi frequency follows from the pulse energy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum RabiModel {
    /// From peak intensity and the transition constants.
    Theory,
    /// `Ω_eff = α √C_sc` with the scatter counts `C_sc = k·E`.
    Scaling { alpha: f64 },
}

/// Everything needed to turn pulse energies into photon-count histograms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentModel {
    pub constants: TransitionConstants,
    /// Pulse shape, duration, detuning and waist; the energy is ignored.
    pub pulse: PulseSpec,
    pub rabi: RabiModel,
    pub dynamics: DynamicsMethod,
    /// Background scatter counts per joule of pulse energy.
    pub scatter_counts_per_joule: f64,
    pub readout: ReadoutModel,
    pub timing: CycleTiming,
}

impl ExperimentModel {
    pub fn validate(&self) -> Result<()> {
        self.constants.validate()?;
        self.pulse
            .validate()
            .map_err(|e| Error::Config(format!("pulse: {e}")))?;
        self.readout.validate()?;
        self.timing.validate()?;
        if !(self.scatter_counts_per_joule.is_finite() && self.scatter_counts_per_joule >= 0.0) {
            return Err(Error::Config("scatter_counts_per_joule must be non-negative".into()));
        }
        if let RabiModel::Scaling { alpha } = self.rabi {
            if !(alpha.is_finite() && alpha >= 0.0) {
                return Err(Error::Config(format!("alpha must be non-negative, got {alpha}")));
            }
            if self.scatter_counts_per_joule == 0.0 {
                return Err(Error::Config(
                    "scaling Rabi model needs scatter_counts_per_joule > 0".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn scatter_counts(&self, energy: Energy) -> f64 {
        self.scatter_counts_per_joule * energy.value()
    }

    pub fn rabi_frequency(&self, energy: Energy) -> Result<AngularFrequency> {
        match self.rabi {
            RabiModel::Theory => {
                let intensity = peak_intensity(&self.pulse.with_energy(energy))?;
                Ok(theoretical_rabi(&self.constants, intensity))
            }
            RabiModel::Scaling { alpha } => AngularFrequency::new(alpha * self.scatter_counts(energy).sqrt()),
        }
    }

    pub fn excitation_probability(&self, energy: Energy) -> Result<f64> {
        let omega = self.rabi_frequency(energy)?.value();
        let detuning = self.pulse.detuning;
        let p = match self.dynamics {
            DynamicsMethod::ClosedForm => {
                rect_probability(omega, detuning.value(), self.pulse.effective_duration().value())
            }
            DynamicsMethod::Integrator => {
                let ground = TwoLevelState::ground_state();
                let control = StepControl::default();
                let state = match self.pulse.shape {
                    PulseShape::Rectangular => {
                        let env = RectangularEnvelope {
                            rabi: omega,
                            duration: self.pulse.shape_duration.value(),
                        };
                        integrate_schroedinger(&env, detuning, ground, control)?
                    }
                    PulseShape::Gaussian => {
                        let env = GaussianEnvelope::new(omega, self.pulse.shape_duration);
                        integrate_schroedinger(&env, detuning, ground, control)?
                    }
                };
                state.excited_population()
            }
        };
        Ok(p.clamp(0.0, 1.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPoint {
    pub energy: Energy,
    pub scatter_counts: f64,
    pub rabi_frequency: AngularFrequency,
    pub p_excite: f64,
    pub histogram: CountHistogram,
    pub tally: CycleTally,
}

/// Simulates `repetitions` cycles at each pulse energy.
pub fn run_experiment(
    pulse_energies: &[Energy],
    model: &ExperimentModel,
    repetitions: u64,
    seed: u64,
) -> Result<Vec<ExperimentPoint>> {
    if repetitions == 0 {
        return Err(Error::Config("repetitions must be positive".into()));
    }
    model.validate()?;
    pulse_energies
        .iter()
        .enumerate()
        .map(|(i, &energy)| {
            let p_excite = model.excitation_probability(energy)?;
            let sampler = CycleSampler::new(p_excite, &model.constants, &model.readout, &model.timing)?;
            let (histogram, tally) = run_cycles(&sampler, seed, i as u64, repetitions);
            Ok(ExperimentPoint {
                energy,
                scatter_counts: model.scatter_counts(energy),
                rabi_frequency: model.rabi_frequency(energy)?,
                p_excite,
                histogram,
                tally,
            })
        })
        .collect()
}

/// Reference histograms of an ion prepared bright and prepared dark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceHistograms {
    pub bright: CountHistogram,
    pub dark: CountHistogram,
}

pub fn simulate_references(
    readout: &ReadoutModel,
    timing: &CycleTiming,
    repetitions: u64,
    seed: u64,
) -> Result<ReferenceHistograms> {
    if repetitions == 0 {
        return Err(Error::Config("reference repetitions must be positive".into()));
    }
    // References measure readout only: perfect preparation, no pulse.
    let clean = ReadoutModel {
        preparation_error: 0.0,
        ..*readout
    };
    let dark_sampler = CycleSampler::new(0.0, &bright_only_constants(false), &clean, timing)?;
    let bright_sampler = CycleSampler::new(1.0, &bright_only_constants(true), &clean, timing)?;
    Ok(ReferenceHistograms {
        bright: run_cycles(&bright_sampler, seed, BRIGHT_REFERENCE_POINT, repetitions).0,
        dark: run_cycles(&dark_sampler, seed, DARK_REFERENCE_POINT, repetitions).0,
    })
}

fn bright_only_constants(bright: bool) -> TransitionConstants {
    let mut c = crate::quantities::yb171_defaults();
    c.branching = vec![crate::quantities::DecayChannel {
        label: if bright { "bright" } else { "dark" }.into(),
        probability: 1.0,
        bright,
    }];
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantities::{angular_from_hz, yb171_defaults, Length};

    fn readout(bright_mean: f64, dark_mean: f64) -> ReadoutModel {
        ReadoutModel {
            bright_rate: bright_mean / 227e-6,
            dark_rate: dark_mean / 227e-6,
            leak_rate: 0.0,
            preparation_error: 0.0,
        }
    }

    pub(crate) fn scaling_model(alpha: f64, detuning_hz: f64, t_eff_ps: f64) -> ExperimentModel {
        ExperimentModel {
            constants: yb171_defaults(),
            pulse: PulseSpec {
                shape: PulseShape::Rectangular,
                energy: Energy::ZERO,
                shape_duration: Duration::from_ps(t_eff_ps).unwrap(),
                detuning: angular_from_hz(detuning_hz),
                waist: Length::from_um(8.5).unwrap(),
            },
            rabi: RabiModel::Scaling { alpha },
            dynamics: DynamicsMethod::ClosedForm,
            scatter_counts_per_joule: 1e12,
            readout: readout(30.0, 1.0),
            timing: CycleTiming::default(),
        }
    }

    #[test]
    fn default_timing_matches_protocol() {
        let t = CycleTiming::default();
        assert!((t.active().value() - 289e-6).abs() < 1e-12);
        t.validate().unwrap();
        let bad = CycleTiming {
            cycle_period: Duration::new(100e-6).unwrap(),
            ..t
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn no_excitation_no_background_gives_zero_counts() {
        let c = yb171_defaults();
        let r = readout(30.0, 0.0);
        let t = CycleTiming::default();
        for cycle in 0..1000 {
            let rec = simulate_cycle(0.0, &c, &r, &t, &mut cycle_rng(3, 0, cycle)).unwrap();
            assert_eq!(rec.photon_count, 0);
            assert!(!rec.excited);
        }
    }

    #[test]
    fn bright_branching_fraction() {
        let c = yb171_defaults();
        let r = readout(30.0, 1.0);
        let t = CycleTiming::default();
        let n = 68_500u64;
        let bright = (0..n)
            .map(|i| simulate_cycle(1.0, &c, &r, &t, &mut cycle_rng(11, 0, i)).unwrap())
            .inspect(|rec| assert!(rec.excited && (!rec.decayed_bright || rec.excited)))
            .filter(|rec| rec.decayed_bright)
            .count() as f64;
        let p = 2.0 / 3.0;
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        assert!((bright / n as f64 - p).abs() < 3.0 * sigma);
    }

    #[test]
    fn invalid_probability_rejected() {
        let c = yb171_defaults();
        let t = CycleTiming::default();
        let mut rng = cycle_rng(0, 0, 0);
        assert!(simulate_cycle(1.5, &c, &readout(1.0, 1.0), &t, &mut rng).is_err());
        let bad = ReadoutModel {
            dark_rate: -1.0,
            ..readout(1.0, 1.0)
        };
        assert!(simulate_cycle(0.5, &c, &bad, &t, &mut rng).is_err());
    }

    #[test]
    fn leak_lowers_bright_counts() {
        let c = yb171_defaults();
        let t = CycleTiming::default();
        let leaky = ReadoutModel {
            leak_rate: 1.0 / 227e-6,
            ..readout(30.0, 0.0)
        };
        let mean = (0..20_000)
            .map(|i| simulate_cycle(1.0, &c, &leaky, &t, &mut cycle_rng(5, 0, i)).unwrap())
            .filter(|r| r.decayed_bright)
            .map(|r| r.photon_count as f64)
            .sum::<f64>()
            / (20_000.0 * 2.0 / 3.0);
        // E[min(τ, T)]/T = (1 - e^{-1}) for leak time constant T
        let expected = 30.0 * (1.0 - (-1.0f64).exp());
        assert!((mean - expected).abs() < 0.5, "{mean} vs {expected}");
    }

    #[test]
    fn preparation_error_makes_bright_without_excitation() {
        let c = yb171_defaults();
        let t = CycleTiming::default();
        let r = ReadoutModel {
            preparation_error: 1.0,
            ..readout(30.0, 1.0)
        };
        let rec = simulate_cycle(1.0, &c, &r, &t, &mut cycle_rng(1, 0, 0)).unwrap();
        assert!(rec.prepared_bright && !rec.excited && !rec.decayed_bright);
    }

    #[test]
    fn run_experiment_is_deterministic() {
        let model = scaling_model(1.3e11, 33e9, 2.36);
        let e = [Energy::new(1e-10).unwrap()];
        let a = run_experiment(&e, &model, 1, 42).unwrap();
        let b = run_experiment(&e, &model, 1, 42).unwrap();
        assert_eq!(a, b);
        let a = run_experiment(&e, &model, 5000, 42).unwrap();
        let b = run_experiment(&e, &model, 5000, 42).unwrap();
        assert_eq!(a, b);
        let c = run_experiment(&e, &model, 5000, 43).unwrap();
        assert_ne!(a[0].histogram, c[0].histogram);
    }

    #[test]
    fn run_experiment_edge_cases() {
        let model = scaling_model(1.3e11, 33e9, 2.36);
        assert!(run_experiment(&[], &model, 10, 0).unwrap().is_empty());
        assert!(matches!(
            run_experiment(&[Energy::ZERO], &model, 0, 0),
            Err(Error::Config(_))
        ));
        let mut bad = model.clone();
        bad.pulse.waist = Length::ZERO;
        assert!(matches!(
            run_experiment(&[Energy::ZERO], &bad, 1, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn integrator_and_closed_form_agree_for_square_pulses() {
        let mut model = scaling_model(1.3e11, 33e9, 2.36);
        let e = Energy::new(2e-10).unwrap();
        let closed = model.excitation_probability(e).unwrap();
        model.dynamics = DynamicsMethod::Integrator;
        let integrated = model.excitation_probability(e).unwrap();
        assert!((closed - integrated).abs() < 1e-8 * closed);
    }

    #[test]
    fn histogram_bookkeeping() {
        let h = CountHistogram::from_counts([0, 0, 3, 5, 5, 5]);
        assert_eq!(h.total(), 6);
        assert_eq!(h.bins()[&5], 3);
        assert!((h.mean() - 18.0 / 6.0).abs() < 1e-15);
        assert!((h.fraction_above(2) - 4.0 / 6.0).abs() < 1e-15);
        let g = CountHistogram::from_counts([1, 5]);
        assert_eq!(h.clone().merge(&g), g.clone().merge(&h));
        assert_eq!(h.clone().merge(&g).total(), 8);
    }

    #[test]
    fn references_separate() {
        let refs = simulate_references(&readout(30.0, 1.0), &CycleTiming::default(), 20_000, 9).unwrap();
        assert!((refs.bright.mean() - 31.0).abs() < 0.2);
        assert!((refs.dark.mean() - 1.0).abs() < 0.05);
    }
}
