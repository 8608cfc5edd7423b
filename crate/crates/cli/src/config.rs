//! TOML run configuration.
//!
//! Unknown keys are rejected. Frequencies accept a number in Hz or a string
//! with a unit suffix (`"-190 GHz"`, `"19.6 MHz"`); everything else is in SI
//! units.

use std::fmt;
use std::path::{Path, PathBuf};

use ionpulse::protocol::{CycleTiming, DynamicsMethod, ExperimentModel, RabiModel, ReadoutModel};
use ionpulse::pulse::{PulseShape, PulseSpec};
use ionpulse::quantities::{yb171_defaults, AngularFrequency, Energy, Length, TransitionConstants};
use serde::{Deserialize, Deserializer, Serialize};

use crate::CliError;

/// Ordinary frequency in Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Frequency(pub f64);

impl Frequency {
    pub fn hz(self) -> f64 {
        self.0
    }

    pub fn angular(self) -> AngularFrequency {
        AngularFrequency::from_hz(self.0).expect("validated at parse time")
    }
}

impl std::str::FromStr for Frequency {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let t = s.trim();
        let split = t
            .char_indices()
            .find(|&(i, c)| c.is_ascii_alphabetic() && !(c == 'e' || c == 'E') || (i > 0 && c == ' '))
            .map_or(t.len(), |(i, _)| i);
        let (number, unit) = t.split_at(split);
        let value: f64 = number
            .trim()
            .parse()
            .map_err(|_| format!("cannot parse frequency {s:?}"))?;
        let scale = match unit.trim() {
            "" | "Hz" => 1.0,
            "kHz" => 1e3,
            "MHz" => 1e6,
            "GHz" => 1e9,
            "THz" => 1e12,
            other => return Err(format!("unknown frequency unit {other:?} in {s:?}")),
        };
        let hz = value * scale;
        if !hz.is_finite() {
            return Err(format!("frequency {s:?} is not finite"));
        }
        Ok(Frequency(hz))
    }
}

impl<'de> Deserialize<'de> for Frequency {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Number(v) if v.is_finite() => Ok(Frequency(v)),
            Raw::Number(v) => Err(serde::de::Error::custom(format!("frequency {v} is not finite"))),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

impl fmt::Display for Frequency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} Hz", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConstantsSection {
    /// Natural linewidth Γ/2π.
    pub linewidth: Frequency,
    pub saturation_intensity: f64,
    pub clebsch_gordan: f64,
    pub excited_lifetime: f64,
}

impl Default for ConstantsSection {
    fn default() -> Self {
        let c = yb171_defaults();
        Self {
            linewidth: Frequency(c.gamma.hz()),
            saturation_intensity: c.saturation_intensity.value(),
            clebsch_gordan: c.clebsch_gordan,
            excited_lifetime: c.excited_lifetime.value(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub start: f64,
    pub stop: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseSection {
    #[serde(default = "default_shape")]
    pub shape: PulseShape,
    /// Rectangular full width or Gaussian duration, seconds.
    pub duration: Option<f64>,
    /// Beam waist at the ion, metres.
    pub waist: Option<f64>,
    /// Pulse energies, joules.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energies: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Sweep>,
    pub detuning: Option<Frequency>,
    /// Spectrum from which the detuning is taken when none is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectrum_file: Option<PathBuf>,
}

fn default_shape() -> PulseShape {
    PulseShape::Gaussian
}

impl PulseSection {
    fn measured() -> Self {
        Self {
            shape: PulseShape::Gaussian,
            duration: Some(0.941e-12),
            waist: Some(8.5e-6),
            energies: Some(vec![0.0867e-9]),
            sweep: None,
            detuning: Some(Frequency(-33e9)),
            spectrum_file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolSection {
    pub repetitions: u64,
    pub seed: u64,
    /// Shots in each bright/dark reference histogram; defaults to
    /// `repetitions`.
    pub reference_repetitions: Option<u64>,
    pub dynamics: DynamicsMethod,
    pub rabi: RabiModel,
    pub timing: CycleTiming,
    pub readout: ReadoutModel,
}

impl Default for ProtocolSection {
    fn default() -> Self {
        Self {
            repetitions: 68_500,
            seed: 1,
            reference_repetitions: None,
            dynamics: DynamicsMethod::ClosedForm,
            rabi: RabiModel::Theory,
            timing: CycleTiming::default(),
            readout: ReadoutModel::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MixtureOption {
    Calibrated,
    CoFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    /// Background scatter counts per joule of pulse energy.
    pub scatter_counts_per_joule: f64,
    pub reference_frequency: Frequency,
    /// Spectrometer resolution (FWHM).
    pub instrument_resolution: Frequency,
    pub band_sigma: f64,
    pub band_points: usize,
    pub mixture: MixtureOption,
    /// Standard error of the effective duration, seconds.
    pub t_eff_std: f64,
    pub detuning_std: Frequency,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            scatter_counts_per_joule: 1e12,
            reference_frequency: Frequency(811.2915e12),
            instrument_resolution: Frequency(3.6e9),
            band_sigma: 2.0,
            band_points: 200,
            mixture: MixtureOption::Calibrated,
            t_eff_std: 0.0,
            detuning_std: Frequency(0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub format: OutputFormat,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            format: OutputFormat::Csv,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub constants: ConstantsSection,
    pub pulse: PulseSection,
    #[serde(default)]
    pub protocol: ProtocolSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub output: OutputSection,
}

impl RunConfig {
    /// The measured parameters of the on-resonance data set.
    pub fn measured() -> Self {
        Self {
            constants: ConstantsSection::default(),
            pulse: PulseSection::measured(),
            protocol: ProtocolSection::default(),
            analysis: AnalysisSection::default(),
            output: OutputSection::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("reading {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        // spectrum paths are relative to the config file
        if let (Some(spec), Some(dir)) = (&cfg.pulse.spectrum_file, path.parent()) {
            if spec.is_relative() {
                cfg.pulse.spectrum_file = Some(dir.join(spec));
            }
        }
        Ok(cfg)
    }

    pub fn constants(&self) -> Result<TransitionConstants, CliError> {
        let c = &self.constants;
        let mut out = yb171_defaults();
        out.gamma = c.linewidth.angular();
        out.saturation_intensity = field("constants.saturation_intensity", c.saturation_intensity)?;
        out.clebsch_gordan = c.clebsch_gordan;
        out.excited_lifetime = field("constants.excited_lifetime", c.excited_lifetime)?;
        out.validate()
            .map_err(|e| CliError::Config(format!("constants: {e}")))?;
        Ok(out)
    }

    pub fn energies(&self) -> Result<Vec<Energy>, CliError> {
        let raw = match (&self.pulse.energies, &self.pulse.sweep) {
            (Some(_), Some(_)) => {
                return Err(CliError::Config(
                    "pulse.energies and pulse.sweep are mutually exclusive".into(),
                ))
            }
            (Some(list), None) => list.clone(),
            (None, Some(s)) => {
                if s.count == 0 {
                    return Err(CliError::Config("pulse.sweep.count must be positive".into()));
                }
                if s.count == 1 {
                    vec![s.start]
                } else {
                    (0..s.count)
                        .map(|i| s.start + (s.stop - s.start) * i as f64 / (s.count - 1) as f64)
                        .collect()
                }
            }
            (None, None) => return Err(CliError::Config("pulse.energies or pulse.sweep is required".into())),
        };
        raw.into_iter()
            .enumerate()
            .map(|(i, e)| field(&format!("pulse.energies[{i}]"), e))
            .collect()
    }

    /// Pulse geometry with the energy left at zero. The detuning comes from
    /// `pulse.detuning` or, failing that, from fitting `pulse.spectrum_file`.
    pub fn pulse_spec(&self) -> Result<PulseSpec, CliError> {
        let duration = self
            .pulse
            .duration
            .ok_or_else(|| CliError::Config("pulse.duration is required".into()))?;
        let waist = self
            .pulse
            .waist
            .ok_or_else(|| CliError::Config("pulse.waist is required".into()))?;
        let detuning = self.resolved_detuning()?;
        let spec = PulseSpec {
            shape: self.pulse.shape,
            energy: Energy::ZERO,
            shape_duration: field("pulse.duration", duration)?,
            detuning: detuning.angular(),
            waist: field::<Length>("pulse.waist", waist)?,
        };
        spec.validate().map_err(|e| CliError::Config(format!("pulse: {e}")))?;
        Ok(spec)
    }

    pub fn resolved_detuning(&self) -> Result<Frequency, CliError> {
        match (&self.pulse.detuning, &self.pulse.spectrum_file) {
            (Some(d), _) => Ok(*d),
            (None, Some(path)) => {
                let report = crate::commands::spectrum_report(path, self)?;
                Ok(Frequency(report.detuning_hz))
            }
            (None, None) => Err(CliError::Config(
                "pulse.detuning is required when no pulse.spectrum_file is given".into(),
            )),
        }
    }

    /// Fills in values derived from other sections so the echo reproduces
    /// the run without re-reading auxiliary files.
    pub fn resolved(&self) -> Result<Self, CliError> {
        let mut out = self.clone();
        out.pulse.detuning = Some(self.resolved_detuning()?);
        out.protocol.reference_repetitions = Some(self.reference_repetitions());
        Ok(out)
    }

    pub fn reference_repetitions(&self) -> u64 {
        self.protocol.reference_repetitions.unwrap_or(self.protocol.repetitions)
    }

    pub fn experiment_model(&self) -> Result<ExperimentModel, CliError> {
        let model = ExperimentModel {
            constants: self.constants()?,
            pulse: self.pulse_spec()?,
            rabi: self.protocol.rabi,
            dynamics: self.protocol.dynamics,
            scatter_counts_per_joule: self.analysis.scatter_counts_per_joule,
            readout: self.protocol.readout,
            timing: self.protocol.timing,
        };
        model.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(model)
    }
}

fn field<T: TryFrom<f64, Error = ionpulse::Error>>(path: &str, value: f64) -> Result<T, CliError> {
    T::try_from(value).map_err(|e| CliError::Config(format!("{path}: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frequency_suffixes() {
        assert_eq!("-190 GHz".parse::<Frequency>().unwrap().hz(), -190e9);
        assert_eq!("19.6MHz".parse::<Frequency>().unwrap().hz(), 19.6e6);
        assert_eq!("1.5e3 kHz".parse::<Frequency>().unwrap().hz(), 1.5e6);
        assert_eq!("42".parse::<Frequency>().unwrap().hz(), 42.0);
        assert!("3 parsecs".parse::<Frequency>().is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = RunConfig::from_toml("[pulse]\nwaist = 8.5e-6\nwiast = 1.0\n").unwrap_err();
        assert!(matches!(err, CliError::Config(ref m) if m.contains("wiast")), "{err:?}");
        let err = RunConfig::from_toml("[pulse]\nwaist = 8.5e-6\n[protocl]\n").unwrap_err();
        assert!(matches!(err, CliError::Config(_)));
    }

    #[test]
    fn missing_fields_name_their_path() {
        let cfg = RunConfig::from_toml("[pulse]\nduration = 1e-12\nenergies = [1e-10]\ndetuning = 0\n").unwrap();
        let err = cfg.pulse_spec().unwrap_err();
        assert!(
            matches!(err, CliError::Config(ref m) if m.contains("pulse.waist")),
            "{err:?}"
        );
        let cfg = RunConfig::from_toml("[pulse]\nduration = 1e-12\nwaist = 8e-6\ndetuning = 0\n").unwrap();
        assert!(matches!(cfg.energies(), Err(CliError::Config(ref m)) if m.contains("pulse.energies")));
    }

    #[test]
    fn parses_full_config() {
        let text = r#"
            [constants]
            linewidth = "19.6 MHz"
            [pulse]
            shape = "gaussian"
            duration = 0.941e-12
            waist = 8.5e-6
            detuning = "-33 GHz"
            sweep = { start = 0.0, stop = 4e-10, count = 5 }
            [protocol]
            repetitions = 1000
            seed = 7
            dynamics = "integrator"
            rabi = { kind = "scaling", alpha = 1.3e11 }
            [protocol.readout]
            bright_rate = 1e5
            dark_rate = 4e3
            [analysis]
            reference_frequency = "811.29 THz"
            mixture = "co-fit"
            [output]
            format = "json"
        "#;
        let cfg = RunConfig::from_toml(text).unwrap();
        assert_eq!(cfg.energies().unwrap().len(), 5);
        assert_eq!(cfg.protocol.rabi, RabiModel::Scaling { alpha: 1.3e11 });
        assert_eq!(cfg.output.format, OutputFormat::Json);
        let model = cfg.experiment_model().unwrap();
        assert!((model.pulse.detuning.hz() + 33e9).abs() < 1e-3);
        // echo survives a JSON round trip
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&json).unwrap(), cfg);
    }

    #[test]
    fn measured_defaults_validate() {
        let cfg = RunConfig::measured();
        cfg.experiment_model().unwrap();
        assert_eq!(cfg.energies().unwrap().len(), 1);
    }
}
