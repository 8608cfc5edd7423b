//! Subcommands and their reports.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use ionpulse::dynamics::theoretical_rabi;
use ionpulse::estimation::{
    confidence_band_with, fit_gaussian_spectrum, fit_histogram, fit_histogram_with, fit_rabi_curve,
    population_from_bright_weight, BandPoint, Calibration, FixedParameterUncertainty, MixtureFit, RabiCurveModel,
    RabiDataPoint,
};
use ionpulse::protocol::{run_experiment, simulate_references};
use ionpulse::pulse::{
    detuning_from_spectrum, duration_from_spectrum, effective_square_duration, parse_spectrum, peak_intensity,
    PulseShape,
};
use ionpulse::quantities::{AngularFrequency, Duration};
use serde::Serialize;

use crate::config::{Frequency, MixtureOption, OutputFormat, RunConfig};
use crate::output::{self, SimulatedPoint, SimulationArtifact};
use crate::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "ionpulse",
    version,
    about = "Single-pulse excitation of a trapped ion: theory, simulation and analysis"
)]
pub struct Cli {
    /// TOML run configuration; the measured on-resonance parameters are used
    /// when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides `protocol.seed`.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Overrides `output.dir`.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Overrides `output.format`.
    #[arg(long, global = true, value_enum)]
    pub format: Option<OutputFormat>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Peak intensity, Rabi frequency and pulse area for each configured energy.
    Theory,
    /// Simulate count histograms for each configured energy.
    Simulate,
    /// Fit histograms (or a Rabi data CSV) and the Rabi curve.
    Analyze {
        /// `histograms.json` from `simulate`, or a CSV of
        /// `c_sc,population,population_std_error` rows.
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
    },
    /// Fit a measured spectrum for detuning and duration.
    Spectrum {
        /// Two-column `frequency_Hz amplitude` file.
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        /// Reference transition frequency, e.g. `811.2915 THz`.
        #[arg(long, value_name = "FREQ")]
        reference: Option<Frequency>,
    },
}

/// Loads the configuration and applies command-line overrides.
pub fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::measured(),
    };
    if let Some(seed) = cli.seed {
        cfg.protocol.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output.dir = out.clone();
    }
    if let Some(format) = cli.format {
        cfg.output.format = format;
    }
    Ok(cfg)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = load_config(&cli)?;
    let format = cfg.output.format;
    match &cli.command {
        Command::Theory => {
            let report = cmd_theory(&cfg)?;
            match format {
                OutputFormat::Csv => print!("{}", report.to_text()),
                OutputFormat::Json => println!("{}", to_json(&report)?),
            }
        }
        Command::Simulate => {
            let artifact = cmd_simulate(&cfg)?;
            for path in output::write_simulation(&artifact, &cfg.output.dir, format)? {
                println!("wrote {}", path.display());
            }
        }
        Command::Analyze { input } => {
            let input = load_analysis_input(input, &cfg)?;
            let report = cmd_analyze(&input, &cfg)?;
            for path in write_analysis(&report, &cfg.output.dir, format)? {
                println!("wrote {}", path.display());
            }
            for p in &report.points {
                if let Some(reason) = &p.error {
                    eprintln!("point {} (c_sc = {}): {reason}", p.index, p.scatter_counts);
                }
            }
            match &report.rabi {
                RabiOutcome::Fitted { .. } => print!("{}", report.to_text()),
                RabiOutcome::Failed { reason } => return Err(CliError::Fit(reason.clone())),
            }
        }
        Command::Spectrum { input, reference } => {
            let mut cfg = cfg;
            if let Some(r) = reference {
                cfg.analysis.reference_frequency = *r;
            }
            let report = spectrum_report(input, &cfg)?;
            match format {
                OutputFormat::Csv => print!("{}", report.to_text()),
                OutputFormat::Json => println!("{}", to_json(&report)?),
            }
        }
    }
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoryRow {
    pub energy_j: f64,
    pub peak_intensity: f64,
    pub rabi_frequency: f64,
    pub pulse_area: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoryReport {
    pub config: RunConfig,
    pub shape: PulseShape,
    /// Square width with the same energy and peak intensity.
    pub intensity_width: f64,
    /// Square width with the same pulse area.
    pub effective_duration: f64,
    pub detuning_hz: f64,
    pub rows: Vec<TheoryRow>,
}

impl TheoryReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "shape = {:?}", self.shape);
        let _ = writeln!(s, "t_p = {:.6e} s", self.intensity_width);
        let _ = writeln!(s, "t_eff = {:.6e} s", self.effective_duration);
        let _ = writeln!(s, "detuning = {:.6e} Hz", self.detuning_hz);
        let _ = writeln!(
            s,
            "# energy_J peak_intensity_W_per_m2 rabi_frequency_rad_per_s pulse_area_rad"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:.6e} {:.6e} {:.6e} {:.6e}",
                r.energy_j, r.peak_intensity, r.rabi_frequency, r.pulse_area
            );
        }
        s
    }
}

pub fn cmd_theory(cfg: &RunConfig) -> Result<TheoryReport, CliError> {
    let constants = cfg.constants()?;
    let spec = cfg.pulse_spec()?;
    let t_eff = spec.effective_duration();
    let rows = cfg
        .energies()?
        .into_iter()
        .map(|energy| {
            let intensity = peak_intensity(&spec.with_energy(energy))?;
            let omega = theoretical_rabi(&constants, intensity);
            Ok(TheoryRow {
                energy_j: energy.value(),
                peak_intensity: intensity.value(),
                rabi_frequency: omega.value(),
                pulse_area: omega * t_eff,
            })
        })
        .collect::<Result<Vec<_>, ionpulse::Error>>()?;
    Ok(TheoryReport {
        config: cfg.resolved()?,
        shape: spec.shape,
        intensity_width: spec.intensity_square_width().value(),
        effective_duration: t_eff.value(),
        detuning_hz: spec.detuning.hz(),
        rows,
    })
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<SimulationArtifact, CliError> {
    let model = cfg.experiment_model()?;
    let energies = cfg.energies()?;
    let seed = cfg.protocol.seed;
    let points = run_experiment(&energies, &model, cfg.protocol.repetitions, seed)?
        .into_iter()
        .map(|p| SimulatedPoint {
            energy_j: p.energy.value(),
            scatter_counts: p.scatter_counts,
            rabi_frequency: p.rabi_frequency.value(),
            p_excite: p.p_excite,
            histogram: p.histogram,
        })
        .collect();
    let references = simulate_references(&model.readout, &model.timing, cfg.reference_repetitions(), seed)?;
    Ok(SimulationArtifact {
        seed,
        config: cfg.resolved()?,
        points,
        references,
    })
}

/// What `analyze` works from.
#[derive(Debug, Clone)]
pub enum AnalysisInput {
    Histograms(Box<SimulationArtifact>),
    Rabi(Vec<RabiDataPoint>),
}

/// JSON files are read as simulation artifacts, anything else as Rabi CSV.
pub fn load_analysis_input(path: &Path, _cfg: &RunConfig) -> Result<AnalysisInput, CliError> {
    if !path.exists() {
        return Err(CliError::Io(format!("{}: no such file", path.display())));
    }
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        Ok(AnalysisInput::Histograms(Box::new(output::read_simulation(path)?)))
    } else {
        Ok(AnalysisInput::Rabi(output::read_rabi_points(path)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalyzedPoint {
    pub index: usize,
    pub scatter_counts: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mixture: Option<MixtureFit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<RabiDataPoint>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum RabiOutcome {
    Fitted {
        model: RabiCurveModel,
        reduced_chi2: f64,
        band: Vec<BandPoint>,
    },
    Failed {
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    /// Configuration the physics was taken from.
    pub config: RunConfig,
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub calibration: Option<Calibration>,
    pub points: Vec<AnalyzedPoint>,
    pub rabi: RabiOutcome,
}

impl AnalysisReport {
    pub fn data(&self) -> Vec<RabiDataPoint> {
        self.points.iter().filter_map(|p| p.data).collect()
    }

    pub fn model(&self) -> Option<&RabiCurveModel> {
        match &self.rabi {
            RabiOutcome::Fitted { model, .. } => Some(model),
            RabiOutcome::Failed { .. } => None,
        }
    }

    /// Fit report as `key = value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[input]");
        if let Some(seed) = self.seed {
            let _ = writeln!(s, "seed = {seed}");
        }
        let _ = writeln!(s, "points = {}", self.points.len());
        let _ = writeln!(s, "points_fitted = {}", self.data().len());
        if let Some(c) = &self.calibration {
            let _ = writeln!(s, "\n[calibration]");
            let _ = writeln!(s, "dark_mean = {:.9e}", c.dark_mean);
            let _ = writeln!(s, "bright_signal_mean = {:.9e}", c.bright.signal_mean);
            let _ = writeln!(s, "bright_leak = {:.9e}", c.bright.leak);
        }
        for p in &self.points {
            let _ = writeln!(s, "\n[point.{}]", p.index);
            let _ = writeln!(s, "c_sc = {:.9e}", p.scatter_counts);
            if let Some(m) = &p.mixture {
                let _ = writeln!(s, "bright_weight = {:.9e}", m.bright_weight);
                let _ = writeln!(s, "bright_weight_std_error = {:.9e}", m.weight_std_error);
                let _ = writeln!(s, "log_likelihood = {:.9e}", m.log_likelihood);
            }
            if let Some(d) = &p.data {
                let _ = writeln!(s, "population = {:.9e}", d.excited_population);
                let _ = writeln!(s, "population_std_error = {:.9e}", d.population_std_error);
            }
            if let Some(e) = &p.error {
                let _ = writeln!(s, "error = {e:?}");
            }
        }
        let _ = writeln!(s, "\n[rabi]");
        match &self.rabi {
            RabiOutcome::Fitted {
                model, reduced_chi2, ..
            } => {
                let _ = writeln!(s, "status = \"fitted\"");
                let _ = writeln!(s, "t_eff = {:.9e}", model.t_eff.value());
                let _ = writeln!(s, "detuning = {:.9e}", model.detuning.value());
                for (i, name) in model.fit.names.iter().enumerate() {
                    let _ = writeln!(s, "{name} = {:.9e}", model.fit.parameters[i]);
                    let _ = writeln!(s, "{name}_std_error = {:.9e}", model.fit.std_error(i));
                }
                let cov: Vec<String> = model
                    .fit
                    .covariance
                    .iter()
                    .map(|row| {
                        format!(
                            "[{}]",
                            row.iter().map(|v| format!("{v:.9e}")).collect::<Vec<_>>().join(", ")
                        )
                    })
                    .collect();
                let _ = writeln!(s, "covariance = [{}]", cov.join(", "));
                let _ = writeln!(s, "reduced_chi2 = {reduced_chi2:.6}");
                let _ = writeln!(s, "converged = {}", model.fit.converged);
                let _ = writeln!(s, "iterations = {}", model.fit.iterations);
                let _ = writeln!(s, "residual_norm = {:.9e}", model.fit.residual_norm);
            }
            RabiOutcome::Failed { reason } => {
                let _ = writeln!(s, "status = \"failed\"");
                let _ = writeln!(s, "reason = {reason:?}");
            }
        }
        s
    }
}

fn data_point(scatter_counts: f64, fit: &MixtureFit) -> Result<RabiDataPoint, ionpulse::Error> {
    // statistical overshoot above 1 is kept up to the validation bound
    let population = population_from_bright_weight(fit.bright_weight).min(1.05);
    RabiDataPoint::new(
        scatter_counts,
        population,
        population_from_bright_weight(fit.weight_std_error),
    )
}

/// Mixture fit per histogram, population scaling, Rabi fit and band.
///
/// Histogram inputs are analysed with the physics of the configuration
/// embedded in them; `cfg` supplies the analysis options. Per-point failures
/// are recorded and skipped; a failed Rabi fit is reported in the outcome.
pub fn cmd_analyze(input: &AnalysisInput, cfg: &RunConfig) -> Result<AnalysisReport, CliError> {
    let analysis = &cfg.analysis;
    let (physics, seed, calibration, points) = match input {
        AnalysisInput::Histograms(artifact) => {
            if artifact.points.is_empty() {
                return Err(CliError::Config("input contains no histograms".into()));
            }
            let calibration = match analysis.mixture {
                MixtureOption::Calibrated => Some(Calibration::from_references(&artifact.references)?),
                MixtureOption::CoFit => None,
            };
            let points = artifact
                .points
                .iter()
                .enumerate()
                .map(|(index, p)| {
                    let fit = match &calibration {
                        Some(c) => fit_histogram_with(&p.histogram, c),
                        None => fit_histogram(&p.histogram, None),
                    };
                    let (mixture, data, error) = match fit {
                        Ok(m) => match data_point(p.scatter_counts, &m) {
                            Ok(d) => (Some(m), Some(d), None),
                            Err(e) => (Some(m), None, Some(e.to_string())),
                        },
                        Err(e) => (None, None, Some(e.to_string())),
                    };
                    AnalyzedPoint {
                        index,
                        scatter_counts: p.scatter_counts,
                        mixture,
                        data,
                        error,
                    }
                })
                .collect();
            (&artifact.config, Some(artifact.seed), calibration, points)
        }
        AnalysisInput::Rabi(data) => {
            if data.is_empty() {
                return Err(CliError::Config("input contains no data points".into()));
            }
            let points = data
                .iter()
                .enumerate()
                .map(|(index, d)| AnalyzedPoint {
                    index,
                    scatter_counts: d.scatter_counts,
                    mixture: None,
                    data: Some(*d),
                    error: None,
                })
                .collect();
            (cfg, None, None, points)
        }
    };

    let spec = physics.pulse_spec()?;
    let t_eff = spec.effective_duration();
    let detuning = spec.detuning;
    let mut report = AnalysisReport {
        config: physics.resolved()?,
        seed,
        calibration,
        points,
        rabi: RabiOutcome::Failed { reason: String::new() },
    };
    let data = report.data();
    report.rabi = match fit_rabi_curve(&data, t_eff, detuning) {
        Ok(model) => {
            let band = band(&model, &data, cfg)?;
            RabiOutcome::Fitted {
                reduced_chi2: model.reduced_chi2(data.len()),
                model,
                band,
            }
        }
        Err(e) => RabiOutcome::Failed { reason: e.to_string() },
    };
    Ok(report)
}

fn band(model: &RabiCurveModel, data: &[RabiDataPoint], cfg: &RunConfig) -> Result<Vec<BandPoint>, CliError> {
    let a = &cfg.analysis;
    if a.band_points < 2 {
        return Err(CliError::Config("analysis.band_points must be at least 2".into()));
    }
    if !(a.band_sigma.is_finite() && a.band_sigma >= 0.0) {
        return Err(CliError::Config("analysis.band_sigma must be non-negative".into()));
    }
    let c_max = data.iter().map(|d| d.scatter_counts).fold(0.0, f64::max) * 1.1;
    let grid: Vec<f64> = (0..a.band_points)
        .map(|i| c_max * i as f64 / (a.band_points - 1) as f64)
        .collect();
    let fixed = FixedParameterUncertainty {
        t_eff: a.t_eff_std,
        detuning: AngularFrequency::from_hz(a.detuning_std.hz())?.value(),
    };
    Ok(confidence_band_with(model, &grid, a.band_sigma, fixed))
}

/// Writes `rabi_points`, `rabi_band` (when fitted) and the fit report.
pub fn write_analysis(report: &AnalysisReport, dir: &Path, format: OutputFormat) -> Result<Vec<PathBuf>, CliError> {
    output::ensure_dir(dir)?;
    let ext = output::extension(format);
    let mut written = Vec::new();
    let points = dir.join(format!("rabi_points.{ext}"));
    output::write_rabi_points(&points, &report.data(), format)?;
    written.push(points);
    if let RabiOutcome::Fitted { band, .. } = &report.rabi {
        let path = dir.join(format!("rabi_band.{ext}"));
        output::write_band(&path, band, report.config.analysis.scatter_counts_per_joule, format)?;
        written.push(path);
    }
    let path = match format {
        OutputFormat::Json => {
            let path = dir.join(output::FIT_REPORT);
            output::write_json(&path, report)?;
            path
        }
        OutputFormat::Csv => {
            let path = dir.join("fit_report.txt");
            fs::write(&path, report.to_text()).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            path
        }
    };
    written.push(path);
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumReport {
    pub source: PathBuf,
    pub samples: usize,
    pub center_hz: f64,
    pub center_std_error_hz: f64,
    pub reference_hz: f64,
    pub detuning_hz: f64,
    pub measured_sigma_hz: f64,
    pub instrument_sigma_hz: f64,
    pub deconvolved_sigma_hz: f64,
    /// Transform-limited Gaussian field duration.
    pub duration: f64,
    pub effective_duration: f64,
}

impl SpectrumReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "source = {:?}", self.source.display().to_string());
        let _ = writeln!(s, "samples = {}", self.samples);
        let _ = writeln!(s, "center = {:.6} GHz", self.center_hz * 1e-9);
        let _ = writeln!(s, "center_std_error = {:.6} GHz", self.center_std_error_hz * 1e-9);
        let _ = writeln!(s, "reference = {:.6} GHz", self.reference_hz * 1e-9);
        let _ = writeln!(s, "detuning = {:+.4} GHz", self.detuning_hz * 1e-9);
        let _ = writeln!(s, "measured_sigma = {:.4} GHz", self.measured_sigma_hz * 1e-9);
        let _ = writeln!(s, "instrument_sigma = {:.4} GHz", self.instrument_sigma_hz * 1e-9);
        let _ = writeln!(s, "deconvolved_sigma = {:.4} GHz", self.deconvolved_sigma_hz * 1e-9);
        let _ = writeln!(s, "duration = {:.4} ps", self.duration * 1e12);
        let _ = writeln!(s, "t_eff = {:.4} ps", self.effective_duration * 1e12);
        s
    }
}

/// Reads a spectrum file and fits it.
pub fn spectrum_report(path: &Path, cfg: &RunConfig) -> Result<SpectrumReport, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let samples = parse_spectrum(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut report = analyze_spectrum(&samples, cfg)?;
    report.source = path.to_path_buf();
    Ok(report)
}

/// Gaussian fit, instrument deconvolution and transform-limited duration.
pub fn analyze_spectrum(samples: &[(f64, f64)], cfg: &RunConfig) -> Result<SpectrumReport, CliError> {
    let fit = fit_gaussian_spectrum(samples)?;
    let model = fit.model.with_instrument_fwhm(cfg.analysis.instrument_resolution.hz());
    let reference = cfg.analysis.reference_frequency.hz();
    let deconvolved = model.deconvolved_sigma()?;
    let duration: Duration = duration_from_spectrum(&model)?;
    Ok(SpectrumReport {
        source: PathBuf::new(),
        samples: samples.len(),
        center_hz: model.center_frequency,
        center_std_error_hz: fit.center_std_error,
        reference_hz: reference,
        detuning_hz: detuning_from_spectrum(&model, reference).hz(),
        measured_sigma_hz: model.sigma,
        instrument_sigma_hz: model.instrument_sigma,
        deconvolved_sigma_hz: deconvolved,
        duration: duration.value(),
        effective_duration: effective_square_duration(duration).value(),
    })
}
