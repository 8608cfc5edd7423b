//! On-disk artifacts: histogram files, Rabi data, bands and reports.

use std::fs;
use std::path::{Path, PathBuf};

use ionpulse::estimation::{BandPoint, RabiDataPoint};
use ionpulse::protocol::{CountHistogram, ReferenceHistograms};
use serde::{Deserialize, Serialize};

use crate::config::{OutputFormat, RunConfig};
use crate::CliError;

pub const HISTOGRAM_FILE: &str = "histograms.json";
pub const HISTOGRAM_CSV: &str = "histograms.csv";
pub const REFERENCE_CSV: &str = "references.csv";
pub const FIT_REPORT: &str = "fit_report.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedPoint {
    pub energy_j: f64,
    pub scatter_counts: f64,
    pub rabi_frequency: f64,
    pub p_excite: f64,
    pub histogram: CountHistogram,
}

/// Everything `simulate` produces; `analyze` reads it back unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationArtifact {
    pub seed: u64,
    /// Fully resolved configuration of the run.
    pub config: RunConfig,
    pub points: Vec<SimulatedPoint>,
    pub references: ReferenceHistograms,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    text.push('\n');
    write_text(path, &text)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, CliError> {
    csv::Writer::from_path(path).map_err(|e| io_err(path, e))
}

fn finish(path: &Path, mut w: csv::Writer<fs::File>) -> Result<(), CliError> {
    w.flush().map_err(|e| io_err(path, e))
}

/// Writes the JSON artifact and, for CSV output, flat histogram tables.
pub fn write_simulation(
    artifact: &SimulationArtifact,
    dir: &Path,
    format: OutputFormat,
) -> Result<Vec<PathBuf>, CliError> {
    ensure_dir(dir)?;
    let mut written = Vec::new();
    let json = dir.join(HISTOGRAM_FILE);
    write_json(&json, artifact)?;
    written.push(json);
    if format == OutputFormat::Csv {
        let path = dir.join(HISTOGRAM_CSV);
        let mut w = csv_writer(&path)?;
        w.write_record(["energy", "count_value", "occurrences"])
            .map_err(|e| io_err(&path, e))?;
        for p in &artifact.points {
            for (c, n) in p.histogram.iter() {
                w.serialize((p.energy_j, c, n)).map_err(|e| io_err(&path, e))?;
            }
        }
        finish(&path, w)?;
        written.push(path);

        let path = dir.join(REFERENCE_CSV);
        let mut w = csv_writer(&path)?;
        w.write_record(["reference", "count_value", "occurrences"])
            .map_err(|e| io_err(&path, e))?;
        for (name, h) in [
            ("bright", &artifact.references.bright),
            ("dark", &artifact.references.dark),
        ] {
            for (c, n) in h.iter() {
                w.serialize((name, c, n)).map_err(|e| io_err(&path, e))?;
            }
        }
        finish(&path, w)?;
        written.push(path);
    }
    Ok(written)
}

pub fn read_simulation(path: &Path) -> Result<SimulationArtifact, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

#[derive(Debug, Serialize, Deserialize)]
struct RabiRow {
    c_sc: f64,
    population: f64,
    population_std_error: f64,
}

pub fn write_rabi_points(path: &Path, points: &[RabiDataPoint], format: OutputFormat) -> Result<(), CliError> {
    let rows: Vec<RabiRow> = points
        .iter()
        .map(|p| RabiRow {
            c_sc: p.scatter_counts,
            population: p.excited_population,
            population_std_error: p.population_std_error,
        })
        .collect();
    match format {
        OutputFormat::Json => write_json(path, &rows),
        OutputFormat::Csv => {
            let mut w = csv_writer(path)?;
            for r in &rows {
                w.serialize(r).map_err(|e| io_err(path, e))?;
            }
            finish(path, w)
        }
    }
}

/// Reads `c_sc,population,population_std_error` rows.
pub fn read_rabi_points(path: &Path) -> Result<Vec<RabiDataPoint>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    r.deserialize::<RabiRow>()
        .enumerate()
        .map(|(i, row)| {
            let row = row.map_err(|e| CliError::Config(format!("{} row {}: {e}", path.display(), i + 1)))?;
            Ok(RabiDataPoint {
                scatter_counts: row.c_sc,
                excited_population: row.population,
                population_std_error: row.population_std_error,
            })
        })
        .collect()
}

#[derive(Debug, Serialize)]
struct BandRow {
    c_sc: f64,
    energy_j: f64,
    pulse_area: f64,
    population: f64,
    lower: f64,
    upper: f64,
}

pub fn write_band(
    path: &Path,
    band: &[BandPoint],
    counts_per_joule: f64,
    format: OutputFormat,
) -> Result<(), CliError> {
    let rows: Vec<BandRow> = band
        .iter()
        .map(|b| BandRow {
            c_sc: b.scatter_counts,
            energy_j: if counts_per_joule > 0.0 {
                b.scatter_counts / counts_per_joule
            } else {
                f64::NAN
            },
            pulse_area: b.pulse_area,
            population: b.center,
            lower: b.lower,
            upper: b.upper,
        })
        .collect();
    match format {
        OutputFormat::Json => write_json(path, &rows),
        OutputFormat::Csv => {
            let mut w = csv_writer(path)?;
            for r in &rows {
                w.serialize(r).map_err(|e| io_err(path, e))?;
            }
            finish(path, w)
        }
    }
}

pub fn extension(format: OutputFormat) -> &'static str {
    match format {
        OutputFormat::Csv => "csv",
        OutputFormat::Json => "json",
    }
}
