//! Pulse envelopes, focal intensity and the time/frequency relations of
//! transform-limited Gaussian pulses.
//!
//! Gaussian durations follow one convention throughout the crate: a pulse of
//! duration `d` has the field (Rabi-frequency) envelope `exp(-t² / 2d²)`.
//! Under this convention the pulse area equals that of a square pulse of
//! width `√(2π)·d` at the same peak field, and the energy equals that of a
//! square pulse of width `√π·d` at the same peak intensity.

use std::f64::consts::{PI, SQRT_2};

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::quantities::{AngularFrequency, Duration, Energy, Intensity, Length};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PulseShape {
    Rectangular,
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseSpec {
    pub shape: PulseShape,
    pub energy: Energy,
    /// Full width for rectangular pulses, Gaussian duration `d` otherwise.
    pub shape_duration: Duration,
    pub detuning: AngularFrequency,
    /// Beam waist at the ion.
    pub waist: Length,
}

impl PulseSpec {
    pub fn new(
        shape: PulseShape,
        energy: Energy,
        shape_duration: Duration,
        detuning: AngularFrequency,
        waist: Length,
    ) -> Result<Self> {
        let spec = Self {
            shape,
            energy,
            shape_duration,
            detuning,
            waist,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.shape_duration.value() <= 0.0 {
            return Err(Error::invalid("pulse duration must be positive"));
        }
        if self.waist.value() <= 0.0 {
            return Err(Error::invalid("beam waist must be positive"));
        }
        Ok(())
    }

    /// Width of the square pulse with the same area at the same peak field.
    pub fn effective_duration(&self) -> Duration {
        match self.shape {
            PulseShape::Rectangular => self.shape_duration,
            PulseShape::Gaussian => effective_square_duration(self.shape_duration),
        }
    }

    /// Width of the square pulse carrying the same energy at the same peak
    /// intensity.
    pub fn intensity_square_width(&self) -> Duration {
        match self.shape {
            PulseShape::Rectangular => self.shape_duration,
            PulseShape::Gaussian => equivalent_square_width_for_intensity(self.shape_duration),
        }
    }

    pub fn with_energy(&self, energy: Energy) -> Self {
        Self { energy, ..self.clone() }
    }
}

/// Peak intensity `2E / (π w₀² t_p)` of a pulse with a Gaussian transverse
/// profile and a square temporal profile of width `t_p`.
///
/// Gaussian pulses are replaced by their energy-equivalent square width
/// `√π·d` first.
pub fn peak_intensity(spec: &PulseSpec) -> Result<Intensity> {
    spec.validate()?;
    let waist = spec.waist.value();
    let width = spec.intensity_square_width().value();
    Intensity::new(2.0 * spec.energy.value() / (PI * waist * waist * width))
}

/// `√(2π)·d`: square pulse with the area of a Gaussian of duration `d`.
pub fn effective_square_duration(gaussian_duration: Duration) -> Duration {
    Duration::new(gaussian_duration.value() * (2.0 * PI).sqrt()).expect("scaling a valid duration")
}

/// `√π·d`: square pulse with the energy of a Gaussian of duration `d`.
pub fn equivalent_square_width_for_intensity(gaussian_duration: Duration) -> Duration {
    Duration::new(gaussian_duration.value() * PI.sqrt()).expect("scaling a valid duration")
}

/// Normalised Gaussian field envelope at time `t` (peak at `t = 0`).
#[inline]
pub fn gaussian_field(t: f64, duration: f64) -> f64 {
    (-0.5 * (t / duration).powi(2)).exp()
}

/// `Θ = Ω_eff · t_eff`.
pub fn pulse_area(omega_eff: AngularFrequency, t_eff: Duration) -> f64 {
    omega_eff * t_eff
}

/// Gaussian model of a measured intensity spectrum. All frequencies in Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumModel {
    pub center_frequency: f64,
    /// Standard deviation of the intensity spectrum.
    pub sigma: f64,
    pub amplitude: f64,
    /// Standard deviation of the spectrometer response.
    pub instrument_sigma: f64,
}

impl SpectrumModel {
    /// Spectrometer resolution quoted as a FWHM, converted to a standard
    /// deviation.
    pub fn with_instrument_fwhm(mut self, fwhm: f64) -> Self {
        self.instrument_sigma = fwhm / FWHM_PER_SIGMA;
        self
    }

    /// Intrinsic spectral width after removing the instrument response in
    /// quadrature.
    pub fn deconvolved_sigma(&self) -> Result<f64> {
        if !(self.sigma > self.instrument_sigma) || self.instrument_sigma < 0.0 {
            return Err(Error::Deconvolution {
                measured: self.sigma,
                instrument: self.instrument_sigma,
            });
        }
        Ok((self.sigma.powi(2) - self.instrument_sigma.powi(2)).sqrt())
    }
}

/// `2√(2 ln 2)`.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;

/// Transform-limited Gaussian duration whose intensity spectrum has the
/// (deconvolved) standard deviation of `spectrum`.
///
/// A field `exp(-t²/2d²)` has the intensity spectrum `exp(-ω² d²)`, i.e. a
/// standard deviation of `1 / (2√2 π d)` in Hz.
pub fn duration_from_spectrum(spectrum: &SpectrumModel) -> Result<Duration> {
    let sigma = spectrum.deconvolved_sigma()?;
    Duration::new(1.0 / (2.0 * SQRT_2 * PI * sigma))
}

/// Inverse of [`duration_from_spectrum`]: intensity-spectrum standard
/// deviation (Hz) of a transform-limited pulse.
pub fn spectral_sigma_for_duration(duration: Duration) -> f64 {
    1.0 / (2.0 * SQRT_2 * PI * duration.value())
}

/// `2π (f_center − f_reference)`; negative for red detuning.
pub fn detuning_from_spectrum(spectrum: &SpectrumModel, reference_frequency: f64) -> AngularFrequency {
    AngularFrequency::from_hz(spectrum.center_frequency - reference_frequency).expect("finite spectrum centre")
}

/// Intensity spectrum of a transform-limited Gaussian pulse, computed by
/// sampling the field envelope and taking a discrete Fourier transform.
///
/// Returns `(frequency_Hz, power)` pairs within `±span_sigmas` spectral
/// standard deviations of `center_frequency`, normalised to unit peak.
pub fn transform_limited_spectrum(
    duration: Duration,
    center_frequency: f64,
    span_sigmas: f64,
) -> Result<Vec<(f64, f64)>> {
    let d = duration.value();
    if d <= 0.0 {
        return Err(Error::invalid("pulse duration must be positive"));
    }
    const N: usize = 1 << 14;
    // 64 d time window gives a frequency step of 1/(64 d), about 1/9 of the
    // spectral sigma; dt = 64 d / N resolves the envelope comfortably.
    let window = 64.0 * d;
    let dt = window / N as f64;
    let mut buf: Vec<Complex<f64>> = (0..N)
        .map(|i| {
            // centre the pulse on sample 0 (wrapped) so the spectrum is real
            let k = if i < N / 2 { i as f64 } else { i as f64 - N as f64 };
            Complex::new(gaussian_field(k * dt, d), 0.0)
        })
        .collect();
    FftPlanner::new().plan_fft_forward(N).process(&mut buf);

    let df = 1.0 / window;
    let sigma = spectral_sigma_for_duration(duration);
    let peak = buf[0].norm_sqr();
    let mut out: Vec<(f64, f64)> = buf
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let k = if i < N / 2 { i as f64 } else { i as f64 - N as f64 };
            (k * df, c.norm_sqr() / peak)
        })
        .filter(|(f, _)| f.abs() <= span_sigmas * sigma)
        .map(|(f, p)| (center_frequency + f, p))
        .collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(out)
}

/// Parses a two-column `frequency_Hz amplitude` spectrum. Columns may be
/// separated by whitespace or a comma; blank lines and lines starting with
/// `#` are skipped.
pub fn parse_spectrum(text: &str) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .collect();
        let parse_error = |message: String| Error::Parse { line: i + 1, message };
        if fields.len() != 2 {
            return Err(parse_error(format!(
                "expected 2 columns, found {} in {line:?}",
                fields.len()
            )));
        }
        let number = |s: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_error(format!("not a finite number: {s:?}")))
        };
        out.push((number(fields[0])?, number(fields[1])?));
    }
    Ok(out)
}

/// Inverse of [`parse_spectrum`].
pub fn format_spectrum(samples: &[(f64, f64)]) -> String {
    let mut s = String::from("# frequency_Hz amplitude\n");
    for (f, a) in samples {
        s.push_str(&format!("{f:e} {a:e}\n"));
    }
    s
}
