//! Validated physical scalars and the fixed atomic constants.
//!
//! Frequencies and detunings are stored as angular frequencies (rad/s). The
//! conversion from ordinary frequency happens once, in
//! [`AngularFrequency::from_hz`].

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::ops::Mul;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

macro_rules! scalar {
    ($(#[$meta:meta])* $name:ident, $unit:literal, $check:expr, $what:literal) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
        #[serde(try_from = "f64", into = "f64")]
        pub struct $name(f64);

        impl $name {
            pub const ZERO: Self = Self(0.0);

            pub fn new(value: f64) -> Result<Self> {
                let ok: fn(f64) -> bool = $check;
                if value.is_finite() && ok(value) {
                    Ok(Self(value))
                } else {
                    Err(Error::invalid(format!(
                        concat!(stringify!($name), " must be ", $what, ", got {}"),
                        value
                    )))
                }
            }

            #[inline]
            pub fn value(self) -> f64 {
                self.0
            }
        }

        impl TryFrom<f64> for $name {
            type Error = Error;
            fn try_from(value: f64) -> Result<Self> {
                Self::new(value)
            }
        }

        impl From<$name> for f64 {
            fn from(q: $name) -> f64 {
                q.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{:e} {}", self.0, $unit)
            }
        }
    };
}

scalar!(
    /// Angular frequency in rad/s. May be negative (red detuning).
    AngularFrequency, "rad/s", |_| true, "finite"
);
scalar!(
    /// Time span in seconds.
    Duration, "s", |v| v >= 0.0, "finite and non-negative"
);
scalar!(
    /// Pulse energy in joules.
    Energy, "J", |v| v >= 0.0, "finite and non-negative"
);
scalar!(
    /// Optical intensity in W/m².
    Intensity, "W/m^2", |v| v >= 0.0, "finite and non-negative"
);
scalar!(
    /// Length in metres.
    Length, "m", |v| v >= 0.0, "finite and non-negative"
);

impl AngularFrequency {
    /// `2π f` for an ordinary frequency `f` in Hz.
    pub fn from_hz(hz: f64) -> Result<Self> {
        Self::new(TAU * hz)
    }

    pub fn hz(self) -> f64 {
        self.0 / TAU
    }

    pub fn abs(self) -> Self {
        Self(self.0.abs())
    }
}

impl Duration {
    pub fn from_ps(ps: f64) -> Result<Self> {
        Self::new(ps * 1e-12)
    }

    pub fn ps(self) -> f64 {
        self.0 * 1e12
    }
}

impl Energy {
    pub fn from_nj(nj: f64) -> Result<Self> {
        Self::new(nj * 1e-9)
    }
}

impl Length {
    pub fn from_um(um: f64) -> Result<Self> {
        Self::new(um * 1e-6)
    }
}

/// Angle swept by a constant drive: Ω·t in radians.
impl Mul<Duration> for AngularFrequency {
    type Output = f64;
    fn mul(self, rhs: Duration) -> f64 {
        self.0 * rhs.0
    }
}

/// Converts an ordinary frequency (Hz) to rad/s.
///
/// Panics if `hz` is not finite.
pub fn angular_from_hz(hz: f64) -> AngularFrequency {
    AngularFrequency::from_hz(hz).expect("frequency must be finite")
}

pub fn hz_from_angular(omega: AngularFrequency) -> f64 {
    omega.hz()
}

/// One spontaneous-decay path out of the excited state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayChannel {
    pub label: String,
    pub probability: f64,
    /// Whether the final state scatters light during state-selective readout.
    pub bright: bool,
}

/// Parameters of the ²S₁/₂ – ²P₁/₂ transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionConstants {
    /// Natural linewidth Γ.
    pub gamma: AngularFrequency,
    pub saturation_intensity: Intensity,
    /// Clebsch–Gordan coefficient of the driven π component.
    pub clebsch_gordan: f64,
    pub excited_lifetime: Duration,
    pub branching: Vec<DecayChannel>,
}

/// Allowed mismatch between the quoted lifetime and 1/Γ.
const LIFETIME_TOLERANCE: f64 = 0.01;

impl TransitionConstants {
    pub fn new(
        gamma: AngularFrequency,
        saturation_intensity: Intensity,
        clebsch_gordan: f64,
        excited_lifetime: Duration,
        branching: Vec<DecayChannel>,
    ) -> Result<Self> {
        let constants = Self {
            gamma,
            saturation_intensity,
            clebsch_gordan,
            excited_lifetime,
            branching,
        };
        constants.validate()?;
        Ok(constants)
    }

    /// Checks branching normalisation and lifetime/linewidth consistency.
    pub fn validate(&self) -> Result<()> {
        if self.branching.is_empty() {
            return Err(Error::invalid("branching table is empty"));
        }
        if let Some(bad) = self.branching.iter().find(|c| !(0.0..=1.0).contains(&c.probability)) {
            return Err(Error::invalid(format!(
                "branching probability for {} out of range: {}",
                bad.label, bad.probability
            )));
        }
        let total: f64 = self.branching.iter().map(|c| c.probability).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "branching probabilities sum to {total}, expected 1"
            )));
        }
        if !(self.gamma.value() > 0.0) || !(self.saturation_intensity.value() > 0.0) {
            return Err(Error::invalid("linewidth and saturation intensity must be positive"));
        }
        if !(self.clebsch_gordan.is_finite() && self.clebsch_gordan > 0.0) {
            return Err(Error::invalid("Clebsch-Gordan coefficient must be positive"));
        }
        let product = self.gamma.value() * self.excited_lifetime.value();
        if (product - 1.0).abs() > LIFETIME_TOLERANCE {
            return Err(Error::invalid(format!(
                "lifetime {} inconsistent with linewidth (Γτ = {product:.4})",
                self.excited_lifetime
            )));
        }
        Ok(())
    }

    /// Probability that a decay from the excited state ends in a bright state.
    pub fn bright_branching(&self) -> f64 {
        self.branching.iter().filter(|c| c.bright).map(|c| c.probability).sum()
    }
}

impl Default for TransitionConstants {
    fn default() -> Self {
        yb171_defaults()
    }
}

/// ¹⁷¹Yb⁺ values: Γ = 2π × 19.6 MHz, I_s = 508 W/m², C = 1/√3, τ = 8.12 ns,
/// and equal decay into F=1 m=±1 (bright) and F=0 (dark).
pub fn yb171_defaults() -> TransitionConstants {
    let third = 1.0 / 3.0;
    let channel = |label: &str, bright| DecayChannel {
        label: label.to_string(),
        probability: third,
        bright,
    };
    TransitionConstants {
        gamma: AngularFrequency(2.0 * PI * 19.6e6),
        saturation_intensity: Intensity(508.0),
        clebsch_gordan: 1.0 / 3f64.sqrt(),
        excited_lifetime: Duration(8.12e-9),
        branching: vec![
            channel("S1/2 F=1 m=-1", true),
            channel("S1/2 F=1 m=+1", true),
            channel("S1/2 F=0", false),
        ],
    }
}
