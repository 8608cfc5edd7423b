//! Parameter recovery from simulated or measured data.

mod jacobian;
mod lm;
pub mod mixture;
pub mod rabi;
pub mod spectrum;

pub use jacobian::finite_difference_jacobian;
pub use lm::{levenberg_marquardt, FitResult, LeastSquares, LmOptions};
pub use mixture::{fit_histogram, fit_histogram_with, population_from_bright_weight, Calibration, MixtureFit};
pub use rabi::{
    confidence_band, confidence_band_with, fit_rabi_curve, BandPoint, FixedParameterUncertainty, RabiCurveModel,
    RabiDataPoint,
};
pub use spectrum::{fit_gaussian_spectrum, GaussianSpectrumFit};
