//! Coherent excitation of a trapped two-level ion by a single ultrafast pulse.
//!
//! The crate is split along the measurement chain:
//!
//! - [`quantities`]: validated physical scalars and the Yb⁺ transition constants.
//! - [`pulse`]: pulse envelopes, focal intensity, square-pulse equivalents and
//!   the spectrum/duration relation of transform-limited Gaussian pulses.
//! - [`dynamics`]: the rectangular-pulse excitation formula, a Runge–Kutta
//!   integrator for arbitrary envelopes, and the Rabi frequency expected from
//!   beam parameters.
//! - [`protocol`]: Monte Carlo simulation of the cool / pump / excite / read
//!   cycle producing photon-count histograms.
//! - [`estimation`]: bright/dark mixture fits, Rabi-curve fits with confidence
//!   bands, and Gaussian spectrum fits.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod error;
pub mod estimation;
pub mod protocol;
pub mod pulse;
pub mod quantities;

pub use error::{Error, Result};
