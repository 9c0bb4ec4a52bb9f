//! Joint transmit beamforming and fluid-antenna placement for multi-static
//! integrated sensing and communication.
//!
//! Antenna coordinates are expressed in wavelengths throughout, so the
//! wavenumber is `2 pi`. Powers are in watts.
//!
//! The pipeline is
//!
//! 1. [`scenario`] draws a topology and channel realization from a seed,
//! 2. [`beamforming`] solves the relaxed covariance design for fixed antennas,
//! 3. [`txpos`] and [`rxpos`] move transmit and user antennas,
//! 4. [`optimizer`] alternates the three blocks under a penalty on the
//!    communication constraints,
//! 5. [`detection`] maps the sensing objective to a detection probability.

pub mod beamforming;
pub mod detection;
mod error;
pub mod optimizer;
pub mod physics;
pub mod rxpos;
pub mod scenario;
pub mod txpos;

pub use error::Error;

pub type C64 = nalgebra::Complex<f64>;
pub type CMat = nalgebra::DMatrix<C64>;
pub type CVec = nalgebra::DVector<C64>;

/// A point in an antenna region, in wavelengths.
pub type Point = [f64; 2];

/// Wavenumber for coordinates measured in wavelengths.
pub const WAVENUMBER: f64 = 2.0 * std::f64::consts::PI;

/// Minimum spacing between elements of one array, in wavelengths.
pub const MIN_SEPARATION: f64 = 0.5;
