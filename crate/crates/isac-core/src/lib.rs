//! Numerical core for wideband sub-THz integrated sensing and communication.
//!
//! The crate is organised bottom-up:
//!
//! * [`arrays`]: UPA steering vectors, derivatives, Dirichlet kernels, beamspace dictionaries.
//! * [`scene`]: world geometry, pinhole cameras, a synthetic detector and positioning spectra.
//! * [`channels`]: per-subcarrier communication and target-response channels, beamspace
//!   profiles and the C-S channel correlation.
//! * [`precoder`]: the TTD + PS + digital hybrid precoder, squint trajectories and
//!   hybrid factorization.
//! * [`tracking`]: squint-aware cross-pattern beam tracking.
//! * [`metrics`]: spectral efficiency, Fisher information, CRB, the ISAC loss and
//!   frame-level efficiency.
//! * [`pareto`]: optimal waveform covariance, Pareto sweeps and a loss-driven
//!   precoder search.

pub mod arrays;
pub mod channels;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod pareto;
pub mod precoder;
pub mod scenario;
pub mod scene;
pub mod tracking;

pub use error::{IsacError, Result};

/// Complex scalar used throughout the crate.
pub type C64 = num_complex::Complex64;
/// Dense complex matrix.
pub type CMat = nalgebra::DMatrix<C64>;
/// Dense complex column vector.
pub type CVec = nalgebra::DVector<C64>;

/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Crate version.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
