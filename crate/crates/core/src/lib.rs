//! Photon-number-resolving analysis for electron-multiplying CCDs.
//!
//! The crate models EMCCD count statistics (gain register, clock-induced
//! charge, serial-register spurious charge, read noise), fits those models to
//! frame stacks, turns corrected counts into per-pixel photon-number
//! estimates with Bayesian thresholds, and measures biphoton momentum
//! correlations. A stochastic detector simulator supplies ground truth for
//! every estimation stage.
//!
//! Module map:
//! - [`distributions`]: discretized count models and convolution machinery.
//! - [`simulator`]: gain-register cascade, dark/illuminated/SPDC frame generation.
//! - [`calibration`]: correction image, histograms, noise and photon fits.
//! - [`thresholding`]: posterior over photoelectron number, threshold maps, counting.
//! - [`correlation`]: auto/cross convolutions, quantum correlation map, SNR.

pub mod calibration;
pub mod correlation;
pub mod distributions;
mod error;
pub mod frame;
pub mod simulator;
pub mod special;
pub mod thresholding;

pub use error::{Error, Result};
pub use frame::{Frame, FrameStack, FrameTag, IntensityMap, Region};

/// Default A/D saturation value of a 16-bit EMCCD.
pub const SATURATION: u32 = 65_535;
