//! Photon-number inference for single pixels.
//!
//! A pixel with mean photoelectron number `mu` and count `x` has posterior
//! `P(k | x, mu) ∝ Poisson(k | mu) [P_N * P_{X_k}](x)`. Threshold counts
//! split the count axis into intervals where one `k` is the most probable;
//! a [`ThresholdMap`] holds those intervals for every pixel of a region and
//! [`count_photons`] applies them to corrected frames.

mod intervals;
mod map;
mod posterior;

pub use intervals::{region_mean, thresholds, Interval, ThresholdSet, DEFAULT_CUTOFF};
pub use map::{binary_threshold, count_photons, Baseline, PhotonFrame, ThresholdMap, MU_QUANTUM};
pub use posterior::{k_max, mean_photoelectron, posterior, MomentCurves, PosteriorEngine, PosteriorTable};
