//! Correction image, count histograms and the weighted least-squares fits
//! of the noise and photon models.
//!
//! Weighted residual of a bin: `(p_emp - p_model) / max(p_emp, 0.5 / N)`
//! with `N` the number of events; empty bins are left out. Probabilities are
//! fitted in logit space, `sigma_N` and `mu_f` in log space.

mod correction;
mod fit;
mod histogram;
mod lm;

pub use correction::{compute_correction_image, correct, correct_frame, CorrectionAccumulator, CorrectionImage};
pub use fit::{
    estimate_intensity_map, fit_noise, fit_photon_model, initial_mu_f, initial_noise_guess, FitOptions, FitResult,
    MIN_NOISE_EVENTS,
};
pub use histogram::{histogram, CountHistogram};
