//! Count distributions of an EMCCD and the convolution machinery behind them.
//!
//! Everything lives on a unit-width integer count grid. Continuous densities
//! (the Gamma law of the gain register, the exponential tails of spurious
//! charge, the Bessel form of the Poisson-Gamma mixture) are evaluated at the
//! integer bin centres for `x >= 1`; the `x = 0` bin receives whatever mass is
//! left so that every pmf sums to one. The read-noise Gaussian is sampled at
//! bin centres, truncated at eight standard deviations and renormalized.

mod amplifier;
mod convolve;
mod noise;
pub(crate) mod pgn;
mod pmf;
mod poisson_gamma;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use amplifier::{amplifier_pmf, gamma_density};
pub use convolve::convolve;
pub use noise::{noise_pmf, NoiseModel};
pub use pgn::{photon_mixture_weights, pgn_pmf};
pub use pmf::{DiscretePmf, Support};
pub use poisson_gamma::{poisson_gamma_density, poisson_gamma_pmf};

pub(crate) use amplifier::{amplifier_electrons, gamma_extent, mixed_leftover};

/// Stochastic gain register: `n_r` stages, each duplicating an electron with
/// probability `p_c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainModel {
    pub p_c: f64,
    pub n_r: u32,
}

impl GainModel {
    pub fn new(p_c: f64, n_r: u32) -> Result<Self> {
        let g = GainModel { p_c, n_r };
        g.validate()?;
        Ok(g)
    }

    /// Register whose mean gain `(1 + p_c)^n_r` equals `gain`.
    pub fn from_mean_gain(gain: f64, n_r: u32) -> Result<Self> {
        if !(gain > 1.0) || n_r == 0 {
            return Err(Error::invalid("gain", format!("mean gain {gain} must exceed 1")));
        }
        GainModel::new(gain.powf(1.0 / n_r as f64) - 1.0, n_r)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p_c > 0.0 && self.p_c < 1.0) {
            return Err(Error::invalid("p_c", format!("{} not in (0, 1)", self.p_c)));
        }
        if self.n_r == 0 {
            return Err(Error::invalid("n_r", "register needs at least one stage"));
        }
        Ok(())
    }

    /// Mean gain `G = (1 + p_c)^n_r`.
    pub fn mean_gain(&self) -> f64 {
        (self.n_r as f64 * self.p_c.ln_1p()).exp()
    }

    /// Gain seen by an electron born in stage `m` (1-based): `(1 + p_c)^(n_r - m)`.
    pub fn stage_gain(&self, m: u32) -> f64 {
        ((self.n_r - m) as f64 * self.p_c.ln_1p()).exp()
    }

    /// Mean output of one serial-register electron averaged over its birth stage,
    /// times `n_r`: `sum_m (1 + p_c)^(n_r - m)`.
    pub fn serial_gain_sum(&self) -> f64 {
        (self.mean_gain() - 1.0) / self.p_c
    }
}

/// The four dark-noise parameters plus the gain register they act through.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    /// Read-noise standard deviation (counts).
    pub sigma_n: f64,
    /// Clock-induced-charge probability per pixel per frame.
    pub p_cic: f64,
    /// Spurious-electron probability per gain stage.
    pub p_ser: f64,
    pub gain: GainModel,
}

impl NoiseParams {
    pub fn new(sigma_n: f64, p_cic: f64, p_ser: f64, gain: GainModel) -> Result<Self> {
        let p = NoiseParams {
            sigma_n,
            p_cic,
            p_ser,
            gain,
        };
        p.validate()?;
        Ok(p)
    }

    /// Values reported for the reference camera: sigma_N = 14.19,
    /// p_CIC = 0.0477, p_ser = 1.6e-4, p_c = 0.00573 with a 552-stage register.
    pub fn reference() -> Self {
        NoiseParams {
            sigma_n: 14.19,
            p_cic: 0.0477,
            p_ser: 1.6e-4,
            gain: GainModel {
                p_c: 0.00573,
                n_r: 552,
            },
        }
    }

    /// Same noise with the register re-tuned to mean gain `gain`.
    pub fn with_mean_gain(self, gain: f64) -> Result<Self> {
        Ok(NoiseParams {
            gain: GainModel::from_mean_gain(gain, self.gain.n_r)?,
            ..self
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_n > 0.0 && self.sigma_n.is_finite()) {
            return Err(Error::invalid("sigma_n", format!("{} must be > 0", self.sigma_n)));
        }
        if !(self.p_cic >= 0.0 && self.p_cic < 1.0) {
            return Err(Error::invalid("p_cic", format!("{} not in [0, 1)", self.p_cic)));
        }
        let serial = self.p_ser * self.gain.n_r as f64;
        if !(self.p_ser >= 0.0 && serial < 1.0) {
            return Err(Error::invalid(
                "p_ser",
                format!("n_r * p_ser = {serial} not in [0, 1)"),
            ));
        }
        self.gain.validate()
    }

    /// Analytic mean of the dark count: `p_CIC G + p_ser sum_m (1 + p_c)^(n_r - m)`.
    pub fn analytic_mean(&self) -> f64 {
        self.p_cic * self.gain.mean_gain() + self.p_ser * self.gain.serial_gain_sum()
    }
}
