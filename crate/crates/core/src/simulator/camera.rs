//! Detector chain: photoelectrons and spurious charge through the register,
//! read noise, bias and A/D clamping.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use super::GainRegister;
use crate::distributions::NoiseParams;
use crate::{Error, Frame, FrameTag, Result, SATURATION};

/// Static description of the simulated camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraConfig {
    pub width: usize,
    pub height: usize,
    pub noise: NoiseParams,
    /// Additive offset per row (length `height`, or empty for none).
    #[serde(default)]
    pub bias_rows: Vec<f64>,
    /// Additive offset per column (length `width`, or empty for none).
    #[serde(default)]
    pub bias_cols: Vec<f64>,
    /// Uniform A/D baseline so that read noise is not clipped at zero.
    #[serde(default = "default_offset")]
    pub offset: f64,
    #[serde(default = "default_saturation")]
    pub saturation: u32,
}

fn default_offset() -> f64 {
    CameraConfig::DEFAULT_OFFSET
}

fn default_saturation() -> u32 {
    SATURATION
}

impl CameraConfig {
    pub const DEFAULT_OFFSET: f64 = 500.0;

    pub fn new(width: usize, height: usize, noise: NoiseParams) -> Self {
        CameraConfig {
            width,
            height,
            noise,
            bias_rows: Vec::new(),
            bias_cols: Vec::new(),
            offset: Self::DEFAULT_OFFSET,
            saturation: SATURATION,
        }
    }

    pub fn with_offset(mut self, offset: f64) -> Self {
        self.offset = offset;
        self
    }

    pub fn with_bias(mut self, rows: Vec<f64>, cols: Vec<f64>) -> Self {
        self.bias_rows = rows;
        self.bias_cols = cols;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Empty("camera with zero width or height"));
        }
        if !self.bias_rows.is_empty() && self.bias_rows.len() != self.height {
            return Err(Error::invalid(
                "bias_rows",
                format!("expected {} entries, got {}", self.height, self.bias_rows.len()),
            ));
        }
        if !self.bias_cols.is_empty() && self.bias_cols.len() != self.width {
            return Err(Error::invalid(
                "bias_cols",
                format!("expected {} entries, got {}", self.width, self.bias_cols.len()),
            ));
        }
        if !self.offset.is_finite() {
            return Err(Error::invalid("offset", "must be finite"));
        }
        self.noise.validate()
    }

    /// Deterministic part of every pixel value (offset plus row and column bias).
    pub fn bias_at(&self, x: usize, y: usize) -> f64 {
        self.offset
            + self.bias_rows.get(y).copied().unwrap_or(0.0)
            + self.bias_cols.get(x).copied().unwrap_or(0.0)
    }
}

/// A validated camera with its gain-register tables.
#[derive(Debug, Clone)]
pub struct Camera {
    config: CameraConfig,
    register: Arc<GainRegister>,
    no_serial: f64,
    ln_no_serial_stage: f64,
}

impl Camera {
    pub fn new(config: CameraConfig) -> Result<Self> {
        config.validate()?;
        let register = GainRegister::shared(config.noise.gain);
        let p = config.noise.p_ser;
        Ok(Camera {
            no_serial: (config.noise.gain.n_r as f64 * (-p).ln_1p()).exp(),
            ln_no_serial_stage: (-p).ln_1p(),
            config,
            register,
        })
    }

    pub fn config(&self) -> &CameraConfig {
        &self.config
    }

    pub fn register(&self) -> &GainRegister {
        &self.register
    }

    /// Electrons at the register output for a pixel holding `photoelectrons`,
    /// including clock-induced and serial-register charge.
    pub fn pixel_electrons<R: Rng + ?Sized>(&self, photoelectrons: u64, rng: &mut R) -> u64 {
        let noise = &self.config.noise;
        let n_r = noise.gain.n_r;
        let cic = u64::from(noise.p_cic > 0.0 && rng.random::<f64>() < noise.p_cic);
        let mut out = self.register.sample(photoelectrons + cic, rng);
        if noise.p_ser > 0.0 && rng.random::<f64>() >= self.no_serial {
            // At least one serial electron: walk the stages with geometric gaps,
            // the first gap conditioned to land inside the register.
            let mut stage = 0u32;
            let mut first = true;
            loop {
                let mut v: f64 = 1.0 - rng.random::<f64>();
                if first {
                    v = 1.0 - (1.0 - v) * (1.0 - self.no_serial);
                    first = false;
                }
                let gap = (v.ln() / self.ln_no_serial_stage).floor();
                if gap >= (n_r - stage) as f64 {
                    break;
                }
                stage += gap as u32 + 1;
                // Born in stage `stage`, amplified by the stages after it.
                out += self.register.sample_one(n_r - stage, rng);
                if stage >= n_r {
                    break;
                }
            }
        }
        out
    }

    /// Acquired frame for the given per-pixel photoelectron counts.
    pub fn expose<R: Rng + ?Sized>(&self, photoelectrons: &[u32], rng: &mut R) -> Frame {
        let (w, h) = (self.config.width, self.config.height);
        debug_assert_eq!(photoelectrons.len(), w * h);
        let sigma = self.config.noise.sigma_n;
        let sat = self.config.saturation as f64;
        let mut values = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let e = self.pixel_electrons(photoelectrons[y * w + x] as u64, rng) as f64;
                let read: f64 = rng.sample(StandardNormal);
                let v = (self.config.bias_at(x, y) + e + sigma * read).round();
                values.push(v.clamp(0.0, sat));
            }
        }
        Frame {
            width: w,
            height: h,
            values,
            exposure: 0.0,
            tag: FrameTag::Simulated,
        }
    }

    pub fn dark_frame<R: Rng + ?Sized>(&self, rng: &mut R) -> Frame {
        self.expose(&vec![0; self.config.width * self.config.height], rng)
    }
}

/// One dark frame: spurious charge, read noise and bias only.
pub fn simulate_dark_frame<R: Rng + ?Sized>(config: &CameraConfig, rng: &mut R) -> Result<Frame> {
    Ok(Camera::new(config.clone())?.dark_frame(rng))
}

/// Poisson photoelectron draws for per-pixel means.
pub(crate) fn draw_photons<R: Rng + ?Sized>(means: &[f64], rng: &mut R) -> Vec<u32> {
    means
        .iter()
        .map(|&mu| {
            if mu > 0.0 {
                Poisson::new(mu).expect("positive mean").sample(rng) as u32
            } else {
                0
            }
        })
        .collect()
}
