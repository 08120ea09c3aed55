//! Stochastic forward model of the EMCCD and a synthetic biphoton source.
//!
//! Every frame draws from its own ChaCha8 stream (`seed`, stream = frame
//! index), so stacks are bit-identical for a seed regardless of how frames
//! are scheduled across threads.

mod camera;
mod cascade;
mod spdc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use camera::{simulate_dark_frame, Camera, CameraConfig};
pub use cascade::{cascade, cascade_stages, estimate_gain_distribution_moments, GainRegister};
pub use spdc::SpdcSource;

use crate::{Error, Frame, FrameStack, IntensityMap, Result};

/// Random stream of frame `index` under master seed `seed`.
pub fn frame_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// What reaches the sensor in each frame.
#[derive(Debug, Clone)]
pub enum PhotonSource {
    Dark,
    /// Poisson photoelectrons with these per-pixel means.
    Illumination(Vec<f64>),
    Spdc(SpdcSource),
}

/// Generates frame `i` of a reproducible sequence on demand.
#[derive(Debug, Clone)]
pub struct FrameGenerator {
    camera: Camera,
    source: PhotonSource,
    seed: u64,
    exposure: f64,
}

impl FrameGenerator {
    pub fn new(camera: Camera, source: PhotonSource, seed: u64) -> Result<Self> {
        let (w, h) = (camera.config().width, camera.config().height);
        match &source {
            PhotonSource::Dark => {}
            PhotonSource::Illumination(means) => {
                if means.len() != w * h {
                    return Err(Error::DimensionMismatch {
                        expected: (w, h),
                        found: (means.len(), 1),
                    });
                }
                if means.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
                    return Err(Error::invalid("mu", "pixel means must be finite and >= 0"));
                }
            }
            PhotonSource::Spdc(s) => s.check_geometry(w, h)?,
        }
        Ok(FrameGenerator {
            camera,
            source,
            seed,
            exposure: 0.0,
        })
    }

    /// Uniform-intensity or shaped illumination with `mu_f` photons per frame.
    pub fn illuminated(camera: Camera, intensity: &IntensityMap, mu_f: f64, seed: u64) -> Result<Self> {
        let (w, h) = (camera.config().width, camera.config().height);
        if intensity.dims() != (w, h) {
            return Err(Error::DimensionMismatch {
                expected: (w, h),
                found: intensity.dims(),
            });
        }
        if !(mu_f >= 0.0 && mu_f.is_finite()) {
            return Err(Error::invalid("mu_f", format!("{mu_f} must be finite and >= 0")));
        }
        Self::new(camera, PhotonSource::Illumination(intensity.pixel_means(mu_f)), seed)
    }

    pub fn with_exposure(mut self, exposure: f64) -> Self {
        self.exposure = exposure;
        self
    }

    pub fn camera(&self) -> &Camera {
        &self.camera
    }

    /// Frame `index` together with the photoelectron count of every pixel.
    pub fn frame_with_truth(&self, index: u64) -> (Frame, Vec<u32>) {
        let cfg = self.camera.config();
        let mut rng = frame_rng(self.seed, index);
        let photons = match &self.source {
            PhotonSource::Dark => vec![0; cfg.width * cfg.height],
            PhotonSource::Illumination(means) => camera::draw_photons(means, &mut rng),
            PhotonSource::Spdc(s) => s.draw_frame(cfg.width, cfg.height, &mut rng),
        };
        let frame = self.camera.expose(&photons, &mut rng).with_exposure(self.exposure);
        (frame, photons)
    }

    pub fn frame(&self, index: u64) -> Frame {
        self.frame_with_truth(index).0
    }

    /// Frames `start..start + n`, generated in parallel.
    pub fn frames(&self, start: u64, n: usize) -> Vec<Frame> {
        (start..start + n as u64)
            .into_par_iter()
            .map(|i| self.frame(i))
            .collect()
    }

    pub fn stack(&self, n_frames: usize) -> Result<FrameStack> {
        FrameStack::new(self.frames(0, n_frames))
    }

    pub fn stack_with_truth(&self, n_frames: usize) -> Result<(FrameStack, Vec<Vec<u32>>)> {
        let (frames, truth): (Vec<_>, Vec<_>) = (0..n_frames as u64)
            .into_par_iter()
            .map(|i| self.frame_with_truth(i))
            .unzip();
        Ok((FrameStack::new(frames)?, truth))
    }
}

/// `n_frames` frames under illumination `mu_f * intensity`.
pub fn simulate_frames(
    intensity: &IntensityMap,
    mu_f: f64,
    config: &CameraConfig,
    n_frames: usize,
    seed: u64,
) -> Result<FrameStack> {
    let camera = Camera::new(config.clone())?;
    FrameGenerator::illuminated(camera, intensity, mu_f, seed)?.stack(n_frames)
}

/// As [`simulate_frames`], also returning each frame's photoelectron counts.
pub fn simulate_frames_with_truth(
    intensity: &IntensityMap,
    mu_f: f64,
    config: &CameraConfig,
    n_frames: usize,
    seed: u64,
) -> Result<(FrameStack, Vec<Vec<u32>>)> {
    let camera = Camera::new(config.clone())?;
    FrameGenerator::illuminated(camera, intensity, mu_f, seed)?.stack_with_truth(n_frames)
}

/// `n_frames` dark frames.
pub fn simulate_dark_frames(config: &CameraConfig, n_frames: usize, seed: u64) -> Result<FrameStack> {
    let camera = Camera::new(config.clone())?;
    FrameGenerator::new(camera, PhotonSource::Dark, seed)?.stack(n_frames)
}

/// `n_frames` frames of the biphoton source through the detector chain.
pub fn simulate_spdc_frames(
    source: &SpdcSource,
    config: &CameraConfig,
    n_frames: usize,
    seed: u64,
) -> Result<FrameStack> {
    let camera = Camera::new(config.clone())?;
    FrameGenerator::new(camera, PhotonSource::Spdc(source.clone()), seed)?.stack(n_frames)
}
