//! Per-pixel threshold maps and conversion of frames to photon numbers.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::intervals::ThresholdSet;
use super::posterior::PosteriorEngine;
use crate::distributions::NoiseParams;
use crate::{Error, Frame, FrameTag, IntensityMap, Region, Result};

/// Relative step of the `mu` grid on which threshold sets are shared.
pub const MU_QUANTUM: f64 = 1e-4;

fn mu_key(mu: f64) -> Option<i64> {
    (mu > 0.0).then(|| (mu.ln() / MU_QUANTUM).round() as i64)
}

fn key_mu(key: Option<i64>) -> f64 {
    key.map_or(0.0, |k| (k as f64 * MU_QUANTUM).exp())
}

fn one() -> u32 {
    1
}

/// Threshold sets for every pixel of a region. Pixels whose means agree to
/// within [`MU_QUANTUM`] (relative) share one set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdMap {
    pub region: Region,
    pub mu_f: f64,
    pub cutoff: f64,
    /// Photon number every set resolves regardless of the cutoff.
    #[serde(default = "one")]
    pub min_k: u32,
    pub noise: NoiseParams,
    sets: Vec<ThresholdSet>,
    /// Row-major index into `sets` for every pixel of the region.
    index: Vec<u32>,
}

impl ThresholdMap {
    /// Map for pixel means `mu_f * intensity`, placed at the origin of the
    /// frame.
    pub fn build(intensity: &IntensityMap, mu_f: f64, noise: &NoiseParams, cutoff: f64) -> Result<Self> {
        let engine = PosteriorEngine::new(noise)?;
        Self::build_with(&engine, intensity, mu_f, cutoff)
    }

    /// Same as [`build`](Self::build) on an existing engine.
    pub fn build_with(engine: &PosteriorEngine, intensity: &IntensityMap, mu_f: f64, cutoff: f64) -> Result<Self> {
        Self::build_resolving(engine, intensity, mu_f, cutoff, 1)
    }

    /// Map whose sets all reach at least `min_k` photons.
    pub fn build_resolving(
        engine: &PosteriorEngine,
        intensity: &IntensityMap,
        mu_f: f64,
        cutoff: f64,
        min_k: u32,
    ) -> Result<Self> {
        let sum = intensity.sum();
        if (sum - 1.0).abs() > IntensityMap::NORMALIZATION_TOLERANCE {
            return Err(Error::NotNormalized { sum });
        }
        if !(mu_f >= 0.0 && mu_f.is_finite()) {
            return Err(Error::invalid("mu_f", format!("{mu_f} must be finite and >= 0")));
        }
        let keys: Vec<Option<i64>> = intensity.values().iter().map(|v| mu_key(v * mu_f)).collect();
        let mut distinct: Vec<Option<i64>> = keys.clone();
        distinct.sort_unstable();
        distinct.dedup();
        let sets = distinct
            .par_iter()
            .map(|&k| engine.thresholds_resolving(key_mu(k), cutoff, min_k))
            .collect::<Result<Vec<_>>>()?;
        let slot: HashMap<Option<i64>, u32> = distinct.iter().enumerate().map(|(i, &k)| (k, i as u32)).collect();
        let (width, height) = intensity.dims();
        Ok(ThresholdMap {
            region: Region::full(width, height),
            mu_f,
            cutoff,
            min_k,
            noise: *engine.model().params(),
            sets,
            index: keys.iter().map(|k| slot[k]).collect(),
        })
    }

    /// The same map placed at `(x0, y0)` of the frame.
    pub fn at(mut self, x0: usize, y0: usize) -> Self {
        self.region.x0 = x0;
        self.region.y0 = y0;
        self
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.region.width, self.region.height)
    }

    /// Distinct threshold sets in the map.
    pub fn sets(&self) -> &[ThresholdSet] {
        &self.sets
    }

    /// Set-table index of every pixel, row-major over the region.
    pub fn indices(&self) -> &[u32] {
        &self.index
    }

    /// Rebuilds a map from its parts (as stored on disk).
    pub fn from_parts(
        region: Region,
        mu_f: f64,
        cutoff: f64,
        min_k: u32,
        noise: NoiseParams,
        sets: Vec<ThresholdSet>,
        index: Vec<u32>,
    ) -> Result<Self> {
        if index.len() != region.pixel_count() {
            return Err(Error::DimensionMismatch {
                expected: (region.width, region.height),
                found: (index.len(), 1),
            });
        }
        if index.iter().any(|&i| i as usize >= sets.len()) {
            return Err(Error::invalid("index", "refers past the end of the set table"));
        }
        Ok(ThresholdMap {
            region,
            mu_f,
            cutoff,
            min_k,
            noise,
            sets,
            index,
        })
    }

    /// Threshold set of region pixel `(x, y)`.
    pub fn set_at(&self, x: usize, y: usize) -> &ThresholdSet {
        &self.sets[self.index[y * self.region.width + x] as usize]
    }
}

/// Photon-number estimates for the pixels of a region.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhotonFrame {
    pub width: usize,
    pub height: usize,
    pub values: Vec<u32>,
}

impl PhotonFrame {
    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.values[y * self.width + x]
    }

    pub fn total(&self) -> u64 {
        self.values.iter().map(|&v| v as u64).sum()
    }

    /// Estimates above `k` replaced by `k`.
    pub fn clamped(mut self, k: u32) -> Self {
        for v in &mut self.values {
            *v = (*v).min(k);
        }
        self
    }

    pub fn to_frame(&self) -> Frame {
        Frame {
            width: self.width,
            height: self.height,
            values: self.values.iter().map(|&v| v as f64).collect(),
            exposure: 0.0,
            tag: FrameTag::PhotonCounted,
        }
    }
}

/// Maps every pixel of the map's region to the photon number whose interval
/// holds its count.
pub fn count_photons(frame: &Frame, map: &ThresholdMap) -> Result<PhotonFrame> {
    map.region.check_within(frame.width, frame.height).map_err(|_| Error::DimensionMismatch {
        expected: (map.region.x0 + map.region.width, map.region.y0 + map.region.height),
        found: frame.dims(),
    })?;
    let idx: Vec<usize> = map.region.indices(frame.width).collect();
    let values = idx
        .par_iter()
        .zip(map.index.par_iter())
        .map(|(&i, &s)| map.sets[s as usize].classify(frame.values[i]))
        .collect();
    Ok(PhotonFrame {
        width: map.region.width,
        height: map.region.height,
        values,
    })
}

/// Reference level of the `n sigma_N` binary threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    /// Mean of the frame being thresholded.
    FrameMean,
    /// A per-pixel mean (for instance over the whole stack), row-major.
    PerPixel(Vec<f64>),
    Fixed(f64),
}

/// 1 where `count > baseline + n sigma_N`, else 0.
pub fn binary_threshold(frame: &Frame, noise: &NoiseParams, n: f64, baseline: &Baseline) -> Result<PhotonFrame> {
    let cut = n * noise.sigma_n;
    let values = match baseline {
        Baseline::FrameMean => {
            let t = frame.mean() + cut;
            frame.values.iter().map(|&v| u32::from(v > t)).collect()
        }
        Baseline::Fixed(b) => frame.values.iter().map(|&v| u32::from(v > b + cut)).collect(),
        Baseline::PerPixel(m) => {
            if m.len() != frame.values.len() {
                return Err(Error::DimensionMismatch {
                    expected: frame.dims(),
                    found: (m.len(), 1),
                });
            }
            frame.values.iter().zip(m).map(|(&v, b)| u32::from(v > b + cut)).collect()
        }
    };
    Ok(PhotonFrame {
        width: frame.width,
        height: frame.height,
        values,
    })
}
