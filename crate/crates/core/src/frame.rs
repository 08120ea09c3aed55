//! Frames, frame stacks, pixel regions and normalized intensity maps.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameTag {
    Acquired,
    Corrected,
    Simulated,
    PhotonCounted,
}

impl FrameTag {
    pub fn as_str(self) -> &'static str {
        match self {
            FrameTag::Acquired => "acquired",
            FrameTag::Corrected => "corrected",
            FrameTag::Simulated => "simulated",
            FrameTag::PhotonCounted => "photon_counted",
        }
    }
}

/// A single 2D count image, row-major (`values[y * width + x]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    /// Exposure time in seconds.
    pub exposure: f64,
    pub tag: FrameTag,
}

impl Frame {
    pub fn new(width: usize, height: usize, values: Vec<f64>, tag: FrameTag) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Empty("frame with zero width or height"));
        }
        if values.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: (width, height),
                found: (values.len(), 1),
            });
        }
        Ok(Frame {
            width,
            height,
            values,
            exposure: 0.0,
            tag,
        })
    }

    pub fn zeros(width: usize, height: usize, tag: FrameTag) -> Self {
        Frame {
            width,
            height,
            values: vec![0.0; width * height],
            exposure: 0.0,
            tag,
        }
    }

    pub fn with_exposure(mut self, exposure: f64) -> Self {
        self.exposure = exposure;
        self
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.values[y * self.width + x] = v;
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn full_region(&self) -> Region {
        Region::full(self.width, self.height)
    }
}

/// Frames sharing one geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameStack {
    width: usize,
    height: usize,
    frames: Vec<Frame>,
}

impl FrameStack {
    pub fn new(frames: Vec<Frame>) -> Result<Self> {
        let first = frames.first().ok_or(Error::Empty("frame stack"))?;
        let dims = first.dims();
        for f in &frames {
            if f.dims() != dims {
                return Err(Error::DimensionMismatch {
                    expected: dims,
                    found: f.dims(),
                });
            }
        }
        Ok(FrameStack {
            width: dims.0,
            height: dims.1,
            frames,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Frame> {
        self.frames.iter()
    }

    pub fn into_frames(self) -> Vec<Frame> {
        self.frames
    }

    /// First `n` frames as a new stack.
    pub fn prefix(&self, n: usize) -> Result<FrameStack> {
        FrameStack::new(self.frames[..n.min(self.frames.len())].to_vec())
    }
}

impl<'a> IntoIterator for &'a FrameStack {
    type Item = &'a Frame;
    type IntoIter = std::slice::Iter<'a, Frame>;

    fn into_iter(self) -> Self::IntoIter {
        self.frames.iter()
    }
}

/// Axis-aligned pixel rectangle `[x0, x0+width) x [y0, y0+height)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

impl Region {
    pub fn new(x0: usize, y0: usize, width: usize, height: usize) -> Self {
        Region {
            x0,
            y0,
            width,
            height,
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Region::new(0, 0, width, height)
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn check_within(&self, width: usize, height: usize) -> Result<()> {
        if self.pixel_count() == 0 {
            return Err(Error::Empty("region"));
        }
        if self.x0 + self.width > width || self.y0 + self.height > height {
            return Err(Error::invalid(
                "region",
                format!("{self:?} exceeds frame bounds {width}x{height}"),
            ));
        }
        Ok(())
    }

    /// Row-major indices of the region's pixels inside a frame of `frame_width`.
    pub fn indices(&self, frame_width: usize) -> impl Iterator<Item = usize> + '_ {
        (self.y0..self.y0 + self.height)
            .flat_map(move |y| (self.x0..self.x0 + self.width).map(move |x| y * frame_width + x))
    }
}

/// Normalized per-pixel illumination fractions over a region (row-major).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl IntensityMap {
    /// Tolerance on the unit-sum invariant.
    pub const NORMALIZATION_TOLERANCE: f64 = 1e-6;

    /// Wraps already-normalized fractions; rejects negative entries and sums
    /// further than 1e-6 from one.
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height || values.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: (width, height),
                found: (values.len(), 1),
            });
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid("intensity", "entries must be finite and >= 0"));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > Self::NORMALIZATION_TOLERANCE {
            return Err(Error::NotNormalized { sum });
        }
        Ok(IntensityMap {
            width,
            height,
            values,
        })
    }

    /// Normalizes arbitrary non-negative weights to unit sum.
    pub fn from_weights(width: usize, height: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != width * height || weights.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: (width, height),
                found: (weights.len(), 1),
            });
        }
        if weights.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid("intensity", "weights must be finite and >= 0"));
        }
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 {
            return Err(Error::Degenerate("intensity weights sum to zero".into()));
        }
        let values = weights.into_iter().map(|w| w / sum).collect();
        Ok(IntensityMap {
            width,
            height,
            values,
        })
    }

    pub fn uniform(width: usize, height: usize) -> Self {
        let n = width * height;
        IntensityMap {
            width,
            height,
            values: vec![1.0 / n as f64; n],
        }
    }

    /// Circular Gaussian spot with standard deviation `sigma` (pixels)
    /// centred at `(cx, cy)` in pixel coordinates (pixel `i` spans `[i, i+1)`).
    pub fn gaussian_spot(width: usize, height: usize, cx: f64, cy: f64, sigma: f64) -> Self {
        let mut w = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let dx = x as f64 + 0.5 - cx;
                let dy = y as f64 + 0.5 - cy;
                w.push((-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp());
            }
        }
        IntensityMap::from_weights(width, height, w).expect("gaussian weights are positive")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Per-pixel mean photon numbers `mu_f * I(x, y)`.
    pub fn pixel_means(&self, mu_f: f64) -> Vec<f64> {
        self.values.iter().map(|v| v * mu_f).collect()
    }

    /// Pearson correlation with another map of the same size.
    pub fn correlation(&self, other: &[f64]) -> f64 {
        pearson(&self.values, other)
    }
}

/// Pearson correlation coefficient of two equally long slices.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    sab / (saa * sbb).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stack_rejects_mixed_dimensions() {
        let a = Frame::zeros(2, 2, FrameTag::Acquired);
        let b = Frame::zeros(3, 2, FrameTag::Acquired);
        assert!(matches!(
            FrameStack::new(vec![a, b]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(FrameStack::new(vec![]), Err(Error::Empty(_))));
    }

    #[test]
    fn intensity_map_normalization_is_enforced() {
        assert!(IntensityMap::new(2, 1, vec![0.5, 0.5]).is_ok());
        assert!(matches!(
            IntensityMap::new(2, 1, vec![0.5, 0.6]),
            Err(Error::NotNormalized { .. })
        ));
        let spot = IntensityMap::gaussian_spot(16, 16, 8.0, 8.0, 3.0);
        assert!((spot.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn region_indices_walk_row_major() {
        let r = Region::new(1, 1, 2, 2);
        let idx: Vec<_> = r.indices(4).collect();
        assert_eq!(idx, vec![5, 6, 9, 10]);
        assert!(r.check_within(3, 3).is_ok());
        assert!(r.check_within(2, 3).is_err());
    }
}
