//! Per-pixel bias estimated from dark frames and its removal.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Error, Frame, FrameStack, FrameTag, Result};

/// `b(x, y) = < colmean(x) + rowmean(y) - m >` over dark frames, with
/// `colmean(x)` the average of column `x`, `rowmean(y)` the average of row
/// `y` and `m` the frame mean.
///
/// The formula is symmetric in its two averages, so either reading of the
/// row/column labels gives the same image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionImage {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl CorrectionImage {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: (width, height),
                found: (values.len(), 1),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("correction", "values must be finite"));
        }
        Ok(CorrectionImage {
            width,
            height,
            values,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        CorrectionImage {
            width,
            height,
            values: vec![0.0; width * height],
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// The image lowered by `level`, so that corrected dark frames average
    /// `level` instead of zero.
    ///
    /// The correction image absorbs the mean dark count; subtracting
    /// `with_dark_level(mean of the noise model)` instead puts corrected
    /// counts on the noise model's own axis.
    pub fn with_dark_level(&self, level: f64) -> CorrectionImage {
        CorrectionImage {
            width: self.width,
            height: self.height,
            values: self.values.iter().map(|v| v - level).collect(),
        }
    }
}

/// Running sums for [`CorrectionImage`]; frames can be added one at a time
/// and partial accumulators merged.
#[derive(Debug, Clone)]
pub struct CorrectionAccumulator {
    width: usize,
    height: usize,
    col_sums: Vec<f64>,
    row_sums: Vec<f64>,
    mean_sum: f64,
    frames: usize,
}

impl CorrectionAccumulator {
    pub fn new(width: usize, height: usize) -> Self {
        CorrectionAccumulator {
            width,
            height,
            col_sums: vec![0.0; width],
            row_sums: vec![0.0; height],
            mean_sum: 0.0,
            frames: 0,
        }
    }

    pub fn add(&mut self, frame: &Frame) -> Result<()> {
        if frame.dims() != (self.width, self.height) {
            return Err(Error::DimensionMismatch {
                expected: (self.width, self.height),
                found: frame.dims(),
            });
        }
        let (w, h) = (self.width as f64, self.height as f64);
        let mut total = 0.0;
        for (y, row) in frame.values.chunks_exact(self.width).enumerate() {
            let s: f64 = row.iter().sum();
            self.row_sums[y] += s / w;
            total += s;
            for (c, v) in self.col_sums.iter_mut().zip(row) {
                *c += v / h;
            }
        }
        self.mean_sum += total / (w * h);
        self.frames += 1;
        Ok(())
    }

    pub fn merge(mut self, other: CorrectionAccumulator) -> Result<Self> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(Error::DimensionMismatch {
                expected: (self.width, self.height),
                found: (other.width, other.height),
            });
        }
        self.col_sums.iter_mut().zip(&other.col_sums).for_each(|(a, b)| *a += b);
        self.row_sums.iter_mut().zip(&other.row_sums).for_each(|(a, b)| *a += b);
        self.mean_sum += other.mean_sum;
        self.frames += other.frames;
        Ok(self)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn finish(&self) -> Result<CorrectionImage> {
        if self.frames < 2 {
            return Err(Error::invalid("dark", "need at least 2 dark frames"));
        }
        let n = self.frames as f64;
        let m = self.mean_sum / n;
        let mut values = Vec::with_capacity(self.width * self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                values.push(self.col_sums[x] / n + self.row_sums[y] / n - m);
            }
        }
        CorrectionImage::new(self.width, self.height, values)
    }
}

/// Correction image of a dark stack (at least two frames).
pub fn compute_correction_image(dark: &FrameStack) -> Result<CorrectionImage> {
    let (w, h) = dark.dims();
    dark.frames()
        .par_iter()
        .try_fold(
            || CorrectionAccumulator::new(w, h),
            |mut acc, f| {
                acc.add(f)?;
                Ok(acc)
            },
        )
        .try_reduce(|| CorrectionAccumulator::new(w, h), |a, b| a.merge(b))?
        .finish()
}

/// `frame - corr`, tagged as corrected.
pub fn correct_frame(frame: &Frame, corr: &CorrectionImage) -> Result<Frame> {
    if frame.dims() != corr.dims() {
        return Err(Error::DimensionMismatch {
            expected: corr.dims(),
            found: frame.dims(),
        });
    }
    Ok(Frame {
        width: frame.width,
        height: frame.height,
        values: frame.values.iter().zip(&corr.values).map(|(v, b)| v - b).collect(),
        exposure: frame.exposure,
        tag: FrameTag::Corrected,
    })
}

/// Subtracts the correction image from every frame.
pub fn correct(frames: &FrameStack, corr: &CorrectionImage) -> Result<FrameStack> {
    let out = frames
        .frames()
        .par_iter()
        .map(|f| correct_frame(f, corr))
        .collect::<Result<Vec<_>>>()?;
    FrameStack::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stack(frames: Vec<Vec<f64>>, w: usize, h: usize) -> FrameStack {
        FrameStack::new(
            frames
                .into_iter()
                .map(|v| Frame::new(w, h, v, FrameTag::Acquired).unwrap())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn constant_frames_give_constant_image() {
        let s = stack(vec![vec![7.0; 12], vec![7.0; 12]], 4, 3);
        let b = compute_correction_image(&s).unwrap();
        assert!(b.values.iter().all(|&v| (v - 7.0).abs() < 1e-12));
        let c = correct(&s, &b).unwrap();
        assert!(c.iter().all(|f| f.values.iter().all(|v| v.abs() < 1e-12)));
        assert_eq!(c.frames()[0].tag, FrameTag::Corrected);
    }

    #[test]
    fn row_pattern_is_recovered() {
        // Row offsets rho_y on a zero background: colmean = mean(rho),
        // rowmean = rho_y, m = mean(rho), so b = rho_y exactly.
        let rho = [3.0, -1.0, 5.0];
        let v: Vec<f64> = (0..3).flat_map(|y| std::iter::repeat_n(rho[y], 4)).collect();
        let s = stack(vec![v.clone(), v.clone(), v], 4, 3);
        let b = compute_correction_image(&s).unwrap();
        for y in 0..3 {
            for x in 0..4 {
                assert!((b.values[y * 4 + x] - rho[y]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn needs_two_frames_and_matching_sizes() {
        let s = stack(vec![vec![1.0; 4]], 2, 2);
        assert!(compute_correction_image(&s).is_err());
        let b = CorrectionImage::zeros(3, 3);
        assert!(correct(&s, &b).is_err());
    }

    #[test]
    fn zero_image_is_identity() {
        let s = stack(vec![vec![1.0, 2.0, 3.0, 4.0], vec![0.5; 4]], 2, 2);
        let c = correct(&s, &CorrectionImage::zeros(2, 2)).unwrap();
        for (a, b) in s.iter().zip(c.iter()) {
            assert_eq!(a.values, b.values);
        }
    }

    #[test]
    fn image_is_linear_in_the_stack() {
        let a = stack(vec![vec![1.0, 2.0, 3.0, 4.0], vec![2.0, 0.0, 1.0, 5.0]], 2, 2);
        let b = stack(vec![vec![0.0, 1.0, 0.0, 2.0], vec![3.0, 3.0, 1.0, 0.0]], 2, 2);
        let sum = stack(
            a.iter()
                .zip(b.iter())
                .map(|(x, y)| x.values.iter().zip(&y.values).map(|(p, q)| p + q).collect())
                .collect(),
            2,
            2,
        );
        let (ca, cb, cs) = (
            compute_correction_image(&a).unwrap(),
            compute_correction_image(&b).unwrap(),
            compute_correction_image(&sum).unwrap(),
        );
        for i in 0..4 {
            assert!((ca.values[i] + cb.values[i] - cs.values[i]).abs() < 1e-12);
        }
    }
}
