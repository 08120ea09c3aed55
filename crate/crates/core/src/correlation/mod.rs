//! Momentum-correlation maps from photon-counted frames.
//!
//! Each frame is convolved with itself (same-frame coincidences) and with the
//! following frame (accidental coincidences between uncorrelated photons);
//! the mean difference leaves the pair correlation in sum-coordinate lag
//! space. Lag `(sx, sy)` collects pixel pairs whose indices add up to it, so
//! for a `w x h` frame the map is `(2w - 1) x (2h - 1)`.

mod fft;
mod snr;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::thresholding::PhotonFrame;
use crate::{Error, Result};

pub use fft::{Convolver, ROUNDING};
pub use snr::{default_signal_region, default_window, snr, snr_in_window, snr_vs_frames, SnrReport, SnrRow};

/// Values on the lag grid of a full linear convolution, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LagMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl LagMap {
    pub fn get(&self, sx: usize, sy: usize) -> f64 {
        self.values[sy * self.width + sx]
    }
}

/// How the correlated frames were produced from raw counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Method {
    /// Binary threshold at baseline plus `n` read-noise deviations.
    Sigma { n: f64 },
    /// Photon-number thresholds resolving up to `k` photons.
    Photon { k: u32 },
    /// Frames used as supplied.
    Given,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Sigma { n } => write!(f, "{n}sigmaT"),
            Method::Photon { k } => write!(f, "{k}pT"),
            Method::Given => f.write_str("given"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    /// Accepts `3sigmaT`, `3σT`, `2pT` and `given`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid("method", format!("`{s}` is not kpT, <n>sigmaT or given"));
        let s = s.trim();
        if s == "given" {
            return Ok(Method::Given);
        }
        if let Some(k) = s.strip_suffix("pT") {
            let k: u32 = k.parse().map_err(|_| bad())?;
            if k == 0 {
                return Err(bad());
            }
            return Ok(Method::Photon { k });
        }
        let n = s
            .strip_suffix("sigmaT")
            .or_else(|| s.strip_suffix("σT"))
            .ok_or_else(bad)?;
        let n: f64 = n.parse().map_err(|_| bad())?;
        if !(n.is_finite() && n >= 0.0) {
            return Err(bad());
        }
        Ok(Method::Sigma { n })
    }
}

/// Mean auto-minus-cross convolution of a photon-counted stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    /// Frames that went into the map (pairs used: `n_frames - 1`).
    pub n_frames: usize,
    pub method: Method,
}

impl CorrelationMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>, n_frames: usize, method: Method) -> Result<Self> {
        if values.len() != width * height || values.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: (width, height),
                found: (values.len(), 1),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("values", "correlation map entries must be finite"));
        }
        Ok(CorrelationMap {
            width,
            height,
            values,
            n_frames,
            method,
        })
    }

    pub fn get(&self, sx: usize, sy: usize) -> f64 {
        self.values[sy * self.width + sx]
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

fn check_pair(a: &PhotonFrame, b: &PhotonFrame) -> Result<()> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::DimensionMismatch {
            expected: (a.width, a.height),
            found: (b.width, b.height),
        });
    }
    if a.values.len() != a.width * a.height || a.values.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: (a.width, a.height),
            found: (a.values.len(), 1),
        });
    }
    Ok(())
}

/// `C(s) = sum_r f(r) f(s - r)`.
pub fn auto_convolution(frame: &PhotonFrame) -> Result<LagMap> {
    cross_convolution(frame, frame)
}

/// `C(s) = sum_r a(r) b(s - r)`.
pub fn cross_convolution(a: &PhotonFrame, b: &PhotonFrame) -> Result<LagMap> {
    check_pair(a, b)?;
    let conv = Convolver::new(a.width, a.height);
    let (width, height) = conv.lag_dims();
    let values = conv.convolve(&a.values, &b.values);
    Ok(LagMap { width, height, values })
}

/// Running sum of `auto(f_j) - cross(f_j, f_{j+1})` over consecutive frames.
///
/// Each pair's difference is formed in the frequency domain and rounded on
/// its own, so the sum over integer frames stays exact.
#[derive(Debug)]
pub struct QuantumAccumulator {
    conv: Convolver,
    sum: Vec<f64>,
    prev: Option<Vec<Complex64>>,
    frames: usize,
}

impl QuantumAccumulator {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Empty("frame with zero width or height"));
        }
        let conv = Convolver::new(width, height);
        let (lw, lh) = conv.lag_dims();
        Ok(QuantumAccumulator {
            conv,
            sum: vec![0.0; lw * lh],
            prev: None,
            frames: 0,
        })
    }

    pub fn push(&mut self, frame: &PhotonFrame) -> Result<()> {
        let (w, h) = self.conv.dims();
        if (frame.width, frame.height) != (w, h) || frame.values.len() != w * h {
            return Err(Error::DimensionMismatch {
                expected: (w, h),
                found: (frame.width, frame.height),
            });
        }
        let spec = self.conv.spectrum(&frame.values);
        if let Some(prev) = self.prev.take() {
            let diff = prev.iter().zip(&spec).map(|(p, c)| p * (p - c)).collect();
            for (s, d) in self.sum.iter_mut().zip(self.conv.lags(diff)) {
                *s += d;
            }
        }
        self.prev = Some(spec);
        self.frames += 1;
        Ok(())
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    /// Frame pairs accumulated so far.
    pub fn pairs(&self) -> usize {
        self.frames.saturating_sub(1)
    }

    /// Current mean map.
    pub fn map(&self, method: Method) -> Result<CorrelationMap> {
        if self.frames < 2 {
            return Err(Error::invalid("frames", "a correlation map needs at least 2 frames"));
        }
        let (lw, lh) = self.conv.lag_dims();
        let n = self.pairs() as f64;
        let values = self.sum.iter().map(|s| s / n).collect();
        CorrelationMap::new(lw, lh, values, self.frames, method)
    }
}

/// Frames handed to each worker of [`quantum_correlation`].
const CHUNK: usize = 64;

/// Mean over `j` of `auto(f_j)` minus mean of `cross(f_j, f_{j+1})`, with
/// `j` running over the first `M - 1` frames for both terms.
pub fn quantum_correlation(frames: &[PhotonFrame], method: Method) -> Result<CorrelationMap> {
    if frames.len() < 2 {
        return Err(Error::invalid("frames", "a correlation map needs at least 2 frames"));
    }
    let (w, h) = (frames[0].width, frames[0].height);
    let starts: Vec<usize> = (0..frames.len() - 1).step_by(CHUNK).collect();
    let partial = starts
        .par_iter()
        .map(|&a| {
            let b = (a + CHUNK).min(frames.len() - 1);
            let mut acc = QuantumAccumulator::new(w, h)?;
            for f in &frames[a..=b] {
                acc.push(f)?;
            }
            Ok(acc.sum)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut sum = partial[0].clone();
    for p in &partial[1..] {
        for (s, v) in sum.iter_mut().zip(p) {
            *s += v;
        }
    }
    let n = (frames.len() - 1) as f64;
    let lw = 2 * w - 1;
    let lh = 2 * h - 1;
    let values = sum.into_iter().map(|s| s / n).collect();
    CorrelationMap::new(lw, lh, values, frames.len(), method)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn frame(width: usize, height: usize, values: Vec<u32>) -> PhotonFrame {
        PhotonFrame { width, height, values }
    }

    fn random_frame(width: usize, height: usize, max: u32, rng: &mut ChaCha8Rng) -> PhotonFrame {
        let values = (0..width * height).map(|_| rng.random_range(0..=max)).collect();
        frame(width, height, values)
    }

    fn brute(a: &PhotonFrame, b: &PhotonFrame) -> Vec<f64> {
        let (w, h) = (a.width, a.height);
        let lw = 2 * w - 1;
        let mut out = vec![0.0; lw * (2 * h - 1)];
        for y1 in 0..h {
            for x1 in 0..w {
                for y2 in 0..h {
                    for x2 in 0..w {
                        out[(y1 + y2) * lw + x1 + x2] += (a.get(x1, y1) * b.get(x2, y2)) as f64;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn single_pixel_lands_at_twice_its_position() {
        let mut v = vec![0; 20];
        v[2 * 5 + 3] = 1;
        let c = auto_convolution(&frame(5, 4, v)).unwrap();
        assert_eq!((c.width, c.height), (9, 7));
        assert_eq!(c.get(6, 4), 1.0);
        assert_eq!(c.values.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn two_pixels_expand_binomially() {
        let mut v = vec![0; 16];
        v[0] = 1; // (0, 0)
        v[3 * 4 + 2] = 1; // (2, 3)
        let c = auto_convolution(&frame(4, 4, v)).unwrap();
        assert_eq!(c.get(0, 0), 1.0);
        assert_eq!(c.get(4, 6), 1.0);
        assert_eq!(c.get(2, 3), 2.0);
        assert_eq!(c.values.iter().sum::<f64>(), 4.0);
    }

    #[test]
    fn fft_matches_direct_sum_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (w, h) in [(16, 16), (7, 11), (32, 32)] {
            let a = random_frame(w, h, 5, &mut rng);
            let b = random_frame(w, h, 5, &mut rng);
            assert_eq!(auto_convolution(&a).unwrap().values, brute(&a, &a));
            assert_eq!(cross_convolution(&a, &b).unwrap().values, brute(&a, &b));
        }
    }

    #[test]
    fn cross_with_zero_or_self() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_frame(6, 5, 3, &mut rng);
        let z = frame(6, 5, vec![0; 30]);
        assert!(cross_convolution(&a, &z).unwrap().values.iter().all(|&v| v == 0.0));
        assert_eq!(
            cross_convolution(&a, &a.clone()).unwrap(),
            auto_convolution(&a).unwrap()
        );
        assert!(matches!(
            cross_convolution(&a, &frame(5, 6, vec![0; 30])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn identical_frames_give_a_zero_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_frame(8, 8, 4, &mut rng);
        let m = quantum_correlation(&vec![a; 5], Method::Given).unwrap();
        assert_eq!((m.width, m.height, m.n_frames), (15, 15, 5));
        assert!(m.values.iter().all(|&v| v == 0.0));
        assert!(quantum_correlation(&[frame(2, 2, vec![1; 4])], Method::Given).is_err());
    }

    #[test]
    fn chunked_map_matches_serial_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let frames: Vec<_> = (0..150).map(|_| random_frame(6, 4, 2, &mut rng)).collect();
        let m = quantum_correlation(&frames, Method::Photon { k: 2 }).unwrap();
        let mut want = vec![0.0; m.values.len()];
        for j in 0..frames.len() - 1 {
            let a = brute(&frames[j], &frames[j]);
            let c = brute(&frames[j], &frames[j + 1]);
            for i in 0..want.len() {
                want[i] += a[i] - c[i];
            }
        }
        for (got, w) in m.values.iter().zip(&want) {
            assert!((got - w / 149.0).abs() < 1e-12);
        }
        let mut acc = QuantumAccumulator::new(6, 4).unwrap();
        for f in &frames {
            acc.push(f).unwrap();
        }
        assert_eq!(acc.map(Method::Photon { k: 2 }).unwrap(), m);
    }

    #[test]
    fn method_labels_round_trip() {
        for m in [Method::Sigma { n: 3.0 }, Method::Photon { k: 4 }, Method::Given] {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
        assert_eq!("3σT".parse::<Method>().unwrap(), Method::Sigma { n: 3.0 });
        assert!("0pT".parse::<Method>().is_err());
        assert!("threshold".parse::<Method>().is_err());
    }
}
