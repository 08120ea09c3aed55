//! Signal-to-noise ratio of a correlation peak over its surrounding floor.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{CorrelationMap, Method, QuantumAccumulator};
use crate::thresholding::PhotonFrame;
use crate::{Error, Region, Result};

/// Side of the default signal square, in lags.
pub const SIGNAL_SIDE: usize = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrReport {
    pub snr: f64,
    pub signal_region: Region,
    /// Lags the floor is drawn from (minus the signal region).
    pub window: Region,
    pub signal_mean: f64,
    pub floor_mean: f64,
    /// Sample standard deviation of the floor.
    pub floor_std: f64,
    pub n_frames: usize,
}

/// One line of a frames-versus-SNR table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrRow {
    pub n_frames: usize,
    pub method: String,
    pub snr: f64,
    pub signal_mean: f64,
    pub floor_mean: f64,
    pub floor_std: f64,
}

/// Central window of half the map's size in each direction.
pub fn default_window(width: usize, height: usize) -> Region {
    let w = (width / 2).max(1);
    let h = (height / 2).max(1);
    Region::new((width - w) / 2, (height - h) / 2, w, h)
}

/// `SIGNAL_SIDE`-square centred on the largest entry of the central window,
/// shifted inward if it would leave the map.
pub fn default_signal_region(map: &CorrelationMap) -> Result<Region> {
    if map.width < SIGNAL_SIDE || map.height < SIGNAL_SIDE {
        return Err(Error::invalid(
            "signal_region",
            format!("map {}x{} is smaller than the {SIGNAL_SIDE}-lag signal square", map.width, map.height),
        ));
    }
    let window = default_window(map.width, map.height);
    let mut best = (window.x0, window.y0);
    let mut best_v = f64::NEG_INFINITY;
    for y in window.y0..window.y0 + window.height {
        for x in window.x0..window.x0 + window.width {
            let v = map.get(x, y);
            if v > best_v {
                best_v = v;
                best = (x, y);
            }
        }
    }
    let half = SIGNAL_SIDE / 2;
    let x0 = best.0.saturating_sub(half).min(map.width - SIGNAL_SIDE);
    let y0 = best.1.saturating_sub(half).min(map.height - SIGNAL_SIDE);
    Ok(Region::new(x0, y0, SIGNAL_SIDE, SIGNAL_SIDE))
}

fn contains(r: &Region, x: usize, y: usize) -> bool {
    x >= r.x0 && x < r.x0 + r.width && y >= r.y0 && y < r.y0 + r.height
}

/// SNR with the floor taken from the default central window.
/// `signal = None` picks [`default_signal_region`].
pub fn snr(map: &CorrelationMap, signal: Option<Region>) -> Result<SnrReport> {
    let signal = match signal {
        Some(r) => r,
        None => default_signal_region(map)?,
    };
    snr_in_window(map, signal, default_window(map.width, map.height))
}

/// `(mean(signal) - mean(floor)) / std(floor)`, the floor being every lag of
/// `window` outside `signal`.
pub fn snr_in_window(map: &CorrelationMap, signal: Region, window: Region) -> Result<SnrReport> {
    signal.check_within(map.width, map.height)?;
    window.check_within(map.width, map.height)?;
    let signal_vals: Vec<f64> = signal.indices(map.width).map(|i| map.values[i]).collect();
    let mut floor = Vec::with_capacity(window.pixel_count());
    for y in window.y0..window.y0 + window.height {
        for x in window.x0..window.x0 + window.width {
            if !contains(&signal, x, y) {
                floor.push(map.get(x, y));
            }
        }
    }
    if floor.len() < 2 {
        return Err(Error::Empty("noise floor (fewer than two lags outside the signal region)"));
    }
    let signal_mean = signal_vals.iter().sum::<f64>() / signal_vals.len() as f64;
    let n = floor.len() as f64;
    let floor_mean = floor.iter().sum::<f64>() / n;
    let var = floor.iter().map(|v| (v - floor_mean).powi(2)).sum::<f64>() / (n - 1.0);
    let floor_std = var.sqrt();
    if !(floor_std > 0.0 && floor_std.is_finite()) {
        return Err(Error::Degenerate("noise floor has zero spread; SNR undefined".into()));
    }
    Ok(SnrReport {
        snr: (signal_mean - floor_mean) / floor_std,
        signal_region: signal,
        window,
        signal_mean,
        floor_mean,
        floor_std,
        n_frames: map.n_frames,
    })
}

/// SNR of every method after each requested number of leading frames.
///
/// Every map is scored on one signal region: `signal`, or else the default
/// region of the first method's map at the largest frame count.
pub fn snr_vs_frames(
    stacks: &[(Method, &[PhotonFrame])],
    frame_counts: &[usize],
    signal: Option<Region>,
) -> Result<Vec<SnrRow>> {
    if stacks.is_empty() {
        return Err(Error::Empty("method list"));
    }
    let mut counts = frame_counts.to_vec();
    counts.sort_unstable();
    counts.dedup();
    let &largest = counts.last().ok_or(Error::Empty("frame counts"))?;
    if counts[0] < 2 {
        return Err(Error::invalid("frame_counts", "every prefix needs at least 2 frames"));
    }
    for (method, frames) in stacks {
        if frames.len() < largest {
            return Err(Error::invalid(
                "frame_counts",
                format!("{largest} frames requested but the {method} stack has {}", frames.len()),
            ));
        }
    }
    let maps = stacks
        .par_iter()
        .map(|(method, frames)| {
            let first = &frames[0];
            let mut acc = QuantumAccumulator::new(first.width, first.height)?;
            let mut out = Vec::with_capacity(counts.len());
            for &n in &counts {
                for f in &frames[acc.frames()..n] {
                    acc.push(f)?;
                }
                out.push(acc.map(*method)?);
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let signal = match signal {
        Some(r) => r,
        None => default_signal_region(maps[0].last().expect("counts is non-empty"))?,
    };
    let mut rows = Vec::with_capacity(counts.len() * stacks.len());
    for (i, &n) in counts.iter().enumerate() {
        for (j, (method, _)) in stacks.iter().enumerate() {
            let r = snr(&maps[j][i], Some(signal))?;
            rows.push(SnrRow {
                n_frames: n,
                method: method.to_string(),
                snr: r.snr,
                signal_mean: r.signal_mean,
                floor_mean: r.floor_mean,
                floor_std: r.floor_std,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn map_from(width: usize, height: usize, values: Vec<f64>) -> CorrelationMap {
        CorrelationMap::new(width, height, values, 10, Method::Given).unwrap()
    }

    fn noisy_map(seed: u64) -> CorrelationMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, h) = (127, 127);
        let mut v: Vec<f64> = (0..w * h).map(|_| StandardNormal.sample(&mut rng)).collect();
        for y in 60..67 {
            for x in 60..67 {
                v[y * w + x] += 10.0;
            }
        }
        map_from(w, h, v)
    }

    #[test]
    fn default_window_is_central_half() {
        assert_eq!(default_window(127, 63), Region::new(32, 16, 63, 31));
    }

    #[test]
    fn default_region_centres_on_the_peak() {
        let mut m = noisy_map(4);
        m.values[70 * 127 + 50] = 100.0;
        // Outside the central window, so it is ignored.
        m.values[5 * 127 + 5] = 1000.0;
        assert_eq!(default_signal_region(&m).unwrap(), Region::new(47, 67, 7, 7));
    }

    #[test]
    fn constant_map_is_degenerate() {
        let m = map_from(31, 31, vec![2.0; 961]);
        assert!(matches!(snr(&m, None), Err(Error::Degenerate(_))));
    }

    #[test]
    fn unit_noise_with_offset_peak_scores_about_ten() {
        let m = noisy_map(1);
        let r = snr(&m, Some(Region::new(60, 60, 7, 7))).unwrap();
        // Signal mean of 49 unit-variance lags: SE = 1/7.
        assert!((r.snr - 10.0).abs() < 0.6, "{r:?}");
    }

    #[test]
    fn snr_ignores_offset_and_scale() {
        let m = noisy_map(2);
        let base = snr(&m, None).unwrap().snr;
        let shifted = map_from(m.width, m.height, m.values.iter().map(|v| 3.5 * v - 40.0).collect());
        assert!((snr(&shifted, None).unwrap().snr - base).abs() < 1e-9);
    }

    #[test]
    fn region_must_fit_and_leave_a_floor() {
        let m = noisy_map(3);
        assert!(snr(&m, Some(Region::new(125, 0, 7, 7))).is_err());
        let window = Region::new(0, 0, 7, 7);
        assert!(matches!(
            snr_in_window(&m, Region::new(0, 0, 7, 7), window),
            Err(Error::Empty(_))
        ));
    }
}
