//! Count intervals in which one photoelectron number is the most probable.

use serde::{Deserialize, Serialize};

use super::posterior::{check_mu, k_max, PosteriorEngine};
use crate::distributions::NoiseParams;
use crate::{Error, Result, SATURATION};

/// Poisson cutoff deciding which photon numbers get their own interval.
pub const DEFAULT_CUTOFF: f64 = 0.05;

/// One photon number and its half-open count range `[left, right)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interval {
    pub k: u32,
    pub left: i64,
    pub right: i64,
}

/// Threshold counts for one pixel mean `mu`.
///
/// `lefts[k]` is `T_k^left`; interval `k` runs to `lefts[k + 1]`, and the
/// last one is open up to the saturation count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSet {
    pub mu: f64,
    pub cutoff: f64,
    lefts: Vec<i64>,
    /// Count where `k_max + 1` overtakes `k_max`, if that happens on the
    /// model grid. Used as the far edge of the top interval when averaging.
    top_crossing: Option<i64>,
}

impl ThresholdSet {
    /// Builds a set from explicit left edges (`lefts[0]` must be 0).
    pub fn from_lefts(mu: f64, cutoff: f64, lefts: Vec<i64>) -> Result<Self> {
        if lefts.first() != Some(&0) {
            return Err(Error::invalid("lefts", "first threshold must be 0"));
        }
        if lefts.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("lefts", "thresholds must increase strictly"));
        }
        Ok(ThresholdSet {
            mu,
            cutoff,
            lefts,
            top_crossing: None,
        })
    }

    /// Highest photon number this set can assign.
    pub fn k_max(&self) -> u32 {
        (self.lefts.len() - 1) as u32
    }

    /// `T_k^left` for `k = 0..=k_max`.
    pub fn lefts(&self) -> &[i64] {
        &self.lefts
    }

    pub fn top_crossing(&self) -> Option<i64> {
        self.top_crossing
    }

    pub fn intervals(&self) -> Vec<Interval> {
        let top = SATURATION as i64 + 1;
        (0..self.lefts.len())
            .map(|k| Interval {
                k: k as u32,
                left: self.lefts[k],
                right: self.lefts.get(k + 1).copied().unwrap_or(top),
            })
            .collect()
    }

    pub fn interval(&self, k: u32) -> Option<Interval> {
        self.intervals().get(k as usize).copied()
    }

    /// Photon number of a (corrected) count: the interval holding the
    /// rounded count, 0 below zero and `k_max` above the top threshold.
    pub fn classify(&self, count: f64) -> u32 {
        if !(count >= 0.0) {
            return 0;
        }
        let x = count.round() as i64;
        (self.lefts.partition_point(|&l| l <= x) - 1) as u32
    }
}

/// Thresholds for pixel mean `mu`.
///
/// For each `k = 1..=k_max` (`k_max` the largest `k` with
/// `Poisson(k | mu) > cutoff`, at least 1), `T_k^left` is the first integer
/// count above `T_(k-1)^left` where `P(k | x) >= P(k - 1 | x)`. When even
/// `k = 1` fails the cutoff the prior is dropped for the first boundary,
/// which then sits where the one-photon likelihood overtakes the noise.
pub fn thresholds(mu: f64, noise: &NoiseParams, cutoff: f64) -> Result<ThresholdSet> {
    check_mu(mu)?;
    PosteriorEngine::new(noise)?.thresholds(mu, cutoff)
}

impl PosteriorEngine {
    /// See [`thresholds`].
    pub fn thresholds(&self, mu: f64, cutoff: f64) -> Result<ThresholdSet> {
        self.thresholds_resolving(mu, cutoff, 1)
    }

    /// Thresholds up to at least `min_k` photons, whatever the cutoff says.
    pub fn thresholds_resolving(&self, mu: f64, cutoff: f64, min_k: u32) -> Result<ThresholdSet> {
        check_mu(mu)?;
        if !(cutoff > 0.0 && cutoff < 1.0) {
            return Err(Error::invalid("cutoff", format!("{cutoff} not in (0, 1)")));
        }
        let top = k_max(mu, cutoff).max(min_k);
        let with_prior = mu > 0.0 && crate::special::poisson_pmf(1, mu) > cutoff;
        let mut lefts = vec![0i64];
        for k in 1..=top {
            let start = lefts[lefts.len() - 1] + 1;
            let ratio = if k == 1 && !with_prior { 1.0 } else { mu / k as f64 };
            if ratio == 0.0 {
                break;
            }
            match self.first_crossing(k, ratio, start) {
                Some(x) => lefts.push(x),
                None => break,
            }
        }
        let k_top = (lefts.len() - 1) as u32;
        let top_crossing = if mu > 0.0 {
            self.first_crossing(k_top + 1, mu / (k_top + 1) as f64, lefts[k_top as usize] + 1)
        } else {
            None
        };
        Ok(ThresholdSet {
            mu,
            cutoff,
            lefts,
            top_crossing,
        })
    }

    /// First `x >= start` with `ratio B_k(x) >= B_(k-1)(x)`, both non-zero.
    fn first_crossing(&self, k: u32, ratio: f64, start: i64) -> Option<i64> {
        let hi = self.likelihood(k);
        let lo = self.likelihood(k - 1);
        (start.max(hi.origin())..hi.end()).find(|&x| {
            let (a, b) = (hi.get(x), lo.get(x));
            a > 0.0 && ratio * a >= b
        })
    }

    /// Unweighted average of `k̄(x)` over the integer counts of interval `k`.
    /// The top interval ends where `k_max + 1` takes over.
    pub fn region_mean(&self, set: &ThresholdSet, k: u32) -> Result<f64> {
        let iv = set
            .interval(k)
            .ok_or_else(|| Error::invalid("k", format!("{k} exceeds k_max = {}", set.k_max())))?;
        let right = if k == set.k_max() {
            set.top_crossing.unwrap_or(iv.right)
        } else {
            iv.right
        };
        let curves = self.moments(set.mu, right)?;
        let (mut sum, mut n) = (0.0, 0usize);
        for x in iv.left..right {
            if let Some((m, _)) = curves.at(x) {
                sum += m;
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::Degenerate(format!("interval {k} holds no model mass")));
        }
        Ok(sum / n as f64)
    }
}

/// Mean photoelectron number averaged over the counts of interval `k`.
pub fn region_mean(set: &ThresholdSet, k: u32, noise: &NoiseParams) -> Result<f64> {
    PosteriorEngine::new(noise)?.region_mean(set, k)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn engine(gain: f64) -> PosteriorEngine {
        PosteriorEngine::new(&NoiseParams::reference().with_mean_gain(gain).unwrap()).unwrap()
    }

    #[test]
    fn unit_mean_gives_four_increasing_intervals() {
        let e = engine(300.0);
        let set = e.thresholds(1.0, DEFAULT_CUTOFF).unwrap();
        assert_eq!(set.k_max(), 3);
        assert_eq!(set.lefts()[0], 0);
        assert!(set.lefts().windows(2).all(|w| w[1] > w[0]));
        let iv = set.intervals();
        assert!(iv.windows(2).all(|w| w[0].right == w[1].left));
    }

    #[test]
    fn tiny_mean_has_one_boundary_at_the_noise_crossover() {
        let e = engine(300.0);
        let zero = e.thresholds(0.0, DEFAULT_CUTOFF).unwrap();
        let small = e.thresholds(1e-6, DEFAULT_CUTOFF).unwrap();
        assert_eq!(zero.k_max(), 1);
        assert_eq!(zero.lefts(), small.lefts());
        let t = zero.lefts()[1];
        let b0 = e.likelihood(0);
        let b1 = e.likelihood(1);
        assert!(b1.get(t) >= b0.get(t) && b1.get(t - 1) < b0.get(t - 1));
    }

    #[test]
    fn posterior_ordering_holds_past_each_threshold() {
        let e = engine(300.0);
        for mu in [0.3, 1.0, 4.0] {
            let set = e.thresholds(mu, DEFAULT_CUTOFF).unwrap();
            for iv in set.intervals().iter().skip(1).take(set.k_max() as usize - 1) {
                for x in iv.left..iv.right {
                    let p = e.posterior(x, mu).unwrap();
                    assert!(p[iv.k as usize] + 1e-9 >= p[iv.k as usize - 1], "mu {mu} x {x}");
                }
            }
        }
    }

    #[test]
    fn classify_clamps_both_ends() {
        let set = ThresholdSet::from_lefts(0.1, 0.05, vec![0, 200, 550, 1550]).unwrap();
        assert_eq!(set.classify(-20.0), 0);
        assert_eq!(set.classify(199.4), 0);
        assert_eq!(set.classify(199.6), 1);
        assert_eq!(set.classify(1000.0), 2);
        assert_eq!(set.classify(60000.0), 3);
        assert!(ThresholdSet::from_lefts(0.1, 0.05, vec![0, 5, 5]).is_err());
        assert!(ThresholdSet::from_lefts(0.1, 0.05, vec![1, 5]).is_err());
    }

    #[test]
    fn higher_gain_widens_inner_intervals() {
        let (a, b) = (engine(300.0), engine(600.0));
        for mu in [0.5, 1.0, 3.0] {
            let sa = a.thresholds(mu, DEFAULT_CUTOFF).unwrap();
            let sb = b.thresholds(mu, DEFAULT_CUTOFF).unwrap();
            assert_eq!(sa.k_max(), sb.k_max());
            for k in 0..sa.k_max() {
                let (ia, ib) = (sa.interval(k).unwrap(), sb.interval(k).unwrap());
                assert!(ib.right - ib.left > ia.right - ia.left, "mu {mu} k {k}");
            }
        }
    }

    #[test]
    fn zero_interval_mean_is_small() {
        let e = engine(300.0);
        let set = e.thresholds(0.1, DEFAULT_CUTOFF).unwrap();
        assert!(e.region_mean(&set, 0).unwrap() < 0.5);
        assert!(e.region_mean(&set, 9).is_err());
    }
}
