//! Integer-count histograms of corrected frames.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::DiscretePmf;
use crate::{Error, Frame, FrameStack, Region, Result};

/// Tallies of nearest-integer counts starting at `origin`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CountHistogram {
    origin: i64,
    counts: Vec<u64>,
    total: u64,
}

impl CountHistogram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_counts(origin: i64, counts: Vec<u64>) -> Self {
        let total = counts.iter().sum();
        CountHistogram {
            origin,
            counts,
            total,
        }
    }

    /// Adds one value, rounded to the nearest integer.
    pub fn add(&mut self, value: f64) {
        self.add_count(value.round() as i64, 1);
    }

    pub fn add_count(&mut self, x: i64, n: u64) {
        if n == 0 {
            return;
        }
        if self.counts.is_empty() {
            self.origin = x;
            self.counts.push(0);
        } else if x < self.origin {
            let grow = (self.origin - x) as usize;
            let mut v = vec![0; grow];
            v.append(&mut self.counts);
            self.counts = v;
            self.origin = x;
        } else if x >= self.end() {
            self.counts.resize((x - self.origin) as usize + 1, 0);
        }
        self.counts[(x - self.origin) as usize] += n;
        self.total += n;
    }

    pub fn add_frame(&mut self, frame: &Frame, region: &Region) {
        for i in region.indices(frame.width) {
            self.add(frame.values[i]);
        }
    }

    pub fn merge(mut self, other: &CountHistogram) -> Self {
        for (i, &c) in other.counts.iter().enumerate() {
            self.add_count(other.origin + i as i64, c);
        }
        self
    }

    pub fn origin(&self) -> i64 {
        self.origin
    }

    pub fn end(&self) -> i64 {
        self.origin + self.counts.len() as i64
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn get(&self, x: i64) -> u64 {
        let i = x - self.origin;
        if i < 0 || i >= self.counts.len() as i64 {
            0
        } else {
            self.counts[i as usize]
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, u64)> + '_ {
        self.counts
            .iter()
            .enumerate()
            .map(move |(i, &c)| (self.origin + i as i64, c))
    }

    /// Empirical probabilities.
    pub fn to_pmf(&self) -> DiscretePmf {
        let n = self.total.max(1) as f64;
        DiscretePmf::new(self.origin, self.counts.iter().map(|&c| c as f64 / n).collect())
            .expect("counts are non-negative")
    }

    pub fn mean(&self) -> f64 {
        self.iter().map(|(x, c)| x as f64 * c as f64).sum::<f64>() / self.total as f64
    }

    /// Most frequent count (lowest on ties).
    pub fn mode(&self) -> i64 {
        let mut best = 0;
        for (i, &c) in self.counts.iter().enumerate() {
            if c > self.counts[best] {
                best = i;
            }
        }
        self.origin + best as i64
    }
}

/// Histogram of the rounded counts of `region` over every frame.
pub fn histogram(frames: &FrameStack, region: &Region) -> Result<CountHistogram> {
    if region.pixel_count() == 0 {
        return Err(Error::Empty("histogram region"));
    }
    region.check_within(frames.width(), frames.height())?;
    Ok(frames
        .frames()
        .par_iter()
        .fold(CountHistogram::new, |mut h, f| {
            h.add_frame(f, region);
            h
        })
        .reduce(CountHistogram::new, |a, b| a.merge(&b)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::FrameTag;

    #[test]
    fn rounding_rule() {
        let f = Frame::new(1, 1, vec![7.2], FrameTag::Corrected).unwrap();
        let s = FrameStack::new(vec![f]).unwrap();
        let h = histogram(&s, &Region::full(1, 1)).unwrap();
        assert_eq!(h.get(7), 1);
        assert_eq!(h.total(), 1);
    }

    #[test]
    fn zero_region_counts() {
        let f = Frame::zeros(2, 2, FrameTag::Corrected);
        let s = FrameStack::new(vec![f.clone(), f]).unwrap();
        let h = histogram(&s, &Region::full(2, 2)).unwrap();
        assert_eq!(h.get(0), 8);
        assert_eq!(h.counts(), &[8]);
        assert!(histogram(&s, &Region::new(0, 0, 0, 1)).is_err());
        assert!(histogram(&s, &Region::new(1, 1, 2, 2)).is_err());
    }

    #[test]
    fn grows_in_both_directions_and_merges() {
        let mut a = CountHistogram::new();
        for v in [3.0, -2.4, 10.6, 3.0] {
            a.add(v);
        }
        assert_eq!(a.origin(), -2);
        assert_eq!(a.get(3), 2);
        assert_eq!(a.get(11), 1);
        assert_eq!(a.total(), 4);
        let mut b = CountHistogram::new();
        b.add(-5.0);
        let m = a.clone().merge(&b);
        assert_eq!(m.total(), 5);
        assert_eq!(m.origin(), -5);
        assert_eq!(m.counts().iter().sum::<u64>(), m.total());
        assert_eq!(m.mode(), 3);
    }
}
