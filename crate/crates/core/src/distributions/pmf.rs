use std::ops::Range;

use crate::{Error, Result};

/// Count range a pmf should be reported on.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum Support {
    /// Everything the model puts non-negligible mass on.
    #[default]
    Full,
    /// Exactly the integer counts in `start..end`.
    Range(Range<i64>),
}

impl From<Range<i64>> for Support {
    fn from(r: Range<i64>) -> Self {
        Support::Range(r)
    }
}

/// Probability mass on consecutive integer counts starting at `origin`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePmf {
    origin: i64,
    masses: Vec<f64>,
}

impl DiscretePmf {
    pub fn new(origin: i64, masses: Vec<f64>) -> Result<Self> {
        if masses.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(Error::invalid("masses", "must be finite and non-negative"));
        }
        Ok(DiscretePmf { origin, masses })
    }

    /// Construction without validation; callers guarantee non-negative masses.
    pub(crate) fn from_raw(origin: i64, mut masses: Vec<f64>) -> Self {
        for m in &mut masses {
            if *m < 0.0 {
                *m = 0.0;
            }
        }
        DiscretePmf { origin, masses }
    }

    /// Unit mass at `at`.
    pub fn delta(at: i64) -> Self {
        DiscretePmf {
            origin: at,
            masses: vec![1.0],
        }
    }

    pub fn origin(&self) -> i64 {
        self.origin
    }

    /// One past the last covered count.
    pub fn end(&self) -> i64 {
        self.origin + self.masses.len() as i64
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    /// Mass at count `x` (zero outside the covered range).
    pub fn get(&self, x: i64) -> f64 {
        let i = x - self.origin;
        if i < 0 || i >= self.masses.len() as i64 {
            0.0
        } else {
            self.masses[i as usize]
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.masses
            .iter()
            .enumerate()
            .map(move |(i, &m)| (self.origin + i as i64, m))
    }

    pub fn total(&self) -> f64 {
        neumaier_sum(self.masses.iter().copied())
    }

    pub fn mean(&self) -> f64 {
        self.iter().map(|(x, m)| x as f64 * m).sum::<f64>() / self.total()
    }

    pub fn variance(&self) -> f64 {
        let mean = self.mean();
        self.iter()
            .map(|(x, m)| (x as f64 - mean).powi(2) * m)
            .sum::<f64>()
            / self.total()
    }

    /// Count with the largest mass (lowest count on ties).
    pub fn mode(&self) -> i64 {
        let mut best = 0;
        for (i, &m) in self.masses.iter().enumerate() {
            if m > self.masses[best] {
                best = i;
            }
        }
        self.origin + best as i64
    }

    /// The same pmf on exactly `range`, zero-filled where it had no mass and
    /// dropping mass outside.
    pub fn restrict(&self, range: Range<i64>) -> DiscretePmf {
        let len = (range.end - range.start).max(0) as usize;
        let masses = (0..len).map(|i| self.get(range.start + i as i64)).collect();
        DiscretePmf {
            origin: range.start,
            masses,
        }
    }

    pub(crate) fn with_support(self, support: &Support) -> DiscretePmf {
        match support {
            Support::Full => self,
            Support::Range(r) => self.restrict(r.clone()),
        }
    }

    /// Shifts every count by `offset`.
    pub fn shifted(&self, offset: i64) -> DiscretePmf {
        DiscretePmf {
            origin: self.origin + offset,
            masses: self.masses.clone(),
        }
    }

    /// Drops leading and trailing bins with mass below `eps`.
    pub fn trimmed(&self, eps: f64) -> DiscretePmf {
        let first = self.masses.iter().position(|&m| m >= eps);
        match first {
            None => DiscretePmf::delta(self.origin).scaled(0.0),
            Some(first) => {
                let last = self.masses.iter().rposition(|&m| m >= eps).unwrap_or(first);
                DiscretePmf {
                    origin: self.origin + first as i64,
                    masses: self.masses[first..=last].to_vec(),
                }
            }
        }
    }

    pub(crate) fn scaled(mut self, factor: f64) -> DiscretePmf {
        for m in &mut self.masses {
            *m *= factor;
        }
        self
    }

    /// Total variation distance `0.5 * sum |p - q|` over the union of supports.
    pub fn tv_distance(&self, other: &DiscretePmf) -> f64 {
        let lo = self.origin.min(other.origin);
        let hi = self.end().max(other.end());
        0.5 * (lo..hi).map(|x| (self.get(x) - other.get(x)).abs()).sum::<f64>()
    }

    /// Largest per-bin absolute difference.
    pub fn max_abs_diff(&self, other: &DiscretePmf) -> f64 {
        let lo = self.origin.min(other.origin);
        let hi = self.end().max(other.end());
        (lo..hi)
            .map(|x| (self.get(x) - other.get(x)).abs())
            .fold(0.0, f64::max)
    }
}

/// Compensated summation; the pmfs here mix masses of very different size.
pub(crate) fn neumaier_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0_f64;
    let mut c = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn restrict_zero_fills_and_drops() {
        let p = DiscretePmf::new(2, vec![0.25, 0.5, 0.25]).unwrap();
        let r = p.restrict(0..4);
        assert_eq!(r.masses(), &[0.0, 0.0, 0.25, 0.5]);
        assert_eq!(p.mode(), 3);
        assert!((p.mean() - 3.0).abs() < 1e-15);
        assert!((p.variance() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn tv_distance_of_disjoint_pmfs_is_one() {
        let a = DiscretePmf::delta(0);
        let b = DiscretePmf::delta(5);
        assert_eq!(a.tv_distance(&b), 1.0);
        assert_eq!(a.tv_distance(&a), 0.0);
    }

    #[test]
    fn rejects_negative_mass() {
        assert!(DiscretePmf::new(0, vec![0.5, -0.1]).is_err());
    }
}
