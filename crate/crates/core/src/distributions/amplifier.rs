//! Output law of the gain register for a fixed number of input electrons.

use super::pmf::neumaier_sum;
use super::{DiscretePmf, GainModel, Support};
use crate::special::ln_gamma;
use crate::{Error, Result};

/// Leftover masses below this are rounding noise of `1 - sum`.
pub(crate) const LEFTOVER_FLOOR: f64 = 4e-16;

/// Gamma density `x^(k-1) e^(-x/G) / (G^k (k-1)!)` for `k >= 1`, `x > 0`.
pub fn gamma_density(k: u32, x: f64, gain: f64) -> f64 {
    if k == 0 || x <= 0.0 {
        return 0.0;
    }
    let k = k as f64;
    ((k - 1.0) * x.ln() - x / gain - k * gain.ln() - ln_gamma(k)).exp()
}

/// Grid length beyond which a Gamma(k, G) law has negligible mass.
pub(crate) fn gamma_extent(k: u32, gain: f64) -> usize {
    let k = k as f64;
    (gain * (k + 10.0 * k.sqrt() + 45.0)).ceil() as usize + 2
}

/// Discretized amplifier law on the electron grid `[0, len)`.
pub(crate) fn amplifier_electrons(k: u32, gain: f64, len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len.max(1)];
    if k == 0 {
        out[0] = 1.0;
        return out;
    }
    let kf = k as f64;
    let norm = kf * gain.ln() + ln_gamma(kf);
    for (x, slot) in out.iter_mut().enumerate().skip(1) {
        let x = x as f64;
        *slot = ((kf - 1.0) * x.ln() - x / gain - norm).exp();
    }
    out[0] = amplifier_leftover(k, gain);
    out
}

fn raw_leftover(k: u32, gain: f64) -> f64 {
    let kf = k as f64;
    let norm = kf * gain.ln() + ln_gamma(kf);
    let continuous = neumaier_sum((1..gamma_extent(k, gain)).map(|x| {
        let x = x as f64;
        ((kf - 1.0) * x.ln() - x / gain - norm).exp()
    }));
    1.0 - continuous
}

/// Zero-bin mass of the discretized Gamma(k, G) law: `1 - sum_{x>=1}`,
/// clamped at zero. For `k >= 4` the point sum can overshoot one by
/// `O(G^-k)`; that overshoot is kept rather than renormalized away.
pub(crate) fn amplifier_leftover(k: u32, gain: f64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    let v = raw_leftover(k, gain);
    if v < LEFTOVER_FLOOR {
        0.0
    } else {
        v
    }
}

/// `sum_k w_k * amplifier_leftover(k)` for `k >= 1`, stopping once the
/// leftovers fall to rounding level.
pub(crate) fn mixed_leftover(weights: impl Fn(u32) -> f64, kmax: u32, gain: f64) -> f64 {
    let mut total = 0.0;
    for k in 1..=kmax {
        let raw = raw_leftover(k, gain);
        if raw >= LEFTOVER_FLOOR {
            total += weights(k) * raw;
        } else if k >= 3 && raw.abs() < LEFTOVER_FLOOR {
            break;
        }
    }
    total
}

/// Probability of the register output `x` given `k` input electrons.
///
/// `k = 0` is a unit mass at zero. For `k >= 1` the Gamma density is taken
/// at integer counts and the zero bin holds the remainder.
pub fn amplifier_pmf(k: u32, gain: &GainModel, support: impl Into<Support>) -> Result<DiscretePmf> {
    gain.validate()?;
    let support = support.into();
    if let Support::Range(r) = &support {
        if k >= 1 && r.start < 0 {
            return Err(Error::invalid(
                "support",
                "amplifier output is non-negative; support must start at 0 or above",
            ));
        }
    }
    let g = gain.mean_gain();
    let len = match &support {
        Support::Full => gamma_extent(k, g),
        Support::Range(r) => gamma_extent(k, g).max(r.end.max(1) as usize),
    };
    let pmf = DiscretePmf::from_raw(0, amplifier_electrons(k, g, if k == 0 { 1 } else { len }));
    Ok(pmf.with_support(&support))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g300() -> GainModel {
        GainModel::from_mean_gain(300.0, 552).unwrap()
    }

    #[test]
    fn zero_electrons_is_a_point_mass_at_zero() {
        let p = amplifier_pmf(0, &g300(), Support::Full).unwrap();
        assert_eq!(p.get(0), 1.0);
        assert_eq!(p.total(), 1.0);
    }

    #[test]
    fn single_electron_density_starts_at_one_over_gain() {
        let p = amplifier_pmf(1, &g300(), Support::Full).unwrap();
        assert!((p.get(1) - (-1.0f64 / 300.0).exp() / 300.0).abs() < 1e-15);
        assert!((p.get(1) - 1.0 / 300.0).abs() < 2e-5);
        // Exponential decay: ratio of neighbouring bins is exp(-1/G).
        let r = p.get(101) / p.get(100);
        assert!((r - (-1.0f64 / 300.0).exp()).abs() < 1e-12);
        // The zero bin holds about half a bin of density.
        assert!((p.get(0) - 0.5 / 300.0).abs() < 1e-5);
    }

    #[test]
    fn full_support_sums_to_one_with_mean_kg() {
        for k in [1, 2, 3, 7, 20] {
            let p = amplifier_pmf(k, &g300(), Support::Full).unwrap();
            assert!((p.total() - 1.0).abs() < 1e-9, "k={k} total {}", p.total());
            assert!(p.masses().iter().all(|&m| m >= 0.0));
            let mean = p.mean();
            assert!((mean - 300.0 * k as f64).abs() / (300.0 * k as f64) < 1e-3);
        }
    }

    #[test]
    fn negative_support_rejected_for_photoelectrons() {
        assert!(amplifier_pmf(1, &g300(), -5..10).is_err());
        assert!(amplifier_pmf(0, &g300(), -5..10).is_ok());
    }
}
