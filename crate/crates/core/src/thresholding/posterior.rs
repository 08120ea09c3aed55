//! Posterior over the photoelectron number of one pixel given its count.

use std::sync::OnceLock;

use crate::distributions::{
    amplifier_electrons, gamma_extent, mixed_leftover, poisson_gamma_density, DiscretePmf, NoiseModel, NoiseParams,
};
use crate::special::{ln_bessel_i0, ln_bessel_i1, ln_poisson, poisson_pmf, poisson_truncation};
use crate::{Error, Result};

/// Largest photoelectron number the engine will tabulate.
const K_CAP: u32 = 4096;
/// Posterior terms below this fraction of the largest are dropped.
const TAIL_RATIO: f64 = 1e-18;
/// Prior tail left out of the normalization.
const PRIOR_TAIL: f64 = 1e-12;

pub(crate) fn check_mu(mu: f64) -> Result<()> {
    if !(mu >= 0.0 && mu.is_finite()) {
        return Err(Error::invalid("mu", format!("{mu} must be finite and >= 0")));
    }
    Ok(())
}

/// Count likelihoods `B_k = P_N * A_k` for one noise model, built on first
/// use and shared by every `mu`.
#[derive(Debug)]
pub struct PosteriorEngine {
    model: NoiseModel,
    gain: f64,
    likelihood: Vec<OnceLock<DiscretePmf>>,
}

impl PosteriorEngine {
    /// Engine on the dark-count law of `noise`, in uncorrected model counts.
    pub fn new(noise: &NoiseParams) -> Result<Self> {
        Ok(Self::with_model(NoiseModel::new(noise)?))
    }

    /// Engine on any noise model, e.g. [`NoiseModel::centered`].
    pub fn with_model(model: NoiseModel) -> Self {
        let gain = model.params().gain.mean_gain();
        PosteriorEngine {
            model,
            gain,
            likelihood: (0..=K_CAP).map(|_| OnceLock::new()).collect(),
        }
    }

    pub fn model(&self) -> &NoiseModel {
        &self.model
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    /// `P(x | k) = [P_N * P_{X_k}](x)`.
    pub fn likelihood(&self, k: u32) -> &DiscretePmf {
        let k = k.min(K_CAP);
        self.likelihood[k as usize].get_or_init(|| {
            let len = gamma_extent(k, self.gain);
            self.model.apply(&amplifier_electrons(k, self.gain, len))
        })
    }

    /// Unnormalized `ln [Poisson(k | mu) B_k(x)]`.
    fn ln_term(&self, k: u32, x: i64, mu: f64) -> f64 {
        let b = self.likelihood(k).get(x);
        if b > 0.0 {
            ln_poisson(k, mu) + b.ln()
        } else {
            f64::NEG_INFINITY
        }
    }

    /// Posterior weights `P(k | x, mu)` for `k = 0..=K`, with `K` large enough
    /// that the omitted terms are negligible at this `x`.
    pub fn posterior(&self, x: i64, mu: f64) -> Result<Vec<f64>> {
        check_mu(mu)?;
        if mu == 0.0 {
            return Ok(vec![1.0]);
        }
        let prior_end = poisson_truncation(mu, PRIOR_TAIL);
        // Terms are unimodal in k; stop once past the prior's bulk and the
        // terms have fallen below the cutoff.
        let k_beyond = (x.max(0) as f64 / self.gain + 50.0) as u32;
        let mut logs: Vec<f64> = Vec::new();
        let mut best = f64::NEG_INFINITY;
        for k in 0..=K_CAP {
            let l = self.ln_term(k, x, mu);
            let falling = logs.last().is_some_and(|&prev| l <= prev);
            best = best.max(l);
            logs.push(l);
            if k > prior_end && falling && (l < best + TAIL_RATIO.ln() || k > k_beyond) {
                break;
            }
        }
        if !best.is_finite() {
            return Err(Error::Degenerate(format!("count {x} has zero likelihood for every k")));
        }
        let w: Vec<f64> = logs.iter().map(|l| (l - best).exp()).collect();
        let total: f64 = w.iter().sum();
        Ok(w.into_iter().map(|v| v / total).collect())
    }

    /// `(k̄, Δk)` at `x` by direct summation over the posterior.
    pub fn posterior_moments(&self, x: i64, mu: f64) -> Result<(f64, f64)> {
        let p = self.posterior(x, mu)?;
        let m1: f64 = p.iter().enumerate().map(|(k, w)| k as f64 * w).sum();
        let m2: f64 = p.iter().enumerate().map(|(k, w)| (k * k) as f64 * w).sum();
        Ok((m1, (m2 - m1 * m1).max(0.0).sqrt()))
    }

    /// Posterior rows for every count in `counts`, reported for
    /// `k = 0..=k_max` with `k_max` from `cutoff`.
    pub fn table(&self, mu: f64, cutoff: f64, counts: std::ops::Range<i64>) -> Result<PosteriorTable> {
        let k_max = k_max(mu, cutoff);
        let rows = counts
            .clone()
            .map(|x| {
                let mut p = self.posterior(x, mu)?;
                p.resize(k_max as usize + 1, 0.0);
                Ok(p)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PosteriorTable {
            mu,
            k_max,
            origin: counts.start,
            rows,
        })
    }

    /// Closed-form `k̄` and `k̄²` curves for `mu`, covering counts up to at
    /// least `max_count`.
    pub fn moments(&self, mu: f64, max_count: i64) -> Result<MomentCurves> {
        check_mu(mu)?;
        let natural = gamma_extent((mu + 10.0 * mu.sqrt() + 10.0).ceil() as u32, self.gain);
        let len = natural.max(max_count.max(0) as usize + 1);
        let [m0, m1, m2] = moment_electrons(mu, self.gain, len);
        Ok(MomentCurves {
            mu,
            c0: self.model.apply(&m0),
            c1: self.model.apply(&m1),
            c2: self.model.apply(&m2),
        })
    }
}

/// Largest `k` with `Poisson(k | mu) > cutoff`, at least 1.
pub fn k_max(mu: f64, cutoff: f64) -> u32 {
    if mu <= 0.0 {
        return 1;
    }
    let mode = mu.floor() as u32;
    let mut k = mode;
    while poisson_pmf(k + 1, mu) > cutoff {
        k += 1;
    }
    if poisson_pmf(k, mu) <= cutoff {
        // Nothing clears the cutoff; fall back to the 0 / >=1 split.
        return 1;
    }
    k.max(1)
}

/// Electron-grid vectors `sum_k k^j Poisson(k | mu) A_k` for `j = 0, 1, 2`.
///
/// For `x >= 1` the sums have the Bessel closed forms
/// `m1 = e^(-x/G - mu) (mu/G) I0(z)` and
/// `m2 = e^(-x/G - mu) (mu/G) [I0(z) + sqrt(x mu / G) I1(z)]` with
/// `z = 2 sqrt(x mu / G)`; the zero bin collects the leftovers.
fn moment_electrons(mu: f64, gain: f64, len: usize) -> [Vec<f64>; 3] {
    let mut m = [vec![0.0; len], vec![0.0; len], vec![0.0; len]];
    if mu == 0.0 {
        m[0][0] = 1.0;
        return m;
    }
    let ln_scale = (mu / gain).ln();
    for x in 1..len {
        let xf = x as f64;
        let u = xf * mu / gain;
        let z = 2.0 * u.sqrt();
        let base = -xf / gain - mu + ln_scale;
        let i1 = (base + 0.5 * u.ln() + ln_bessel_i1(z)).exp();
        let i0 = (base + ln_bessel_i0(z)).exp();
        m[0][x] = poisson_gamma_density(xf, mu, gain);
        m[1][x] = i0;
        m[2][x] = i0 + i1;
    }
    let kmax = poisson_truncation(mu, 1e-16);
    m[0][0] = (-mu).exp() + mixed_leftover(|k| poisson_pmf(k, mu), kmax, gain);
    m[1][0] = mixed_leftover(|k| k as f64 * poisson_pmf(k, mu), kmax, gain);
    m[2][0] = mixed_leftover(|k| (k * k) as f64 * poisson_pmf(k, mu), kmax, gain);
    m
}

/// `[P_N * m_j](x)` for the three moment vectors of one `mu`.
#[derive(Debug, Clone)]
pub struct MomentCurves {
    mu: f64,
    c0: DiscretePmf,
    c1: DiscretePmf,
    c2: DiscretePmf,
}

impl MomentCurves {
    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// `(k̄, k̄²)` at count `x`; `None` where the count has no model mass.
    pub fn raw_moments(&self, x: i64) -> Option<(f64, f64)> {
        let d = self.c0.get(x);
        if d > 0.0 {
            Some((self.c1.get(x) / d, self.c2.get(x) / d))
        } else {
            None
        }
    }

    /// `(k̄, Δk)` at count `x`.
    pub fn at(&self, x: i64) -> Option<(f64, f64)> {
        self.raw_moments(x).map(|(m1, m2)| (m1, (m2 - m1 * m1).max(0.0).sqrt()))
    }

    /// Counts where the curves are defined.
    pub fn support(&self) -> std::ops::Range<i64> {
        self.c0.origin()..self.c0.end()
    }
}

/// Posterior rows `P(k | x, mu)` for consecutive counts.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorTable {
    pub mu: f64,
    pub k_max: u32,
    /// Count of the first row.
    pub origin: i64,
    /// `rows[i][k] = P(k | origin + i)`, normalized over all `k` before
    /// truncation to `k_max`.
    pub rows: Vec<Vec<f64>>,
}

impl PosteriorTable {
    pub fn row(&self, x: i64) -> Option<&[f64]> {
        let i = x - self.origin;
        if i < 0 {
            return None;
        }
        self.rows.get(i as usize).map(|r| r.as_slice())
    }
}

/// `P(k | x, mu)` for `k = 0..=K` under the dark-count law of `noise`.
pub fn posterior(x: i64, mu: f64, noise: &NoiseParams) -> Result<Vec<f64>> {
    check_mu(mu)?;
    PosteriorEngine::new(noise)?.posterior(x, mu)
}

/// Closed-form `(k̄, Δk)` at count `x`.
pub fn mean_photoelectron(x: i64, mu: f64, noise: &NoiseParams) -> Result<(f64, f64)> {
    check_mu(mu)?;
    let curves = PosteriorEngine::new(noise)?.moments(mu, x)?;
    Ok(curves.at(x).unwrap_or((0.0, 0.0)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params300() -> NoiseParams {
        NoiseParams::reference().with_mean_gain(300.0).unwrap()
    }

    #[test]
    fn zero_mean_puts_everything_on_zero() {
        let e = PosteriorEngine::new(&params300()).unwrap();
        for x in [-50, 0, 500, 5000] {
            assert_eq!(e.posterior(x, 0.0).unwrap(), vec![1.0]);
        }
        let c = e.moments(0.0, 1000).unwrap();
        assert_eq!(c.at(300), Some((0.0, 0.0)));
    }

    #[test]
    fn rows_sum_to_one() {
        let e = PosteriorEngine::new(&params300()).unwrap();
        for mu in [0.01, 0.1, 1.0, 5.0] {
            for x in [-40, 0, 30, 300, 3000, 9000] {
                let p = e.posterior(x, mu).unwrap();
                let s: f64 = p.iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
                assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    #[test]
    fn closed_form_matches_direct_sum() {
        for noise in [params300(), NoiseParams::reference()] {
            let e = PosteriorEngine::new(&noise).unwrap();
            let top = (20.0 * e.gain()) as i64;
            for mu in [0.1, 0.5, 1.0, 3.0] {
                let c = e.moments(mu, top).unwrap();
                for x in (-30..top).step_by(37) {
                    let (a1, a2) = c.raw_moments(x).unwrap();
                    let p = e.posterior(x, mu).unwrap();
                    let b1: f64 = p.iter().enumerate().map(|(k, w)| k as f64 * w).sum();
                    let b2: f64 = p.iter().enumerate().map(|(k, w)| (k * k) as f64 * w).sum();
                    assert!((a1 - b1).abs() < 1e-8, "mu {mu} x {x}: {a1} vs {b1}");
                    assert!((a2 - b2).abs() < 1e-8, "mu {mu} x {x}: {a2} vs {b2}");
                }
            }
        }
    }

    #[test]
    fn k_max_follows_poisson_cutoff() {
        assert_eq!(k_max(1.0, 0.05), 3);
        assert_eq!(k_max(0.1, 0.05), 1);
        assert_eq!(k_max(0.1, 1e-3), 2);
        assert_eq!(k_max(0.0, 0.05), 1);
        assert_eq!(k_max(1e-4, 0.05), 1);
    }

    #[test]
    fn negative_mu_rejected() {
        assert!(posterior(0, -1.0, &params300()).is_err());
        assert!(mean_photoelectron(0, f64::NAN, &params300()).is_err());
    }
}
