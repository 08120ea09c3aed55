//! Poisson-distributed photoelectrons passed through the gain register.

use super::amplifier::mixed_leftover;
use super::{gamma_extent, DiscretePmf, GainModel, Support};
use crate::special::{ln_bessel_i1, poisson_pmf, poisson_truncation};
use crate::{Error, Result};

/// Continuous part of the noiseless photon count law for `x > 0`:
/// `exp(-x/G - mu) sqrt(mu / (G x)) I1(2 sqrt(x mu / G))`.
pub fn poisson_gamma_density(x: f64, mu: f64, gain: f64) -> f64 {
    if x <= 0.0 || mu <= 0.0 {
        return 0.0;
    }
    let z = 2.0 * (x * mu / gain).sqrt();
    (-x / gain - mu + 0.5 * (mu.ln() - gain.ln() - x.ln()) + ln_bessel_i1(z)).exp()
}

fn extent(mu: f64, gain: f64) -> usize {
    let k_hi = mu + 10.0 * mu.sqrt() + 10.0;
    gamma_extent(k_hi.ceil() as u32, gain)
}

/// Closed form on the electron grid `[0, len)`. The zero bin holds `e^-mu`
/// plus the Poisson-weighted zero-bin masses of the amplifier laws, so the
/// result equals the photoelectron-number sum bin by bin.
pub(crate) fn pg_electrons(mu: f64, gain: f64, len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len.max(1)];
    if mu == 0.0 {
        out[0] = 1.0;
        return out;
    }
    for (x, slot) in out.iter_mut().enumerate().skip(1) {
        *slot = poisson_gamma_density(x as f64, mu, gain);
    }
    let kmax = poisson_truncation(mu, 1e-16);
    out[0] = (-mu).exp() + mixed_leftover(|k| poisson_pmf(k, mu), kmax, gain);
    out
}

/// Amplified count of a pixel receiving Poisson(`mu`) photoelectrons,
/// without dark noise.
pub fn poisson_gamma_pmf(mu: f64, gain: &GainModel, support: impl Into<Support>) -> Result<DiscretePmf> {
    if !(mu >= 0.0 && mu.is_finite()) {
        return Err(Error::invalid("mu", format!("{mu} must be finite and >= 0")));
    }
    gain.validate()?;
    let support = support.into();
    let g = gain.mean_gain();
    let len = match &support {
        Support::Full => extent(mu, g),
        Support::Range(r) => extent(mu, g).max(r.end.max(1) as usize),
    };
    Ok(DiscretePmf::from_raw(0, pg_electrons(mu, g, len)).with_support(&support))
}
