//! Frame-distributed photons: the Poisson-Gamma-Normal count model.

use super::{amplifier_electrons, gamma_extent, DiscretePmf, NoiseModel, NoiseParams, Support};
use crate::special::{ln_poisson, poisson_truncation};
use crate::{Error, IntensityMap, Result};

/// Tail mass dropped from the photoelectron-number sum.
const K_TAIL: f64 = 1e-12;

/// Weights `w_k = (1/n) sum_i Poisson(k | mu_f I_i)` of the photoelectron
/// number of a randomly chosen pixel.
pub fn photon_mixture_weights(mu_f: f64, intensity: &IntensityMap) -> Result<Vec<f64>> {
    check_inputs(mu_f, intensity)?;
    let mus = intensity.pixel_means(mu_f);
    let mu_max = mus.iter().copied().fold(0.0, f64::max);
    let kmax = poisson_truncation(mu_max, K_TAIL);
    let n = mus.len() as f64;
    let mut w = vec![0.0; kmax as usize + 1];
    for &mu in &mus {
        if mu == 0.0 {
            w[0] += 1.0;
            continue;
        }
        for (k, slot) in w.iter_mut().enumerate() {
            *slot += ln_poisson(k as u32, mu).exp();
        }
    }
    w.iter_mut().for_each(|v| *v /= n);
    Ok(w)
}

fn check_inputs(mu_f: f64, intensity: &IntensityMap) -> Result<()> {
    if !(mu_f >= 0.0 && mu_f.is_finite()) {
        return Err(Error::invalid("mu_f", format!("{mu_f} must be finite and >= 0")));
    }
    let sum = intensity.sum();
    if (sum - 1.0).abs() > IntensityMap::NORMALIZATION_TOLERANCE {
        return Err(Error::NotNormalized { sum });
    }
    Ok(())
}

/// Noiseless count law of the pixel mixture on the electron grid.
pub(crate) fn mixture_electrons(weights: &[f64], gain: f64) -> Vec<f64> {
    let kmax = weights.iter().rposition(|&w| w > 0.0).unwrap_or(0);
    if kmax == 0 {
        return vec![weights[0]];
    }
    let len = gamma_extent(kmax as u32, gain).max(1);
    let mut out = vec![0.0; len];
    out[0] = weights[0];
    for (k, &w) in weights.iter().enumerate().skip(1) {
        if w == 0.0 {
            continue;
        }
        let a = amplifier_electrons(k as u32, gain, len);
        for (o, v) in out.iter_mut().zip(a) {
            *o += w * v;
        }
    }
    out
}

/// Model pmf of a corrected count drawn from any pixel of the region:
/// `P_N * (1/n) sum_i PG(mu_f I_i)`.
pub fn pgn_pmf(
    mu_f: f64,
    intensity: &IntensityMap,
    params: &NoiseParams,
    support: impl Into<Support>,
) -> Result<DiscretePmf> {
    let model = NoiseModel::new(params)?;
    Ok(pgn_with_model(mu_f, intensity, &model)?.with_support(&support.into()))
}

pub(crate) fn pgn_with_model(mu_f: f64, intensity: &IntensityMap, model: &NoiseModel) -> Result<DiscretePmf> {
    let w = photon_mixture_weights(mu_f, intensity)?;
    let g = model.params().gain.mean_gain();
    Ok(model.apply(&mixture_electrons(&w, g)))
}

#[cfg(test)]
mod tests {
    use super::super::{convolve, noise_pmf, poisson_gamma_pmf};
    use super::*;

    fn params300() -> NoiseParams {
        NoiseParams::reference().with_mean_gain(300.0).unwrap()
    }

    #[test]
    fn no_light_gives_the_noise_pmf() {
        let p = params300();
        let spot = IntensityMap::gaussian_spot(8, 8, 4.0, 4.0, 2.0);
        let a = pgn_pmf(0.0, &spot, &p, Support::Full).unwrap();
        let b = noise_pmf(&p, Support::Full).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn uniform_map_collapses_to_single_poisson_gamma() {
        let p = params300();
        let uni = IntensityMap::uniform(2, 2);
        let got = pgn_pmf(2.0, &uni, &p, Support::Full).unwrap();
        let pg = poisson_gamma_pmf(0.5, &p.gain, Support::Full).unwrap();
        let want = convolve(&pg, &noise_pmf(&p, Support::Full).unwrap());
        assert!(got.max_abs_diff(&want) < 1e-10, "{}", got.max_abs_diff(&want));
        assert!((got.total() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn mixture_weights_sum_to_one() {
        let spot = IntensityMap::gaussian_spot(16, 16, 8.0, 8.0, 3.0);
        let w = photon_mixture_weights(500.0, &spot).unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        let mean: f64 = w.iter().enumerate().map(|(k, w)| k as f64 * w).sum();
        assert!((mean - 500.0 / 256.0).abs() < 1e-9);
    }

    #[test]
    fn mean_adds_signal_and_noise() {
        let p = params300();
        let spot = IntensityMap::gaussian_spot(16, 16, 8.0, 8.0, 3.0);
        let pmf = pgn_pmf(100.0, &spot, &p, Support::Full).unwrap();
        let want = 100.0 / 256.0 * 300.0 + p.analytic_mean();
        assert!((pmf.mean() - want).abs() / want < 1e-3);
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = params300();
        let uni = IntensityMap::uniform(2, 2);
        assert!(pgn_pmf(-1.0, &uni, &p, Support::Full).is_err());
    }
}
