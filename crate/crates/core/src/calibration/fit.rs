//! Weighted histogram fits of the dark-noise and photon models.

use serde::{Deserialize, Serialize};

use super::lm::{minimize, natural_jacobian, sandwich_errors, LmOptions, ParamSpec, Transform};
use super::CountHistogram;
use crate::distributions::pgn::pgn_with_model;
use crate::distributions::{DiscretePmf, GainModel, NoiseModel, NoiseParams};
use crate::{Error, FrameStack, IntensityMap, Region, Result};

/// Minimum number of events for a noise fit.
pub const MIN_NOISE_EVENTS: u64 = 100_000;

/// Fit settings shared by the noise and photon fits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Shift the model to zero dark mean, for counts corrected with a plain
    /// correction image.
    pub centered: bool,
    pub max_iterations: usize,
    /// Relative objective change that ends the fit.
    pub tolerance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            centered: false,
            max_iterations: 200,
            tolerance: 1e-8,
        }
    }
}

impl FitOptions {
    /// Settings for counts corrected with a plain correction image.
    pub fn corrected() -> Self {
        FitOptions {
            centered: true,
            ..Self::default()
        }
    }

    fn lm(&self) -> LmOptions {
        LmOptions {
            max_iterations: self.max_iterations,
            tolerance: self.tolerance,
            ..LmOptions::default()
        }
    }
}

/// Outcome of a converged fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub names: Vec<String>,
    pub values: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// Count value of every fitted (non-empty) bin.
    pub bins: Vec<i64>,
    /// Events in every fitted bin.
    pub events: Vec<u64>,
    pub p_emp: Vec<f64>,
    pub p_model: Vec<f64>,
    /// `(p_emp - p_model) / max(p_emp, 0.5 / total)` per fitted bin.
    pub residuals: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub objective: f64,
    pub objective_history: Vec<f64>,
    pub total_events: u64,
    pub centered: bool,
    /// Parameters that ended on an edge of their transformed range.
    #[serde(default)]
    pub at_bound: Vec<String>,
}

impl FitResult {
    fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.values[i])
    }

    pub fn std_error(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.std_errors[i])
    }

    /// Largest `|residual|` over bins holding at least `min_events` events.
    pub fn max_abs_residual(&self, min_events: u64) -> f64 {
        self.residuals
            .iter()
            .zip(&self.events)
            .filter(|(_, &e)| e >= min_events)
            .map(|(r, _)| r.abs())
            .fold(0.0, f64::max)
    }

    /// Noise parameters of a [`fit_noise`] result.
    pub fn noise_params(&self, n_r: u32) -> Result<NoiseParams> {
        let get = |n: &str| {
            self.value(n)
                .ok_or_else(|| Error::invalid("fit", format!("result has no parameter `{n}`")))
        };
        NoiseParams::new(
            get("sigma_n")?,
            get("p_cic")?,
            get("p_ser")?,
            GainModel::new(get("p_c")?, n_r)?,
        )
    }
}

struct Bins {
    x: Vec<i64>,
    events: Vec<u64>,
    p: Vec<f64>,
    weight: Vec<f64>,
    total: u64,
}

impl Bins {
    fn new(hist: &CountHistogram) -> Result<Self> {
        if hist.is_empty() {
            return Err(Error::Empty("histogram"));
        }
        let total = hist.total();
        let n = total as f64;
        let floor = 0.5 / n;
        let (mut x, mut events, mut p, mut weight) = (vec![], vec![], vec![], vec![]);
        for (v, c) in hist.iter().filter(|(_, c)| *c > 0) {
            let pe = c as f64 / n;
            x.push(v);
            events.push(c);
            p.push(pe);
            weight.push(pe.max(floor));
        }
        Ok(Bins {
            x,
            events,
            p,
            weight,
            total,
        })
    }

    fn residuals(&self, model: &DiscretePmf) -> Vec<f64> {
        self.x
            .iter()
            .zip(&self.p)
            .zip(&self.weight)
            .map(|((&x, p), w)| (p - model.get(x)) / w)
            .collect()
    }

    /// `Var(residual)` of every bin under multinomial sampling, `~ 1/events`.
    fn omega(&self) -> Vec<f64> {
        let n = self.total as f64;
        self.p
            .iter()
            .zip(&self.weight)
            .map(|(p, w)| p * (1.0 - p) / n / (w * w))
            .collect()
    }
}

fn noise_model(params: &NoiseParams, centered: bool) -> Result<NoiseModel> {
    if centered {
        NoiseModel::centered(params)
    } else {
        NoiseModel::new(params)
    }
}

/// Moment-based starting point for [`fit_noise`]: `sigma_N` from the spread
/// below the mode, `p_CIC` from the mass above mode + 5 sigma_N scaled back by
/// `e^(5 sigma_N / G)`, `p_ser = 1e-4`, `p_c` from the specified gain.
pub fn initial_noise_guess(hist: &CountHistogram, n_r: u32, specified_gain: f64) -> Result<NoiseParams> {
    if hist.is_empty() {
        return Err(Error::Empty("histogram"));
    }
    let gain = GainModel::from_mean_gain(specified_gain, n_r)?;
    let mode = hist.mode();
    let (mut s2, mut n) = (0.0, 0.0);
    for (x, c) in hist.iter().filter(|(x, _)| *x < mode) {
        s2 += ((x - mode) as f64).powi(2) * c as f64;
        n += c as f64;
    }
    let sigma = if n > 0.0 { (s2 / n).sqrt().max(0.5) } else { 1.0 };
    let cut = mode as f64 + 5.0 * sigma;
    let above: u64 = hist.iter().filter(|(x, _)| *x as f64 > cut).map(|(_, c)| c).sum();
    let frac = above as f64 / hist.total() as f64;
    let p_cic = (frac * (5.0 * sigma / specified_gain).exp()).clamp(1e-5, 0.5);
    let p_ser = 1e-4f64.min(0.5 / n_r as f64);
    NoiseParams::new(sigma, p_cic, p_ser, gain)
}

fn noise_specs(n_r: u32) -> [ParamSpec; 4] {
    [
        ParamSpec {
            name: "sigma_n",
            transform: Transform::Log,
            scale: 1.0,
        },
        ParamSpec {
            name: "p_cic",
            transform: Transform::Logit { upper: 1.0 },
            scale: 1e-3,
        },
        ParamSpec {
            name: "p_ser",
            transform: Transform::Logit {
                upper: 1.0 / n_r as f64,
            },
            scale: 1e-6,
        },
        ParamSpec {
            name: "p_c",
            transform: Transform::Logit { upper: 1.0 },
            scale: 1e-4,
        },
    ]
}

/// Fits `sigma_N, p_CIC, p_ser, p_c` of the dark-count model to a
/// histogram by weighted least squares.
pub fn fit_noise(hist: &CountHistogram, initial: &NoiseParams, opts: &FitOptions) -> Result<FitResult> {
    if hist.total() < MIN_NOISE_EVENTS {
        return Err(Error::invalid(
            "histogram",
            format!("{} events, need at least {MIN_NOISE_EVENTS}", hist.total()),
        ));
    }
    initial.validate()?;
    let bins = Bins::new(hist)?;
    let n_r = initial.gain.n_r;
    let specs = noise_specs(n_r);
    let model_of = |p: &[f64]| -> Result<DiscretePmf> {
        let params = NoiseParams::new(p[0], p[1], p[2], GainModel::new(p[3], n_r)?)?;
        Ok(noise_model(&params, opts.centered)?.pmf())
    };
    let resid = |p: &[f64]| -> Result<Vec<f64>> { Ok(bins.residuals(&model_of(p)?)) };
    let start = [initial.sigma_n, initial.p_cic, initial.p_ser, initial.gain.p_c];
    let out = minimize(&specs, &start, opts.lm(), resid)?;
    finish(&specs, &bins, out, &resid, model_of, opts.centered)
}

fn finish<R, M>(
    specs: &[ParamSpec],
    bins: &Bins,
    out: super::lm::LmOutcome,
    resid: &R,
    model_of: M,
    centered: bool,
) -> Result<FitResult>
where
    R: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
    M: Fn(&[f64]) -> Result<DiscretePmf>,
{
    let at_bound = specs
        .iter()
        .zip(&out.params)
        .filter(|(s, &x)| s.at_limit(x))
        .map(|(s, _)| s.name.to_string())
        .collect();
    let jac = natural_jacobian(specs, &out.params, resid)?;
    let std_errors = sandwich_errors(specs, &jac, &bins.omega())?;
    let model = model_of(&out.params)?;
    Ok(FitResult {
        names: specs.iter().map(|s| s.name.to_string()).collect(),
        values: out.params,
        std_errors,
        p_model: bins.x.iter().map(|&x| model.get(x)).collect(),
        bins: bins.x.clone(),
        events: bins.events.clone(),
        p_emp: bins.p.clone(),
        residuals: out.residuals,
        converged: true,
        iterations: out.iterations,
        objective: out.objective,
        objective_history: out.history,
        total_events: bins.total,
        centered,
        at_bound,
    })
}

/// Mean frame over `region`, negative pixels set to zero, normalized to
/// unit sum.
pub fn estimate_intensity_map(frames: &FrameStack, region: &Region) -> Result<IntensityMap> {
    region.check_within(frames.width(), frames.height())?;
    let mut sum = vec![0.0; region.pixel_count()];
    for f in frames {
        for (s, i) in sum.iter_mut().zip(region.indices(f.width)) {
            *s += f.values[i];
        }
    }
    let weights: Vec<f64> = sum.into_iter().map(|v| v.max(0.0)).collect();
    if weights.iter().all(|&w| w == 0.0) {
        return Err(Error::Degenerate("mean frame is zero everywhere in the region".into()));
    }
    IntensityMap::from_weights(region.width, region.height, weights)
}

/// Starting `mu_f`: `(histogram mean - noise mean) * pixels / G`, floored at a
/// small positive value.
pub fn initial_mu_f(hist: &CountHistogram, intensity: &IntensityMap, noise: &NoiseParams, centered: bool) -> f64 {
    let dark = if centered { 0.0 } else { noise.analytic_mean() };
    let g = noise.gain.mean_gain();
    let n = intensity.len() as f64;
    ((hist.mean() - dark) * n / g).max(1e-3 * n)
}

/// Fits `mu_f` and `p_c` of the photon model with `sigma_N, p_CIC, p_ser`
/// held at `noise`.
pub fn fit_photon_model(
    hist: &CountHistogram,
    intensity: &IntensityMap,
    noise: &NoiseParams,
    initial_mu_f: f64,
    opts: &FitOptions,
) -> Result<FitResult> {
    noise.validate()?;
    let sum = intensity.sum();
    if (sum - 1.0).abs() > IntensityMap::NORMALIZATION_TOLERANCE {
        return Err(Error::NotNormalized { sum });
    }
    if !(initial_mu_f > 0.0 && initial_mu_f.is_finite()) {
        return Err(Error::invalid("initial_mu_f", "must be finite and > 0"));
    }
    let bins = Bins::new(hist)?;
    let n_r = noise.gain.n_r;
    let specs = [
        ParamSpec {
            name: "mu_f",
            transform: Transform::Log,
            scale: 1.0,
        },
        ParamSpec {
            name: "p_c",
            transform: Transform::Logit { upper: 1.0 },
            scale: 1e-4,
        },
    ];
    let model_of = |p: &[f64]| -> Result<DiscretePmf> {
        let params = NoiseParams {
            gain: GainModel::new(p[1], n_r)?,
            ..*noise
        };
        pgn_with_model(p[0], intensity, &noise_model(&params, opts.centered)?)
    };
    let resid = |p: &[f64]| -> Result<Vec<f64>> { Ok(bins.residuals(&model_of(p)?)) };
    let out = minimize(&specs, &[initial_mu_f, noise.gain.p_c], opts.lm(), resid)?;
    // Zero illumination is a legitimate answer; a diverging mu_f is not.
    if specs[0].at_limit(out.params[0]) && out.params[0] > 1.0 {
        return Err(Error::AtBound {
            name: "mu_f".into(),
            value: out.params[0],
        });
    }
    finish(&specs, &bins, out, &resid, model_of, opts.centered)
}
