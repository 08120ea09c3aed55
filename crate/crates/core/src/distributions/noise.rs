//! Dark-noise count law: clock-induced charge and serial-register charge
//! through the gain register, then Gaussian read noise.

use super::{DiscretePmf, NoiseParams, Support};
use crate::Result;

/// Read noise is cut off beyond this many standard deviations.
const GAUSS_SPAN: f64 = 8.0;
/// Exponential tails are kept out to this many gains (`e^-45 ~ 3e-20`).
const TAIL_GAINS: f64 = 45.0;

/// Discretized `Exp(g)` on the integer grid: `c r^x` for `x >= 1` with
/// `r = e^(-1/g)`, the rest at zero. `c = g (1 - r)^2 / r` (within
/// `1 + 1/(12 g^2)` of the density's `1/g`) keeps the mean at exactly `g`,
/// which matters for the low-gain kernels of the last serial stages.
#[derive(Debug, Clone, Copy)]
struct ExpKernel {
    zero: f64,
    ratio: f64,
    scale: f64,
}

impl ExpKernel {
    fn new(g: f64) -> Self {
        let ratio = (-1.0 / g).exp();
        let one_minus = -(-1.0 / g).exp_m1();
        let scale = g * one_minus * one_minus / ratio;
        ExpKernel {
            zero: 1.0 - g * one_minus,
            ratio,
            scale,
        }
    }
}

/// `P_N` as a linear operator on electron-count vectors.
///
/// The spurious-charge terms are exponential kernels, so each one is applied
/// with an O(n) recursion instead of a generic convolution; this keeps the
/// far tail accurate down to the smallest representable masses.
#[derive(Debug, Clone)]
pub struct NoiseModel {
    params: NoiseParams,
    cic: ExpKernel,
    serial: Vec<ExpKernel>,
    taps: Vec<f64>,
    taps_origin: i64,
    center: f64,
    tail: usize,
}

impl NoiseModel {
    pub fn new(params: &NoiseParams) -> Result<Self> {
        Self::with_center(params, 0.0)
    }

    /// The same law shifted so that its mean is zero. Frames corrected with a
    /// dark-frame correction image live in these coordinates.
    pub fn centered(params: &NoiseParams) -> Result<Self> {
        let raw = Self::new(params)?;
        let mean = raw.spurious_mean();
        Self::with_center(params, -mean)
    }

    /// Read-noise Gaussian centred at `center` instead of zero.
    pub fn with_center(params: &NoiseParams, center: f64) -> Result<Self> {
        params.validate()?;
        let g = params.gain.mean_gain();
        let serial = (1..=params.gain.n_r)
            .map(|m| ExpKernel::new(params.gain.stage_gain(m)))
            .collect();
        let sigma = params.sigma_n;
        let lo = (center - GAUSS_SPAN * sigma).floor() as i64;
        let hi = (center + GAUSS_SPAN * sigma).ceil() as i64;
        let mut taps: Vec<f64> = (lo..=hi)
            .map(|x| {
                let d = x as f64 - center;
                (-d * d / (2.0 * sigma * sigma)).exp()
            })
            .collect();
        let total: f64 = taps.iter().sum();
        taps.iter_mut().for_each(|t| *t /= total);
        let tail = if params.p_cic == 0.0 && params.p_ser == 0.0 {
            0
        } else {
            (TAIL_GAINS * g).ceil() as usize + 1
        };
        Ok(NoiseModel {
            params: *params,
            cic: ExpKernel::new(g),
            serial,
            taps,
            taps_origin: lo,
            center,
            tail,
        })
    }

    pub fn params(&self) -> &NoiseParams {
        &self.params
    }

    /// Centre of the read-noise Gaussian.
    pub fn center(&self) -> f64 {
        self.center
    }

    /// Extra electron bins the spurious-charge tails add to an input vector.
    pub fn tail_len(&self) -> usize {
        self.tail
    }

    /// Lowest count any output of [`apply`](Self::apply) can cover.
    pub fn lowest_count(&self) -> i64 {
        self.taps_origin
    }

    /// Mean of the spurious-charge part on the discrete grid (close to
    /// [`NoiseParams::analytic_mean`]).
    pub fn spurious_mean(&self) -> f64 {
        let e = self.spurious(&[1.0]);
        e.iter().enumerate().map(|(x, m)| x as f64 * m).sum()
    }

    /// Mean of the full model.
    pub fn mean(&self) -> f64 {
        self.spurious_mean() + self.center
    }

    /// CIC and serial-register charge applied to an electron vector starting
    /// at zero; the result is `tail_len()` bins longer.
    pub fn spurious(&self, electrons: &[f64]) -> Vec<f64> {
        let mut a = electrons.to_vec();
        if self.tail == 0 {
            return a;
        }
        a.resize(electrons.len() + self.tail, 0.0);
        let p = self.params.p_cic;
        if p > 0.0 {
            a = apply_exp_mixture(&a, 1.0 - p, &[(p, self.cic)]);
        }
        let p = self.params.p_ser;
        if p > 0.0 {
            let stay = 1.0 - p * self.serial.len() as f64;
            let kernels: Vec<(f64, ExpKernel)> = self.serial.iter().map(|k| (p, *k)).collect();
            a = apply_exp_mixture(&a, stay, &kernels);
        }
        a
    }

    /// `P_N * electrons`, for a non-negative vector indexed by electron count
    /// from zero.
    pub fn apply(&self, electrons: &[f64]) -> DiscretePmf {
        let spread = self.spurious(electrons);
        DiscretePmf::from_raw(self.taps_origin, self.read_noise(&spread))
    }

    fn read_noise(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len() + self.taps.len() - 1];
        for (i, &vi) in v.iter().enumerate() {
            if vi == 0.0 {
                continue;
            }
            for (o, t) in out[i..i + self.taps.len()].iter_mut().zip(&self.taps) {
                *o += vi * t;
            }
        }
        out
    }

    /// The dark-count pmf itself.
    pub fn pmf(&self) -> DiscretePmf {
        self.apply(&[1.0])
    }
}

/// `stay * a + sum_j w_j (E_j * a)` with every `E_j` an exponential kernel.
fn apply_exp_mixture(a: &[f64], stay: f64, kernels: &[(f64, ExpKernel)]) -> Vec<f64> {
    let zero_weight: f64 = stay + kernels.iter().map(|(w, k)| w * k.zero).sum::<f64>();
    let mut out: Vec<f64> = a.iter().map(|v| zero_weight * v).collect();
    for (w, k) in kernels {
        let coef = w * k.scale;
        let mut acc = 0.0;
        for x in 1..a.len() {
            acc = k.ratio * (acc + a[x - 1]);
            out[x] += coef * acc;
        }
    }
    out
}

/// Dark-count pmf `P_CIC * P_ser * P_amp` for the given noise parameters.
pub fn noise_pmf(params: &NoiseParams, support: impl Into<Support>) -> Result<DiscretePmf> {
    let model = NoiseModel::new(params)?;
    Ok(model.pmf().with_support(&support.into()))
}
