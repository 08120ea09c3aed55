//! The gain register as a branching process.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::distributions::GainModel;

/// Below this expected number of new electrons per stage, stages without any
/// ionization are skipped geometrically.
const SKIP_BELOW: f64 = 0.3;

/// Runs `k` electrons through every stage of the register, each stage adding
/// `Binomial(n, p_c)` electrons.
pub fn cascade<R: Rng + ?Sized>(k: u64, gain: &GainModel, rng: &mut R) -> u64 {
    cascade_stages(k, gain.n_r, gain.p_c, rng)
}

/// Same as [`cascade`] over only the last `stages` stages.
pub fn cascade_stages<R: Rng + ?Sized>(k: u64, stages: u32, p: f64, rng: &mut R) -> u64 {
    let mut n = k;
    let mut left = stages as u64;
    let ln_q = (-p).ln_1p();
    while n > 0 && left > 0 {
        if (n as f64) * p < SKIP_BELOW {
            // Stages until the next ionization event are geometric.
            let v: f64 = 1.0 - rng.random::<f64>();
            let quiet = (v.ln() / (n as f64 * ln_q)).floor();
            if quiet >= left as f64 {
                break;
            }
            left -= quiet as u64 + 1;
            n += positive_binomial(n, p, rng);
        } else {
            n += binomial(n, p, rng);
            left -= 1;
        }
    }
    n
}

/// `Binomial(n, p)` by inversion for small means, BTPE otherwise.
pub(crate) fn binomial<R: Rng + ?Sized>(n: u64, p: f64, rng: &mut R) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if n as f64 * p >= 10.0 {
        return Binomial::new(n, p).expect("valid binomial").sample(rng);
    }
    let q = 1.0 - p;
    let s = p / q;
    let a = (n + 1) as f64 * s;
    let mut r = (n as f64 * (-p).ln_1p()).exp();
    let mut u: f64 = rng.random();
    let mut x = 0;
    while u >= r {
        u -= r;
        x += 1;
        if x >= n {
            return n;
        }
        r *= a / x as f64 - s;
    }
    x
}

/// `Binomial(n, p)` conditioned on being at least one.
fn positive_binomial<R: Rng + ?Sized>(n: u64, p: f64, rng: &mut R) -> u64 {
    let ln_r0 = n as f64 * (-p).ln_1p();
    let none = ln_r0.exp();
    let some = -ln_r0.exp_m1();
    let s = p / (1.0 - p);
    let a = (n + 1) as f64 * s;
    let mut u = rng.random::<f64>() * some;
    let mut r = none * n as f64 * s;
    let mut x = 1;
    while u >= r {
        u -= r;
        x += 1;
        if x >= n + 1 || r <= 0.0 {
            return x.min(n);
        }
        r *= a / x as f64 - s;
    }
    x
}

/// Sample mean and (unbiased) variance of `n_samples` cascade outputs.
pub fn estimate_gain_distribution_moments<R: Rng + ?Sized>(
    k: u64,
    gain: &GainModel,
    n_samples: usize,
    rng: &mut R,
) -> (f64, f64) {
    let n_samples = n_samples.max(1);
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for i in 0..n_samples {
        let x = cascade(k, gain, rng) as f64;
        let d = x - mean;
        mean += d / (i + 1) as f64;
        m2 += d * (x - mean);
    }
    let var = if n_samples > 1 {
        m2 / (n_samples - 1) as f64
    } else {
        0.0
    };
    (mean, var)
}

/// Exact output law of one electron for every number of remaining stages,
/// tabulated as cumulative distributions for inverse-transform sampling.
///
/// Built from `P_s = (1 - p) P_(s-1) + p (P_(s-1) * P_(s-1))` with
/// `P_0 = delta_1`, so sampling from it is equivalent to running the
/// per-stage binomial cascade.
#[derive(Debug)]
pub struct GainRegister {
    gain: GainModel,
    cdfs: Vec<Vec<f64>>,
}

impl GainRegister {
    pub fn new(gain: GainModel) -> Self {
        let p = gain.p_c;
        let mut cdfs = Vec::with_capacity(gain.n_r as usize + 1);
        let mut pmf = vec![0.0, 1.0];
        cdfs.push(cumulative(&pmf));
        let mut planner = FftPlanner::<f64>::new();
        for s in 1..=gain.n_r {
            let len = (45.0 * (1.0 + p).powi(s as i32) + 20.0).ceil() as usize;
            let sq = self_convolve(&pmf, len, &mut planner);
            let mut next = vec![0.0; len.min(sq.len())];
            for (x, slot) in next.iter_mut().enumerate() {
                let stay = pmf.get(x).copied().unwrap_or(0.0);
                *slot = ((1.0 - p) * stay + p * sq[x]).max(0.0);
            }
            cdfs.push(cumulative(&next));
            pmf = next;
        }
        GainRegister { gain, cdfs }
    }

    /// Shared table for `gain`, built on first use.
    pub fn shared(gain: GainModel) -> Arc<GainRegister> {
        static CACHE: OnceLock<Mutex<HashMap<(u64, u32), Arc<GainRegister>>>> = OnceLock::new();
        let key = (gain.p_c.to_bits(), gain.n_r);
        let cache = CACHE.get_or_init(Default::default);
        if let Some(r) = cache.lock().expect("register cache").get(&key) {
            return Arc::clone(r);
        }
        let built = Arc::new(GainRegister::new(gain));
        cache
            .lock()
            .expect("register cache")
            .entry(key)
            .or_insert(built)
            .clone()
    }

    pub fn gain(&self) -> &GainModel {
        &self.gain
    }

    /// Output of one electron that still has `stages` stages to pass.
    #[inline]
    pub fn sample_one<R: Rng + ?Sized>(&self, stages: u32, rng: &mut R) -> u64 {
        let cdf = &self.cdfs[stages as usize];
        let u: f64 = rng.random();
        (cdf.partition_point(|&c| c <= u) as u64).min(cdf.len() as u64 - 1)
    }

    /// Output of `k` electrons entering before the first stage.
    pub fn sample<R: Rng + ?Sized>(&self, k: u64, rng: &mut R) -> u64 {
        (0..k).map(|_| self.sample_one(self.gain.n_r, rng)).sum()
    }

    /// Probability of output `x` for one electron passing `stages` stages.
    pub fn probability(&self, stages: u32, x: usize) -> f64 {
        let cdf = &self.cdfs[stages as usize];
        match x {
            0 => cdf[0],
            _ if x < cdf.len() => cdf[x] - cdf[x - 1],
            _ => 0.0,
        }
    }
}

fn cumulative(pmf: &[f64]) -> Vec<f64> {
    let total: f64 = pmf.iter().sum();
    let mut acc = 0.0;
    let mut out: Vec<f64> = pmf
        .iter()
        .map(|m| {
            acc += m;
            acc / total
        })
        .collect();
    if let Some(last) = out.last_mut() {
        *last = 1.0;
    }
    out
}

fn self_convolve(a: &[f64], keep: usize, planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let full = 2 * a.len() - 1;
    if a.len() <= 64 {
        let mut out = vec![0.0; full];
        for (i, x) in a.iter().enumerate() {
            for (j, y) in a.iter().enumerate() {
                out[i + j] += x * y;
            }
        }
        out.truncate(keep);
        return out;
    }
    let n = full.next_power_of_two();
    let mut buf: Vec<Complex<f64>> = a.iter().map(|&v| Complex::new(v, 0.0)).collect();
    buf.resize(n, Complex::new(0.0, 0.0));
    planner.plan_fft_forward(n).process(&mut buf);
    for z in &mut buf {
        *z = *z * *z;
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let scale = 1.0 / n as f64;
    buf.iter().take(full.min(keep)).map(|z| z.re * scale).collect()
}
