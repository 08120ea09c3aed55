#![allow(dead_code)]

use std::collections::BTreeMap;

use emccd_pnr::distributions::DiscretePmf;

/// Integer-count histogram normalized to probabilities.
pub fn empirical(values: impl IntoIterator<Item = i64>) -> (BTreeMap<i64, f64>, usize) {
    let mut h = BTreeMap::new();
    let mut n = 0;
    for v in values {
        *h.entry(v).or_insert(0.0) += 1.0;
        n += 1;
    }
    for v in h.values_mut() {
        *v /= n as f64;
    }
    (h, n)
}

/// Total variation between an empirical histogram and a pmf, both grouped
/// into bins of `width` counts.
pub fn tv_binned(emp: &BTreeMap<i64, f64>, pmf: &DiscretePmf, width: i64) -> f64 {
    let mut groups: BTreeMap<i64, (f64, f64)> = BTreeMap::new();
    for (&x, &p) in emp {
        groups.entry(x.div_euclid(width)).or_default().0 += p;
    }
    for (x, m) in pmf.iter() {
        groups.entry(x.div_euclid(width)).or_default().1 += m;
    }
    0.5 * groups.values().map(|(a, b)| (a - b).abs()).sum::<f64>()
}

pub fn tv(emp: &BTreeMap<i64, f64>, pmf: &DiscretePmf) -> f64 {
    tv_binned(emp, pmf, 1)
}

/// One-sample Kolmogorov-Smirnov statistic against a continuous CDF.
pub fn ks_statistic(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic KS critical value at level 0.01.
pub fn ks_critical_01(n: usize) -> f64 {
    1.628 / (n as f64).sqrt()
}
