//! Special functions used by the count model.
//!
//! Only the exponentially scaled modified Bessel functions are implemented
//! here; log-gamma and the error function come from `statrs`.

pub use statrs::function::erf::{erf, erfc};
pub use statrs::function::gamma::ln_gamma;

/// Argument at which the scaled Bessel routines switch from the power
/// series to the large-argument asymptotic expansion.
const ASYMPTOTIC_SWITCH: f64 = 20.0;

/// `exp(-z) * I0(z)` for `z >= 0`.
pub fn bessel_i0_scaled(z: f64) -> f64 {
    scaled_bessel_i(0, z)
}

/// `exp(-z) * I1(z)` for `z >= 0`.
pub fn bessel_i1_scaled(z: f64) -> f64 {
    scaled_bessel_i(1, z)
}

/// `ln I0(z)`, finite for every `z >= 0`.
pub fn ln_bessel_i0(z: f64) -> f64 {
    z + bessel_i0_scaled(z).ln()
}

/// `ln I1(z)` for `z > 0`; `-inf` at zero.
pub fn ln_bessel_i1(z: f64) -> f64 {
    z + bessel_i1_scaled(z).ln()
}

fn scaled_bessel_i(order: u32, z: f64) -> f64 {
    debug_assert!(z >= 0.0, "modified Bessel argument must be non-negative");
    if z == 0.0 {
        return if order == 0 { 1.0 } else { 0.0 };
    }
    if z < ASYMPTOTIC_SWITCH {
        series(order, z) * (-z).exp()
    } else {
        asymptotic(order, z)
    }
}

/// Power series `sum_k (z/2)^(2k+n) / (k! (k+n)!)`; all terms are positive.
fn series(order: u32, z: f64) -> f64 {
    let half = 0.5 * z;
    let q = half * half;
    let mut term = if order == 0 { 1.0 } else { half };
    let mut sum = term;
    let nu = order as f64;
    let mut k = 1.0;
    loop {
        term *= q / (k * (k + nu));
        sum += term;
        if term < sum * 1e-17 {
            return sum;
        }
        k += 1.0;
    }
}

/// Hankel expansion `exp(-z) I_n(z) ~ (2 pi z)^(-1/2) sum_k (-1)^k a_k(n) / z^k`.
fn asymptotic(order: u32, z: f64) -> f64 {
    let mu = 4.0 * (order as f64).powi(2);
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0_f64;
    while k < 60.0 {
        let odd = 2.0 * k - 1.0;
        let next = -term * (mu - odd * odd) / (k * 8.0 * z);
        if next.abs() >= term.abs() {
            break;
        }
        term = next;
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
        k += 1.0;
    }
    sum / (2.0 * std::f64::consts::PI * z).sqrt()
}

/// Natural log of the Poisson probability `P(k | mu)`.
pub fn ln_poisson(k: u32, mu: f64) -> f64 {
    if mu == 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    let k = k as f64;
    k * mu.ln() - mu - ln_gamma(k + 1.0)
}

pub fn poisson_pmf(k: u32, mu: f64) -> f64 {
    ln_poisson(k, mu).exp()
}

/// A `K` with `sum_{k>K} Poisson(k | mu) < tail`, at most one past the
/// smallest such `K`.
pub fn poisson_truncation(mu: f64, tail: f64) -> u32 {
    if mu == 0.0 {
        return 0;
    }
    let mut k = 0u32;
    let mut cdf = 0.0;
    loop {
        cdf += poisson_pmf(k, mu);
        // Past the mode the tail is bounded by a geometric series, which
        // still works once `cdf` has rounded to one.
        let ratio = mu / (k + 2) as f64;
        let tail_bound = if ratio < 1.0 {
            poisson_pmf(k + 1, mu) / (1.0 - ratio)
        } else {
            f64::INFINITY
        };
        if cdf > 1.0 - tail || tail_bound < tail || k > 10_000 {
            return k;
        }
        k += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Reference values from scipy.special.i0e / i1e.
    const I0E: [(f64, f64); 6] = [
        (0.1, 0.9071009257823011),
        (1.0, 0.46575960759364043),
        (5.0, 0.18354081260932834),
        (19.9, 0.09000858886438959),
        (20.1, 0.08955376362061344),
        (250.0, 0.025243969387054754),
    ];
    const I1E: [(f64, f64); 6] = [
        (0.1, 0.045298446808809324),
        (1.0, 0.2079104153497085),
        (5.0, 0.16397226694454234),
        (19.9, 0.08771710213170608),
        (20.1, 0.0872968518432016),
        (250.0, 0.025193430757117306),
    ];

    #[test]
    fn scaled_bessel_matches_reference_on_both_branches() {
        for (z, want) in I0E {
            let got = bessel_i0_scaled(z);
            assert!(((got - want) / want).abs() < 1e-13, "i0e({z}) = {got}, want {want}");
        }
        for (z, want) in I1E {
            let got = bessel_i1_scaled(z);
            assert!(((got - want) / want).abs() < 1e-13, "i1e({z}) = {got}, want {want}");
        }
    }

    #[test]
    fn branches_agree_at_switch_point() {
        for order in 0..2 {
            let z = ASYMPTOTIC_SWITCH;
            let s = series(order, z) * (-z).exp();
            let a = asymptotic(order, z);
            assert!(((s - a) / s).abs() < 1e-14);
        }
    }

    #[test]
    fn log_bessel_is_finite_for_huge_arguments() {
        // 2 sqrt(x mu / G) with x = 6.5e4, mu = 20, G = 1 is about 2280.
        let l = ln_bessel_i1(2280.0);
        assert!(l.is_finite() && l > 2270.0);
        assert_eq!(bessel_i0_scaled(0.0), 1.0);
        assert_eq!(bessel_i1_scaled(0.0), 0.0);
    }

    #[test]
    fn poisson_truncation_reaches_tail() {
        let k = poisson_truncation(1.0, 1e-12);
        let cdf: f64 = (0..=k).map(|j| poisson_pmf(j, 1.0)).sum();
        let cdf_prev: f64 = (0..k).map(|j| poisson_pmf(j, 1.0)).sum();
        assert!(cdf > 1.0 - 1e-12 && cdf_prev <= 1.0 - 1e-12);
        assert_eq!(poisson_truncation(0.0, 1e-12), 0);
    }

    #[test]
    fn poisson_truncation_below_double_resolution() {
        // 1 - 1e-16 is not reachable by summing the pmf in f64.
        for mu in [0.1, 0.5, 1.0, 3.0] {
            let k = poisson_truncation(mu, 1e-16);
            assert!(k < 40, "mu {mu}: {k}");
            let tail: f64 = (k + 1..k + 60).map(|j| poisson_pmf(j, mu)).sum();
            assert!(tail < 1e-16);
        }
    }
}
