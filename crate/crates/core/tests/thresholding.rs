use std::sync::OnceLock;

use emccd_pnr::distributions::{noise_pmf, NoiseParams, Support};
use emccd_pnr::simulator::{Camera, CameraConfig, FrameGenerator};
use emccd_pnr::special::poisson_pmf;
use emccd_pnr::thresholding::*;
use emccd_pnr::{Frame, FrameTag, IntensityMap};
use proptest::prelude::*;

fn params(gain: f64) -> NoiseParams {
    NoiseParams::reference().with_mean_gain(gain).unwrap()
}

fn engine300() -> &'static PosteriorEngine {
    static E: OnceLock<PosteriorEngine> = OnceLock::new();
    E.get_or_init(|| PosteriorEngine::new(&params(300.0)).unwrap())
}

/// `sum_x max_k Poisson(k | mu) B_k(x)` on the engine's own likelihoods.
fn bayes_accuracy(engine: &PosteriorEngine, mu: f64) -> f64 {
    let ks: Vec<u32> = (0..=12).collect();
    let end = ks.iter().map(|&k| engine.likelihood(k).end()).max().unwrap();
    let start = engine.likelihood(0).origin();
    (start..end)
        .map(|x| {
            ks.iter()
                .map(|&k| poisson_pmf(k, mu) * engine.likelihood(k).get(x))
                .fold(0.0, f64::max)
        })
        .sum()
}

/// Fraction of simulated pixels whose count lands in their true photon
/// number's interval.
fn simulated_accuracy(gain: f64, mu: f64, frames: usize, seed: u64) -> (f64, usize) {
    let noise = params(gain);
    let (w, h) = (32, 32);
    let intensity = IntensityMap::uniform(w, h);
    let mu_f = mu * (w * h) as f64;
    let cfg = CameraConfig::new(w, h, noise);
    let offset = cfg.offset;
    let gen = FrameGenerator::illuminated(Camera::new(cfg).unwrap(), &intensity, mu_f, seed).unwrap();
    let map = ThresholdMap::build(&intensity, mu_f, &noise, DEFAULT_CUTOFF).unwrap();
    let (stack, truth) = gen.stack_with_truth(frames).unwrap();
    let (mut hit, mut n) = (0usize, 0usize);
    for (f, t) in stack.iter().zip(&truth) {
        let corrected = Frame::new(w, h, f.values.iter().map(|v| v - offset).collect(), FrameTag::Corrected).unwrap();
        let est = count_photons(&corrected, &map).unwrap();
        hit += est.values.iter().zip(t).filter(|(a, b)| a == b).count();
        n += t.len();
    }
    (hit as f64 / n as f64, n)
}

#[test]
fn classification_is_close_to_bayes_optimal() {
    for &mu in &[0.1, 0.5, 1.0] {
        let (acc, _) = simulated_accuracy(300.0, mu, 150, 11);
        let bayes = bayes_accuracy(engine300(), mu);
        assert!(bayes <= 1.0 + 1e-9);
        assert!((acc - bayes).abs() < 0.05, "mu {mu}: simulated {acc:.4}, Bayes {bayes:.4}");
    }
}

#[test]
fn doubling_the_gain_does_not_hurt() {
    for &mu in &[0.5, 1.0] {
        let (a300, n) = simulated_accuracy(300.0, mu, 150, 5);
        let (a600, _) = simulated_accuracy(600.0, mu, 150, 5);
        let se = (a300 * (1.0 - a300) / n as f64).sqrt();
        assert!(a600 >= a300 - 3.0 * se, "mu {mu}: {a300:.4} at G=300, {a600:.4} at G=600");
    }
}

#[test]
fn region_means_sit_near_their_tag() {
    for gain in [300.0, 600.0] {
        let e = PosteriorEngine::new(&params(gain)).unwrap();
        for mu in [0.1, 0.5, 1.0] {
            let set = e.thresholds(mu, DEFAULT_CUTOFF).unwrap();
            for k in 0..=set.k_max() {
                let m = e.region_mean(&set, k).unwrap();
                assert!((m - k as f64).abs() < 0.5, "G {gain} mu {mu} k {k}: {m}");
            }
        }
    }
}

#[test]
fn two_photon_region_mean_improves_with_gain() {
    let dev = |gain: f64| {
        let e = PosteriorEngine::new(&params(gain)).unwrap();
        let set = e.thresholds(1.0, DEFAULT_CUTOFF).unwrap();
        (e.region_mean(&set, 2).unwrap() - 2.0).abs()
    };
    let (d300, d600) = (dev(300.0), dev(600.0));
    assert!(d600 < d300, "{d300} -> {d600}");
}

#[test]
fn higher_gain_widens_inner_intervals() {
    let e600 = PosteriorEngine::new(&params(600.0)).unwrap();
    for mu in [0.5, 1.0] {
        let a = engine300().thresholds(mu, DEFAULT_CUTOFF).unwrap().intervals();
        let b = e600.thresholds(mu, DEFAULT_CUTOFF).unwrap().intervals();
        assert_eq!(a.len(), b.len());
        // The last interval is open up to saturation in both.
        for (x, y) in a.iter().zip(&b).take(a.len() - 1) {
            assert!(y.right - y.left > x.right - x.left, "mu {mu}: {x:?} vs {y:?}");
        }
    }
}

#[test]
fn dark_tail_above_three_sigma_matches_the_model() {
    let noise = params(300.0);
    let cfg = CameraConfig::new(64, 64, noise);
    let offset = cfg.offset;
    let gen = FrameGenerator::new(Camera::new(cfg).unwrap(), emccd_pnr::simulator::PhotonSource::Dark, 3).unwrap();
    let (mut on, mut n) = (0u64, 0u64);
    for f in gen.frames(0, 100) {
        let fixed: Vec<f64> = f.values.iter().map(|v| v - offset).collect();
        let fr = Frame::new(64, 64, fixed, FrameTag::Corrected).unwrap();
        on += binary_threshold(&fr, &noise, 3.0, &Baseline::Fixed(0.0)).unwrap().total();
        n += 4096;
    }
    let cut = (3.0 * noise.sigma_n).floor() as i64;
    let pmf = noise_pmf(&noise, Support::Full).unwrap();
    let p: f64 = pmf.iter().filter(|&(x, _)| x > cut).map(|(_, m)| m).sum();
    let observed = on as f64 / n as f64;
    let se = (p * (1.0 - p) / n as f64).sqrt();
    assert!((observed - p).abs() < 3.0 * se, "observed {observed:.5}, model {p:.5} (se {se:.5})");
}

#[test]
fn bright_spot_map_is_smooth() {
    let spot = IntensityMap::gaussian_spot(48, 48, 24.0, 24.0, 40.0);
    let map = ThresholdMap::build_with(engine300(), &spot, 2.52e4, DEFAULT_CUTOFF).unwrap();
    let (w, h) = map.dims();
    let k = |x: usize, y: usize| map.set_at(x, y).k_max() as i64;
    for y in 0..h {
        for x in 0..w {
            if x + 1 < w {
                assert!((k(x, y) - k(x + 1, y)).abs() <= 1);
            }
            if y + 1 < h {
                assert!((k(x, y) - k(x, y + 1)).abs() <= 1);
            }
        }
    }
    // A uniform count frame classifies into a smooth photon-number image.
    for count in [200.0, 900.0, 2500.0] {
        let f = Frame::new(w, h, vec![count; w * h], FrameTag::Corrected).unwrap();
        let est = count_photons(&f, &map).unwrap();
        for y in 0..h {
            for x in 0..w - 1 {
                assert!((est.get(x, y) as i64 - est.get(x + 1, y) as i64).abs() <= 1);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn posterior_rows_sum_to_one(x in -60i64..8000, mu in 0.01f64..2.0) {
        let p = engine300().posterior(x, mu).unwrap();
        let s: f64 = p.iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-6);
        prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn mean_photoelectron_is_non_decreasing(mu in 0.05f64..1.5, x0 in 0i64..6000) {
        let curves = engine300().moments(mu, x0 + 400).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for x in (x0..x0 + 400).step_by(4) {
            let (m, _) = curves.at(x).unwrap();
            prop_assert!(m >= prev - 1e-9, "x {}: {} < {}", x, m, prev);
            prev = m;
        }
    }

    #[test]
    fn posterior_keeps_order_after_each_crossing(mu in 0.1f64..1.0) {
        let e = engine300();
        let set = e.thresholds(mu, DEFAULT_CUTOFF).unwrap();
        for iv in set.intervals().iter().skip(1) {
            let right = if iv.k == set.k_max() { set.top_crossing().unwrap_or(iv.right) } else { iv.right };
            let right = right.min(iv.left + 3000);
            for x in (iv.left..right).step_by(7) {
                let p = e.posterior(x, mu).unwrap();
                let k = iv.k as usize;
                prop_assert!(p[k] + 1e-9 >= p[k - 1], "mu {} x {} k {}", mu, x, k);
            }
        }
    }

    #[test]
    fn raising_a_count_never_lowers_its_estimate(mu in 0.05f64..1.0, a in -50.0f64..5000.0, d in 0.0f64..3000.0) {
        let set = engine300().thresholds(mu, DEFAULT_CUTOFF).unwrap();
        prop_assert!(set.classify(a + d) >= set.classify(a));
    }
}
