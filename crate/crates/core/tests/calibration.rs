mod common;

use emccd_pnr::calibration::{
    compute_correction_image, correct, estimate_intensity_map, fit_noise, fit_photon_model, histogram,
    initial_mu_f, initial_noise_guess, CountHistogram, FitOptions,
};
use emccd_pnr::distributions::{noise_pmf, DiscretePmf, NoiseModel, NoiseParams, Support};
use emccd_pnr::frame::pearson;
use emccd_pnr::simulator::{frame_rng, simulate_dark_frames, simulate_frames, CameraConfig};
use emccd_pnr::{Frame, FrameStack, FrameTag, IntensityMap, Region};
use rand_distr::{Binomial, Distribution};

/// Multinomial sample of `n` events from `pmf`.
fn sample_histogram(pmf: &DiscretePmf, n: u64, seed: u64) -> CountHistogram {
    let mut rng = frame_rng(seed, 0);
    let mut left = n;
    let mut mass_left = 1.0;
    let mut h = CountHistogram::new();
    for (x, p) in pmf.iter() {
        if left == 0 || mass_left <= 0.0 {
            break;
        }
        let q = (p / mass_left).clamp(0.0, 1.0);
        let c = Binomial::new(left, q).unwrap().sample(&mut rng);
        h.add_count(x, c);
        left -= c;
        mass_left -= p;
    }
    h
}

fn reference() -> NoiseParams {
    NoiseParams::reference()
}

fn check_within_3se(fit: &emccd_pnr::calibration::FitResult, truth: &NoiseParams) {
    let want = [truth.sigma_n, truth.p_cic, truth.p_ser, truth.gain.p_c];
    for ((name, v), (se, w)) in fit.names.iter().zip(&fit.values).zip(fit.std_errors.iter().zip(want)) {
        assert!((v - w).abs() < 3.0 * se, "{name}: {v} vs {w} (se {se})");
    }
}

#[test]
fn noise_fit_recovers_parameters_from_model_samples() {
    let truth = reference();
    let pmf = noise_pmf(&truth, Support::Full).unwrap();
    let hist = sample_histogram(&pmf, 10_000_000, 1);
    let init = initial_noise_guess(&hist, 552, 20.0).unwrap();
    let fit = fit_noise(&hist, &init, &FitOptions::default()).unwrap();
    assert!(fit.converged);
    assert_eq!(fit.residuals.len(), fit.bins.len());
    check_within_3se(&fit, &truth);
}

#[test]
fn noise_fit_error_shrinks_with_events() {
    let truth = reference();
    let pmf = noise_pmf(&truth, Support::Full).unwrap();
    let mut errs = vec![];
    for n in [1_000_000u64, 10_000_000] {
        let hist = sample_histogram(&pmf, n, 2);
        let init = initial_noise_guess(&hist, 552, 20.0).unwrap();
        let fit = fit_noise(&hist, &init, &FitOptions::default()).unwrap();
        errs.push(fit.std_error("p_cic").unwrap());
        check_within_3se(&fit, &truth);
    }
    assert!(errs[1] < errs[0]);
}

#[test]
fn absent_cic_is_fitted_near_zero() {
    let truth = NoiseParams {
        p_cic: 0.0,
        ..reference()
    };
    let pmf = noise_pmf(&truth, Support::Full).unwrap();
    let hist = sample_histogram(&pmf, 5_000_000, 3);
    let init = initial_noise_guess(&hist, 552, 20.0).unwrap();
    let fit = fit_noise(&hist, &init, &FitOptions::default()).unwrap();
    let (v, se) = (fit.value("p_cic").unwrap(), fit.std_error("p_cic").unwrap());
    assert!(v < 3.0 * se, "p_cic {v} se {se}");
}

#[test]
fn too_few_events_rejected() {
    let pmf = noise_pmf(&reference(), Support::Full).unwrap();
    let hist = sample_histogram(&pmf, 1000, 4);
    assert!(fit_noise(&hist, &reference(), &FitOptions::default()).is_err());
}

#[test]
fn corrected_biased_darks_are_flat_and_fit() {
    let noise = reference().with_mean_gain(300.0).unwrap();
    let rows: Vec<f64> = (0..64).map(|y| 20.0 * (y as f64 / 9.0).sin()).collect();
    let cols: Vec<f64> = (0..64).map(|x| 0.3 * x as f64).collect();
    let cfg = CameraConfig::new(64, 64, noise).with_bias(rows, cols);
    let dark = simulate_dark_frames(&cfg, 2000, 5).unwrap();
    let corr = compute_correction_image(&dark).unwrap();
    let fixed = correct(&dark, &corr).unwrap();

    // Row and column means of the corrected stack agree within 2 sigma.
    let n = fixed.len() as f64;
    let sd = NoiseModel::new(&noise).unwrap().pmf().variance().sqrt();
    let se_line = sd / (64.0 * n).sqrt();
    let mut row_means = vec![0.0; 64];
    let mut col_means = vec![0.0; 64];
    for f in &fixed {
        for y in 0..64 {
            for x in 0..64 {
                let v = f.get(x, y) / (64.0 * n);
                row_means[y] += v;
                col_means[x] += v;
            }
        }
    }
    for m in row_means.iter().chain(&col_means) {
        assert!(m.abs() < 2.0 * se_line * 2f64.sqrt(), "line mean {m} vs se {se_line}");
    }

    // Mode of the corrected histogram on the model axis.
    let level = NoiseModel::new(&noise).unwrap().spurious_mean();
    let on_axis = correct(&dark, &corr.with_dark_level(level)).unwrap();
    let hist = histogram(&on_axis, &Region::full(64, 64)).unwrap();
    let mode = noise_pmf(&noise, Support::Full).unwrap().mode();
    assert!((hist.mode() - mode).abs() <= 1, "{} vs {mode}", hist.mode());

    // Centered fit on the plain corrected counts.
    let hist = histogram(&fixed, &Region::full(64, 64)).unwrap();
    let init = initial_noise_guess(&hist, 552, 300.0).unwrap();
    let fit = fit_noise(&hist, &init, &FitOptions::corrected()).unwrap();
    let sigma = fit.value("sigma_n").unwrap();
    assert!((sigma - 14.19).abs() / 14.19 < 0.02, "sigma {sigma}");
    assert_eq!(fit.residuals.len(), fit.bins.len());
}

#[test]
fn intensity_map_edge_cases() {
    let uniform = FrameStack::new(vec![Frame::new(2, 2, vec![3.0; 4], FrameTag::Corrected).unwrap(); 3]).unwrap();
    let m = estimate_intensity_map(&uniform, &Region::full(2, 2)).unwrap();
    assert!(m.values().iter().all(|&v| (v - 0.25).abs() < 1e-12));

    let mut v = vec![-1.0; 4];
    v[2] = 5.0;
    let bright = FrameStack::new(vec![Frame::new(2, 2, v, FrameTag::Corrected).unwrap()]).unwrap();
    let m = estimate_intensity_map(&bright, &Region::full(2, 2)).unwrap();
    assert_eq!(m.values(), &[0.0, 0.0, 1.0, 0.0]);

    let zero = FrameStack::new(vec![Frame::zeros(2, 2, FrameTag::Corrected)]).unwrap();
    assert!(estimate_intensity_map(&zero, &Region::full(2, 2)).is_err());
}

fn spot_setup(mu_f: f64, n_frames: usize, seed: u64) -> (emccd_pnr::FrameStack, IntensityMap, NoiseParams) {
    let noise = reference().with_mean_gain(300.0).unwrap();
    let cfg = CameraConfig::new(64, 64, noise);
    let spot = IntensityMap::gaussian_spot(64, 64, 32.0, 32.0, 8.0);
    let dark = simulate_dark_frames(&cfg, 200, seed + 1000).unwrap();
    let corr = compute_correction_image(&dark).unwrap();
    let lit = simulate_frames(&spot, mu_f, &cfg, n_frames, seed).unwrap();
    (correct(&lit, &corr).unwrap(), spot, noise)
}

/// Histogram holding the rounded expected count of every bin.
fn expected_histogram(pmf: &DiscretePmf, n: f64) -> CountHistogram {
    let mut h = CountHistogram::new();
    for (x, p) in pmf.iter() {
        h.add_count(x, (p * n).round() as u64);
    }
    h
}

#[test]
fn photon_fit_recovers_expected_histogram() {
    let noise = reference().with_mean_gain(300.0).unwrap();
    let spot = IntensityMap::gaussian_spot(32, 32, 16.0, 16.0, 5.0);
    let pmf = emccd_pnr::distributions::pgn_pmf(300.0, &spot, &noise, Support::Full).unwrap();
    let hist = expected_histogram(&pmf, 5e7);
    let start = initial_mu_f(&hist, &spot, &noise, false);
    let fit = fit_photon_model(&hist, &spot, &noise, start, &FitOptions::default()).unwrap();
    let mu = fit.value("mu_f").unwrap();
    assert!((mu - 300.0).abs() / 300.0 < 0.02, "mu_f {mu}");
    let pc = fit.value("p_c").unwrap();
    assert!((pc - noise.gain.p_c).abs() / noise.gain.p_c < 0.005, "p_c {pc}");
    assert!(fit.objective_history.windows(2).all(|w| w[1] < w[0]));
    assert!(fit.at_bound.is_empty());
}

#[test]
fn simulated_spot_map_and_region_invariance() {
    let (fixed, spot, noise) = spot_setup(1500.0, 300, 6);
    let map = estimate_intensity_map(&fixed, &Region::full(64, 64)).unwrap();
    assert!(pearson(map.values(), spot.values()) > 0.99);

    // A 48x48 window holds > 99.9% of the spot.
    let mut fits = vec![];
    for region in [Region::full(64, 64), Region::new(8, 8, 48, 48)] {
        let map = estimate_intensity_map(&fixed, &region).unwrap();
        let hist = histogram(&fixed, &region).unwrap();
        let start = initial_mu_f(&hist, &map, &noise, true);
        let fit = fit_photon_model(&hist, &map, &noise, start, &FitOptions::corrected()).unwrap();
        assert!(fit.objective_history.windows(2).all(|w| w[1] < w[0]));
        fits.push(fit.value("mu_f").unwrap());
    }
    assert!((fits[0] - fits[1]).abs() / fits[0] < 0.01, "{fits:?}");
}

#[test]
fn dark_stack_gives_mu_f_near_zero() {
    let (fixed, _, noise) = spot_setup(0.0, 100, 7);
    let hist = histogram(&fixed, &Region::full(64, 64)).unwrap();
    let map = IntensityMap::uniform(64, 64);
    let fit = fit_photon_model(&hist, &map, &noise, 10.0, &FitOptions::corrected()).unwrap();
    let (mu, se) = (fit.value("mu_f").unwrap(), fit.std_error("mu_f").unwrap());
    assert!(mu < 3.0 * se, "mu_f {mu} se {se}");
}

#[test]
fn unnormalized_map_rejected() {
    let h = CountHistogram::from_counts(0, vec![10, 5, 1]);
    let map = IntensityMap::uniform(2, 2);
    let noise = reference();
    assert!(fit_photon_model(&h, &map, &noise, 0.0, &FitOptions::default()).is_err());
    let bad = IntensityMap::from_weights(2, 2, vec![1.0; 4]).unwrap();
    assert!(fit_photon_model(&h, &bad, &noise, -1.0, &FitOptions::default()).is_err());
}
