//! Acceptance metrics and the one-shot `reproduce` run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use emccd_pnr::calibration::{
    correct_frame, estimate_intensity_map, fit_noise, fit_photon_model, initial_mu_f, initial_noise_guess,
    CorrectionAccumulator, CorrectionImage, CountHistogram, FitOptions,
};
use emccd_pnr::correlation::{
    auto_convolution, cross_convolution, default_signal_region, snr, CorrelationMap, Method, QuantumAccumulator,
    SnrRow,
};
use emccd_pnr::distributions::{noise_pmf, pgn_pmf, DiscretePmf, NoiseParams, Support};
use emccd_pnr::simulator::{frame_rng, Camera, CameraConfig, FrameGenerator, PhotonSource, SpdcSource};
use emccd_pnr::special::poisson_pmf;
use emccd_pnr::thresholding::{
    count_photons, Baseline, PhotonFrame, PosteriorEngine, ThresholdMap, DEFAULT_CUTOFF,
};
use emccd_pnr::{Frame, FrameStack, FrameTag, IntensityMap, Region};
use log::info;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::commands::{self, CountInputs, Counter};
use crate::config::{PipelineConfig, SourceKind};
use crate::error::{CliError, Result, StageExt};
use crate::format;

const BATCH: usize = 64;

/// Problem sizes of one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scale {
    pub name: &'static str,
    /// Side and frame count of the distribution-fidelity stacks.
    pub fidelity_side: usize,
    pub fidelity_frames: usize,
    /// Frames per stack of the photon-fit checks.
    pub photon_frames: usize,
    /// Frames per photon level of the classification check.
    pub classify_frames: usize,
    /// Frames of the SPDC stacks.
    pub spdc_frames: usize,
}

impl Scale {
    /// The sizes the acceptance criteria are stated at.
    pub const FULL: Scale = Scale {
        name: "full",
        fidelity_side: 128,
        fidelity_frames: 5000,
        photon_frames: 1000,
        classify_frames: 150,
        spdc_frames: 5000,
    };

    /// A run that fits in a couple of minutes.
    pub const DESK: Scale = Scale {
        name: "desk",
        fidelity_side: 64,
        fidelity_frames: 300,
        photon_frames: 200,
        classify_frames: 30,
        spdc_frames: 1000,
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub id: u32,
    pub name: String,
    pub pass: bool,
    pub metrics: BTreeMap<String, f64>,
}

impl Criterion {
    fn new(id: u32, name: &str) -> Self {
        Criterion {
            id,
            name: name.into(),
            pass: true,
            metrics: BTreeMap::new(),
        }
    }

    fn metric(&mut self, key: impl Into<String>, value: f64) -> &mut Self {
        self.metrics.insert(key.into(), value);
        self
    }

    /// Records `value` and fails the criterion unless `ok`.
    fn check(&mut self, key: impl Into<String>, value: f64, ok: bool) -> &mut Self {
        self.pass &= ok;
        self.metric(key, value)
    }

    /// `PASS 4 threshold reference: key=value ...`.
    pub fn line(&self) -> String {
        let metrics: Vec<String> = self.metrics.iter().map(|(k, v)| format!("{k}={v:.6}")).collect();
        format!(
            "{} {} {}: {}",
            if self.pass { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            metrics.join(" ")
        )
    }
}

fn seed_for(seed: u64, id: u32) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1000 * id as u64)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

/// Streams `n` frames of `gen` in parallel batches.
fn for_each_frame(gen: &FrameGenerator, n: usize, mut each: impl FnMut(&Frame) -> Result<()>) -> Result<()> {
    let mut start = 0;
    while start < n {
        let len = BATCH.min(n - start);
        for f in gen.frames(start as u64, len) {
            each(&f)?;
        }
        start += len;
    }
    Ok(())
}

/// Histogram of raw counts minus the camera offset.
fn offset_histogram(gen: &FrameGenerator, n: usize) -> Result<CountHistogram> {
    let offset = gen.camera().config().offset;
    let mut h = CountHistogram::new();
    for_each_frame(gen, n, |f| {
        for v in &f.values {
            h.add(v - offset);
        }
        Ok(())
    })?;
    Ok(h)
}

/// Total variation between a histogram and a pmf.
pub fn tv_distance(hist: &CountHistogram, pmf: &DiscretePmf) -> f64 {
    let n = hist.total() as f64;
    let lo = hist.origin().min(pmf.origin());
    let hi = hist.end().max(pmf.end());
    0.5 * (lo..hi).map(|x| (hist.get(x) as f64 / n - pmf.get(x)).abs()).sum::<f64>()
}

fn generator(cfg: CameraConfig, source: PhotonSource, seed: u64) -> Result<FrameGenerator> {
    FrameGenerator::new(Camera::new(cfg).stage("simulate")?, source, seed).stage("simulate")
}

/// Dark histogram of the fidelity stack, shared by criteria 1 and 2.
pub fn fidelity_dark_histogram(scale: &Scale, seed: u64) -> Result<CountHistogram> {
    let side = scale.fidelity_side;
    let cfg = CameraConfig::new(side, side, NoiseParams::reference());
    offset_histogram(&generator(cfg, PhotonSource::Dark, seed_for(seed, 1))?, scale.fidelity_frames)
}

pub fn criterion_1(scale: &Scale, seed: u64, dark: &CountHistogram) -> Result<Criterion> {
    let mut c = Criterion::new(1, "distribution fidelity");
    let noise = NoiseParams::reference();
    let d = tv_distance(dark, &noise_pmf(&noise, Support::Full).stage("noise pmf")?);
    c.check("tv_dark", d, d < 0.02);

    let side = scale.fidelity_side;
    let spot = IntensityMap::gaussian_spot(side, side, side as f64 / 2.0, side as f64 / 2.0, side as f64 / 6.0);
    let mu_f = 2000.0 * (side * side) as f64 / (128.0 * 128.0);
    let cfg = CameraConfig::new(side, side, noise);
    let gen = FrameGenerator::illuminated(Camera::new(cfg).stage("simulate")?, &spot, mu_f, seed_for(seed, 1) + 1)
        .stage("simulate")?;
    let lit = offset_histogram(&gen, scale.fidelity_frames)?;
    let model = pgn_pmf(mu_f, &spot, &noise, Support::Full).stage("pgn pmf")?;
    let d = tv_distance(&lit, &model);
    c.check("tv_illuminated", d, d < 0.02);
    c.metric("mu_f", mu_f);
    Ok(c)
}

/// Bins with at least this many events are held to the residual band.
pub const RESIDUAL_MIN_EVENTS: u64 = 2500;

pub fn criterion_2(dark: &CountHistogram) -> Result<Criterion> {
    let mut c = Criterion::new(2, "noise-fit recovery");
    let truth = NoiseParams::reference();
    let init = initial_noise_guess(dark, truth.gain.n_r, truth.gain.mean_gain()).stage("noise fit")?;
    let fit = fit_noise(dark, &init, &FitOptions::default()).stage("noise fit")?;
    let sigma = fit.value("sigma_n").expect("noise fit has sigma_n");
    let p_cic = fit.value("p_cic").expect("noise fit has p_cic");
    c.check("sigma_n_rel_err", rel(sigma, truth.sigma_n), rel(sigma, truth.sigma_n) <= 0.02);
    c.check("p_cic_rel_err", rel(p_cic, truth.p_cic), rel(p_cic, truth.p_cic) <= 0.05);
    let r = fit.max_abs_residual(RESIDUAL_MIN_EVENTS);
    c.check("max_abs_residual", r, r <= 0.1);
    c.metric("sigma_n", sigma).metric("p_cic", p_cic);
    c.metric("p_cic_std_error", fit.std_error("p_cic").unwrap_or(f64::NAN));
    Ok(c)
}

/// Fitted `mu_f` of a simulated spot stack, corrected with `corr`.
fn fitted_mu_f(
    camera: &CameraConfig,
    spot: &IntensityMap,
    corr: &CorrectionImage,
    mu_f: f64,
    frames: usize,
    seed: u64,
) -> Result<f64> {
    let (w, h) = (camera.width, camera.height);
    let gen = FrameGenerator::illuminated(Camera::new(camera.clone()).stage("simulate")?, spot, mu_f, seed)
        .stage("simulate")?;
    let region = Region::full(w, h);
    let mut hist = CountHistogram::new();
    let mut sum = vec![0.0; w * h];
    for_each_frame(&gen, frames, |f| {
        let f = correct_frame(f, corr).stage("correct")?;
        hist.add_frame(&f, &region);
        sum.iter_mut().zip(&f.values).for_each(|(s, v)| *s += v);
        Ok(())
    })?;
    let total = FrameStack::new(vec![Frame::new(w, h, sum, FrameTag::Corrected).stage("fit photons")?])
        .stage("fit photons")?;
    let map = estimate_intensity_map(&total, &region).stage("fit photons")?;
    let start = initial_mu_f(&hist, &map, &camera.noise, true);
    let fit = fit_photon_model(&hist, &map, &camera.noise, start, &FitOptions::corrected()).stage("fit photons")?;
    Ok(fit.value("mu_f").expect("photon fit has mu_f"))
}

/// Coefficient of determination of the least-squares line through `(x, y)`.
pub fn r_squared(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy * sxy / (sxx * syy)
}

pub fn criterion_3(scale: &Scale, seed: u64) -> Result<Criterion> {
    let mut c = Criterion::new(3, "mu_f recovery and linearity");
    let side = 64;
    let camera = CameraConfig::new(side, side, NoiseParams::reference());
    let spot = IntensityMap::gaussian_spot(side, side, 32.0, 32.0, 8.0);
    let base = seed_for(seed, 3);

    let dark = generator(camera.clone(), PhotonSource::Dark, base)?;
    let mut acc = CorrectionAccumulator::new(side, side);
    for_each_frame(&dark, scale.photon_frames, |f| acc.add(f).stage("calibrate"))?;
    let corr = acc.finish().stage("calibrate")?;

    for (i, mu_f) in [500.0, 2000.0, 8000.0].into_iter().enumerate() {
        let fit = fitted_mu_f(&camera, &spot, &corr, mu_f, scale.photon_frames, base + 1 + i as u64)?;
        let e = rel(fit, mu_f);
        c.check(format!("mu_f_{mu_f}_rel_err"), e, e <= 0.02);
    }

    let exposures: Vec<f64> = (1..=6).map(f64::from).collect();
    let fits = exposures
        .iter()
        .enumerate()
        .map(|(i, e)| fitted_mu_f(&camera, &spot, &corr, 500.0 * e, scale.photon_frames / 2, base + 10 + i as u64))
        .collect::<Result<Vec<_>>>()?;
    let r2 = r_squared(&exposures, &fits);
    c.check("exposure_r_squared", r2, r2 > 0.99);
    let slope_per_exposure = fits.iter().zip(&exposures).map(|(f, e)| f / e).sum::<f64>() / 6.0;
    c.metric("exposure_mu_f_per_unit", slope_per_exposure);
    Ok(c)
}

pub fn criterion_4() -> Result<Criterion> {
    let mut c = Criterion::new(4, "threshold reference");
    let set_at = |gain: f64| -> Result<(i64, i64)> {
        let noise = NoiseParams::reference().with_mean_gain(gain).stage("thresholds")?;
        let engine = PosteriorEngine::new(&noise).stage("thresholds")?;
        let set = engine.thresholds_resolving(0.1, DEFAULT_CUTOFF, 3).stage("thresholds")?;
        let iv = set.interval(2).expect("three photon numbers resolved");
        Ok((iv.left, iv.right))
    };
    let (left, right) = set_at(300.0)?;
    c.check("left_rel_err", rel(left as f64, 550.0), rel(left as f64, 550.0) <= 0.1);
    c.check("right_rel_err", rel(right as f64, 1550.0), rel(right as f64, 1550.0) <= 0.1);
    c.metric("left", left as f64).metric("right", right as f64);
    let (l, r) = set_at(NoiseParams::reference().gain.mean_gain())?;
    c.metric("reference_gain_left", l as f64).metric("reference_gain_right", r as f64);
    Ok(c)
}

pub fn criterion_5() -> Result<Criterion> {
    let mut c = Criterion::new(5, "closed-form posterior moments");
    let noise = NoiseParams::reference().with_mean_gain(300.0).stage("moments")?;
    let engine = PosteriorEngine::new(&noise).stage("moments")?;
    let (mut worst, mut points) = (0.0f64, 0.0);
    let mut worst_region = 0.0f64;
    for mu in [0.1, 0.5, 1.0] {
        let curves = engine.moments(mu, 7000).stage("moments")?;
        for x in (0..=7000).step_by(50) {
            let p = engine.posterior(x, mu).stage("moments")?;
            let m1: f64 = p.iter().enumerate().map(|(k, w)| k as f64 * w).sum();
            let m2: f64 = p.iter().enumerate().map(|(k, w)| (k * k) as f64 * w).sum();
            let (c1, c2) = curves
                .raw_moments(x)
                .ok_or_else(|| CliError::config(format!("no model mass at count {x}")))?;
            worst = worst.max((c1 - m1).abs()).max((c2 - m2).abs());
            points += 1.0;
        }
        let set = engine.thresholds(mu, DEFAULT_CUTOFF).stage("region means")?;
        for k in 0..=set.k_max() {
            let m = engine.region_mean(&set, k).stage("region means")?;
            worst_region = worst_region.max((m - k as f64).abs());
        }
    }
    c.check("max_moment_abs_diff", worst, worst <= 1e-8);
    c.check("max_region_mean_offset", worst_region, worst_region < 0.5);
    c.metric("grid_points", points);
    Ok(c)
}

/// `sum_x max_k Poisson(k | mu) B_k(x)` on the engine's likelihoods.
pub fn bayes_accuracy(engine: &PosteriorEngine, mu: f64) -> f64 {
    let ks: Vec<u32> = (0..=12).collect();
    let end = ks.iter().map(|&k| engine.likelihood(k).end()).max().unwrap_or(0);
    let start = engine.likelihood(0).origin();
    (start..end)
        .map(|x| {
            ks.iter()
                .map(|&k| poisson_pmf(k, mu) * engine.likelihood(k).get(x))
                .fold(0.0, f64::max)
        })
        .sum()
}

/// Fraction of simulated pixels counted as their true photon number, and
/// the number of pixels.
pub fn simulated_accuracy(engine: &PosteriorEngine, mu: f64, frames: usize, seed: u64) -> Result<(f64, usize)> {
    let (w, h) = (32, 32);
    let noise = *engine.model().params();
    let intensity = IntensityMap::uniform(w, h);
    let mu_f = mu * (w * h) as f64;
    let cfg = CameraConfig::new(w, h, noise);
    let offset = cfg.offset;
    let gen = FrameGenerator::illuminated(Camera::new(cfg).stage("simulate")?, &intensity, mu_f, seed)
        .stage("simulate")?;
    let map = ThresholdMap::build_with(engine, &intensity, mu_f, DEFAULT_CUTOFF).stage("threshold map")?;
    let hits = (0..frames as u64)
        .into_par_iter()
        .map(|i| {
            let (f, truth) = gen.frame_with_truth(i);
            let shifted = Frame::new(w, h, f.values.iter().map(|v| v - offset).collect(), FrameTag::Corrected)?;
            let est = count_photons(&shifted, &map)?;
            Ok(est.values.iter().zip(&truth).filter(|(a, b)| a == b).count())
        })
        .collect::<emccd_pnr::Result<Vec<_>>>()
        .stage("count")?;
    let n = frames * w * h;
    Ok((hits.iter().sum::<usize>() as f64 / n as f64, n))
}

pub fn criterion_6(scale: &Scale, seed: u64) -> Result<Criterion> {
    let mut c = Criterion::new(6, "classification quality");
    let engine = |g: f64| -> Result<PosteriorEngine> {
        PosteriorEngine::new(&NoiseParams::reference().with_mean_gain(g).stage("engine")?).stage("engine")
    };
    let (e300, e600) = (engine(300.0)?, engine(600.0)?);
    let base = seed_for(seed, 6);
    for (i, mu) in [0.1, 0.5, 1.0].into_iter().enumerate() {
        let (a300, n) = simulated_accuracy(&e300, mu, scale.classify_frames, base + i as u64)?;
        let bayes = bayes_accuracy(&e300, mu);
        let gap = (a300 - bayes).abs();
        c.check(format!("mu_{mu}_bayes_gap"), gap, gap <= 0.05);
        c.metric(format!("mu_{mu}_accuracy_g300"), a300);
        let (a600, _) = simulated_accuracy(&e600, mu, scale.classify_frames, base + i as u64)?;
        let se = (a300 * (1.0 - a300) / n as f64).sqrt();
        c.check(format!("mu_{mu}_accuracy_g600"), a600, a600 >= a300 - 3.0 * se);
    }
    Ok(c)
}

/// `C(s) = sum_r a(r) b(s - r)` by direct summation.
pub fn brute_convolution(a: &PhotonFrame, b: &PhotonFrame) -> Vec<f64> {
    let (w, h) = (a.width, a.height);
    let lw = 2 * w - 1;
    let mut out = vec![0.0; lw * (2 * h - 1)];
    for y1 in 0..h {
        for x1 in 0..w {
            let va = a.get(x1, y1) as f64;
            if va == 0.0 {
                continue;
            }
            for y2 in 0..h {
                for x2 in 0..w {
                    out[(y1 + y2) * lw + x1 + x2] += va * b.get(x2, y2) as f64;
                }
            }
        }
    }
    out
}

pub fn criterion_7(seed: u64) -> Result<Criterion> {
    let mut c = Criterion::new(7, "convolution exactness");
    let mut worst = 0.0f64;
    for side in [16, 32] {
        for i in 0..50u64 {
            let mut rng = frame_rng(seed_for(seed, 7) + side as u64, i);
            let mut frame = || PhotonFrame {
                width: side,
                height: side,
                values: (0..side * side).map(|_| rng.random_range(0..6)).collect(),
            };
            let (a, b) = (frame(), frame());
            let auto = auto_convolution(&a).stage("convolution")?;
            let cross = cross_convolution(&a, &b).stage("convolution")?;
            for (fft, exact) in [(auto.values, brute_convolution(&a, &a)), (cross.values, brute_convolution(&a, &b))] {
                for (u, v) in fft.iter().zip(&exact) {
                    worst = worst.max((u - v).abs());
                }
            }
        }
    }
    c.check("max_abs_diff", worst, worst <= 1e-9);
    Ok(c)
}

/// Side, gain and source layout of the SPDC checks.
pub const SPDC_SIDE: usize = 64;
pub const SPDC_GAIN: f64 = 300.0;
pub const SPDC_ENVELOPE: f64 = 10.0;
/// 2048 photons per frame, 0.5 per pixel on average.
pub const SPDC_PHOTONS: f64 = 2048.0;

pub fn spdc_methods() -> Vec<Method> {
    let mut m = vec![Method::Sigma { n: 3.0 }];
    m.extend((1..=4).map(|k| Method::Photon { k }));
    m
}

struct Track {
    method: Method,
    acc: QuantumAccumulator,
    snapshots: Vec<CorrelationMap>,
    /// Signal-region sum over all pairs so far, recorded every `batch` pairs.
    cumulative: Vec<f64>,
}

/// Simulates an SPDC stack, counts it with every method and accumulates
/// correlation maps, snapshotting at `at` frames.
fn spdc_tracks(
    source: SpdcSource,
    frames: usize,
    seed: u64,
    at: &[usize],
    batch: Option<(usize, Region)>,
) -> Result<Vec<Track>> {
    let noise = NoiseParams::reference().with_mean_gain(SPDC_GAIN).stage("spdc")?;
    let camera = CameraConfig::new(SPDC_SIDE, SPDC_SIDE, noise);
    let offset = camera.offset;
    let gen = generator(camera, PhotonSource::Spdc(source), seed)?;
    let engine = PosteriorEngine::new(&noise).stage("spdc")?;
    let c = SPDC_SIDE as f64 / 2.0;
    let truth = IntensityMap::gaussian_spot(SPDC_SIDE, SPDC_SIDE, c, c, SPDC_ENVELOPE);
    let corr = CorrectionImage::new(
        SPDC_SIDE,
        SPDC_SIDE,
        vec![offset + engine.model().mean(); SPDC_SIDE * SPDC_SIDE],
    )
    .stage("spdc")?;
    let counters = spdc_methods()
        .into_iter()
        .map(|m| {
            let counter = Counter::new(
                Some(m),
                &engine,
                &truth,
                Region::full(SPDC_SIDE, SPDC_SIDE),
                SPDC_PHOTONS,
                DEFAULT_CUTOFF,
                Baseline::FrameMean,
            )?;
            Ok((m, counter))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut tracks = counters
        .iter()
        .map(|(m, _)| {
            Ok(Track {
                method: *m,
                acc: QuantumAccumulator::new(SPDC_SIDE, SPDC_SIDE).stage("correlate")?,
                snapshots: Vec::new(),
                cumulative: Vec::new(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut start = 0;
    while start < frames {
        let len = BATCH.min(frames - start);
        let counted = gen
            .frames(start as u64, len)
            .par_iter()
            .map(|f| {
                let f = correct_frame(f, &corr).stage("correct")?;
                counters.iter().map(|(_, c)| c.count(&f)).collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        for per_method in counted {
            for (t, p) in tracks.iter_mut().zip(per_method) {
                t.acc.push(&p).stage("correlate")?;
                if at.contains(&t.acc.frames()) {
                    t.snapshots.push(t.acc.map(t.method).stage("correlate")?);
                }
                if let Some((b, region)) = batch {
                    if t.acc.pairs() > 0 && t.acc.pairs() % b == 0 {
                        let m = t.acc.map(t.method).stage("correlate")?;
                        let sum: f64 = region.indices(m.width).map(|i| m.values[i]).sum();
                        t.cumulative.push(sum / region.pixel_count() as f64 * t.acc.pairs() as f64);
                    }
                }
            }
        }
        start += len;
    }
    Ok(tracks)
}

fn spdc_source(pairs: f64, background: f64) -> SpdcSource {
    let c = SPDC_SIDE as f64 / 2.0;
    SpdcSource {
        pairs_per_frame: pairs,
        sigma_sum: 1.0,
        envelope_center: (c, c),
        envelope_width: SPDC_ENVELOPE,
        background_per_frame: background,
    }
}

/// Criterion 8 and its frames-versus-SNR table.
pub fn criterion_8(scale: &Scale, seed: u64) -> Result<(Criterion, Vec<SnrRow>)> {
    let mut c = Criterion::new(8, "end-to-end SNR gain");
    let n = scale.spdc_frames;
    let mut at: Vec<usize> = [n / 8, n / 4, n / 2, n].into_iter().filter(|&k| k >= 2).collect();
    at.dedup();
    let tracks = spdc_tracks(spdc_source(SPDC_PHOTONS / 2.0, 0.0), n, seed_for(seed, 8), &at, None)?;
    let signal = default_signal_region(tracks[0].snapshots.last().expect("final snapshot")).stage("snr")?;
    let mut rows = Vec::new();
    for (i, &frames) in at.iter().enumerate() {
        for t in &tracks {
            let r = snr(&t.snapshots[i], Some(signal)).stage("snr")?;
            rows.push(SnrRow {
                n_frames: frames,
                method: t.method.to_string(),
                snr: r.snr,
                signal_mean: r.signal_mean,
                floor_mean: r.floor_mean,
                floor_std: r.floor_std,
            });
        }
    }
    let last: Vec<f64> = rows[rows.len() - tracks.len()..].iter().map(|r| r.snr).collect();
    for (t, s) in tracks.iter().zip(&last) {
        c.metric(format!("snr_{}", t.method), *s);
    }
    let (sigma, k) = (last[0], &last[1..]);
    let ratio = k[1] / sigma;
    c.check("ratio_2pT_3sigmaT", ratio, ratio > 1.5);
    let monotone = k.windows(2).all(|w| w[1] >= w[0]);
    c.check("non_decreasing_in_k", f64::from(u8::from(monotone)), monotone);
    let (g21, g43) = (k[1] / k[0], k[3] / k[2]);
    c.metric("gain_2pT_over_1pT", g21);
    c.check("gain_4pT_over_3pT", g43, g43 < g21);
    c.metric("signal_x0", signal.x0 as f64).metric("signal_y0", signal.y0 as f64);
    Ok((c, rows))
}

/// Pairs per batch of the null test's standard error.
pub const NULL_BATCH: usize = 50;

pub fn criterion_9(scale: &Scale, seed: u64) -> Result<Criterion> {
    let mut c = Criterion::new(9, "null correctness");
    let centre = SPDC_SIDE - 1;
    let region = Region::new(centre - 3, centre - 3, 7, 7);
    let n = scale.spdc_frames;
    let tracks = spdc_tracks(
        spdc_source(0.0, SPDC_PHOTONS),
        n,
        seed_for(seed, 9),
        &[n],
        Some((NULL_BATCH, region)),
    )?;
    for t in &tracks {
        let map = t.snapshots.last().expect("final snapshot");
        let mean = region.indices(map.width).map(|i| map.values[i]).sum::<f64>() / region.pixel_count() as f64;
        let mut prev = 0.0;
        let means: Vec<f64> = t
            .cumulative
            .iter()
            .map(|&s| {
                let m = (s - prev) / NULL_BATCH as f64;
                prev = s;
                m
            })
            .collect();
        let k = means.len() as f64;
        let mm = means.iter().sum::<f64>() / k;
        let sd = (means.iter().map(|v| (v - mm).powi(2)).sum::<f64>() / (k - 1.0)).sqrt();
        let se = sd / k.sqrt();
        c.metric(format!("mean_{}", t.method), mean);
        c.check(format!("z_{}", t.method), mean / se, (mean / se).abs() < 3.0);
    }
    Ok(c)
}

pub fn criterion_10(a: &Path, b: &Path) -> Result<Criterion> {
    let mut c = Criterion::new(10, "determinism");
    let (fa, fb) = (files_under(a)?, files_under(b)?);
    let mut differing = 0;
    for rel_path in fa.iter().filter(|p| fb.contains(p)) {
        let x = std::fs::read(a.join(rel_path)).map_err(|e| CliError::io(&a.join(rel_path), e))?;
        let y = std::fs::read(b.join(rel_path)).map_err(|e| CliError::io(&b.join(rel_path), e))?;
        differing += usize::from(x != y);
    }
    let missing = fa.len().abs_diff(fb.len()) + fa.iter().filter(|p| !fb.contains(p)).count();
    c.metric("files", fa.len() as f64);
    c.check("differing_files", (differing + missing) as f64, differing + missing == 0 && !fa.is_empty());
    Ok(c)
}

fn files_under(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(|e| CliError::io(&d, e))? {
            let p = entry.map_err(|e| CliError::io(&d, e))?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).expect("under dir").to_path_buf());
            }
        }
    }
    out.sort();
    Ok(out)
}

fn save_config(cfg: &PipelineConfig, path: &Path) -> Result<()> {
    let text = toml::to_string(cfg).map_err(|e| CliError::config(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// simulate, calibrate, fit-photons, count and correlate through files in
/// `dir`. Returns the headline numbers.
pub fn pipeline(seed: u64, spdc_frames: usize, dir: &Path) -> Result<BTreeMap<String, f64>> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let base = |kind: SourceKind, offset: u64| {
        let mut c = PipelineConfig::default();
        c.seed = seed.wrapping_add(offset);
        c.camera.width = SPDC_SIDE;
        c.camera.height = SPDC_SIDE;
        c.camera.gain = Some(SPDC_GAIN);
        c.source.kind = kind;
        c
    };
    let mut m = BTreeMap::new();

    let mut dark = base(SourceKind::Dark, 0);
    dark.source.n_frames = 500;
    save_config(&dark, &dir.join("dark.toml"))?;
    let dark_stack = commands::simulate(&dark, &dir.join("dark"))?;
    let cal_dir = dir.join("calibration");
    let cal = commands::calibrate(&dark, &dark_stack[0], &cal_dir)?;
    m.insert("fit_sigma_n".into(), cal.noise.params.sigma_n);
    m.insert("fit_p_cic".into(), cal.noise.params.p_cic);
    m.insert("fit_gain".into(), cal.noise.params.gain.mean_gain());
    let correction = cal_dir.join(commands::CORRECTION_FILE);
    let noise = cal_dir.join(commands::NOISE_FILE);

    let mut spot = base(SourceKind::Spot, 1);
    spot.source.mu_f = 2000.0;
    spot.source.n_frames = 300;
    save_config(&spot, &dir.join("spot.toml"))?;
    let spot_stack = commands::simulate(&spot, &dir.join("spot"))?;
    let fit = commands::fit_photons(&spot, &spot_stack[0], &correction, Some(&noise), &dir.join("spot_fit"))?;
    m.insert("spot_mu_f_true".into(), spot.source.mu_f);
    m.insert("spot_mu_f_fit".into(), fit.result.mu_f);

    let mut spdc = base(SourceKind::Spdc, 2);
    spdc.source.n_frames = spdc_frames;
    spdc.source.pairs_per_frame = SPDC_PHOTONS / 2.0;
    spdc.source.envelope_width = SPDC_ENVELOPE;
    spdc.analysis.methods = spdc_methods().iter().map(Method::to_string).collect();
    spdc.analysis.frame_counts = vec![spdc_frames / 4, spdc_frames / 2, spdc_frames];
    save_config(&spdc, &dir.join("spdc.toml"))?;
    let spdc_stack = commands::simulate(&spdc, &dir.join("spdc"))?;
    let spdc_fit_dir = dir.join("spdc_fit");
    let sfit = commands::fit_photons(&spdc, &spdc_stack[0], &correction, Some(&noise), &spdc_fit_dir)?;
    m.insert("spdc_mu_f_true".into(), SPDC_PHOTONS);
    m.insert("spdc_mu_f_fit".into(), sfit.result.mu_f);
    let intensity = spdc_fit_dir.join(commands::INTENSITY_FILE);
    let inputs = CountInputs {
        correction: &correction,
        intensity: &intensity,
        noise: Some(&noise),
        mu_f: sfit.result.mu_f,
    };
    commands::count(&spdc, &spdc_stack[0], &inputs, Some(Method::Photon { k: 2 }), &dir.join("count"))?;
    let corr = commands::correlate(&spdc, &spdc_stack[0], Some(&inputs), None, &dir.join("correlation"))?;
    let last = corr.rows.iter().filter(|r| r.n_frames == spdc_frames);
    let snrs: BTreeMap<String, f64> = last.map(|r| (r.method.clone(), r.snr)).collect();
    for (k, v) in &snrs {
        m.insert(format!("snr_{k}"), *v);
    }
    m.insert("snr_ratio_2pT_3sigmaT".into(), snrs["2pT"] / snrs["3sigmaT"]);
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub seed: u64,
    pub scale: String,
    pub pipeline: BTreeMap<String, f64>,
    pub criteria: Vec<Criterion>,
}

pub const SUMMARY_FILE: &str = "summary.json";

/// Runs the file pipeline twice and every criterion at `scale`, writing
/// `summary.json`, `snr_table.csv` and a `timings.json` sidecar to `out`.
pub fn reproduce(out: &Path, seed: u64, scale: &Scale) -> Result<Summary> {
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let mut timings: BTreeMap<String, f64> = BTreeMap::new();
    let mut timed = |name: &str, t: Instant| {
        timings.insert(name.to_string(), t.elapsed().as_secs_f64());
    };

    let t = Instant::now();
    let (run_a, run_b) = (out.join("run_a"), out.join("run_b"));
    let pipeline_metrics = pipeline(seed, scale.spdc_frames, &run_a)?;
    pipeline(seed, scale.spdc_frames, &run_b)?;
    timed("pipeline", t);

    let mut criteria = Vec::new();
    let t = Instant::now();
    let dark = fidelity_dark_histogram(scale, seed)?;
    criteria.push(criterion_1(scale, seed, &dark)?);
    criteria.push(criterion_2(&dark)?);
    timed("criteria_1_2", t);
    let t = Instant::now();
    criteria.push(criterion_3(scale, seed)?);
    timed("criterion_3", t);
    let t = Instant::now();
    criteria.push(criterion_4()?);
    criteria.push(criterion_5()?);
    criteria.push(criterion_6(scale, seed)?);
    criteria.push(criterion_7(seed)?);
    timed("criteria_4_to_7", t);
    let t = Instant::now();
    let (c8, rows) = criterion_8(scale, seed)?;
    format::write_csv(&out.join("snr_table.csv"), &rows)?;
    criteria.push(c8);
    criteria.push(criterion_9(scale, seed)?);
    timed("criteria_8_9", t);
    criteria.push(criterion_10(&run_a, &run_b)?);
    for c in &criteria {
        info!("{}", c.line());
    }

    let summary = Summary {
        seed,
        scale: scale.name.into(),
        pipeline: pipeline_metrics,
        criteria,
    };
    format::write_json(&out.join(SUMMARY_FILE), &summary)?;
    format::write_json(&out.join("timings.json"), &timings)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn r_squared_of_a_line_is_one() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert!((r_squared(&x, &[3.0, 5.0, 7.0, 9.0]) - 1.0).abs() < 1e-12);
        assert!(r_squared(&x, &[1.0, 3.0, 2.0, 4.0]) < 0.99);
    }

    #[test]
    fn brute_convolution_of_deltas() {
        let mut a = PhotonFrame {
            width: 3,
            height: 2,
            values: vec![0; 6],
        };
        a.values[1] = 2;
        let mut b = a.clone();
        b.values[1] = 0;
        b.values[5] = 3;
        let c = brute_convolution(&a, &b);
        // (1, 0) + (2, 1) = (3, 1) on a 5-wide lag grid.
        assert_eq!(c[5 + 3], 6.0);
        assert_eq!(c.iter().sum::<f64>(), 6.0);
    }

    #[test]
    fn tv_of_matching_histogram_is_small() {
        let pmf = DiscretePmf::new(-1, vec![0.25, 0.5, 0.25]).unwrap();
        let h = CountHistogram::from_counts(-1, vec![25, 50, 25]);
        assert!(tv_distance(&h, &pmf) < 1e-12);
        let shifted = CountHistogram::from_counts(0, vec![25, 50, 25]);
        assert!((tv_distance(&shifted, &pmf) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn lines_read_pass_or_fail() {
        let mut c = Criterion::new(4, "x");
        c.check("a", 1.0, true);
        assert!(c.line().starts_with("PASS 4 x: a=1.0"));
        c.check("b", 2.0, false);
        assert!(c.line().starts_with("FAIL"));
    }

    #[test]
    fn determinism_check_compares_trees() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        for d in [&a, &b] {
            std::fs::create_dir_all(d.join("sub")).unwrap();
            std::fs::write(d.join("sub/f"), b"same").unwrap();
        }
        assert!(criterion_10(&a, &b).unwrap().pass);
        std::fs::write(b.join("sub/f"), b"diff").unwrap();
        assert!(!criterion_10(&a, &b).unwrap().pass);
        assert!(!criterion_10(&a, &dir.path().join("a/sub")).unwrap().pass);
    }

    #[test]
    fn threshold_reference_is_computed_at_both_gains() {
        let c = criterion_4().unwrap();
        for k in ["left", "right", "reference_gain_left", "reference_gain_right"] {
            assert!(c.metrics.contains_key(k), "{k}");
        }
        assert!(c.metrics["left"] < c.metrics["right"]);
    }

    #[test]
    fn convolution_criterion_passes() {
        assert!(criterion_7(3).unwrap().pass);
    }
}
