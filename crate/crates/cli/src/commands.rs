//! The subcommands, as library functions writing into an output directory.

use std::path::{Path, PathBuf};

use emccd_pnr::calibration::{
    estimate_intensity_map, fit_noise, fit_photon_model, initial_mu_f, initial_noise_guess, CorrectionAccumulator,
    CorrectionImage, CountHistogram, FitOptions, FitResult,
};
use emccd_pnr::correlation::{quantum_correlation, snr_vs_frames, CorrelationMap, Method, SnrRow};
use emccd_pnr::distributions::NoiseParams;
use emccd_pnr::simulator::{Camera, FrameGenerator, PhotonSource};
use emccd_pnr::thresholding::{binary_threshold, count_photons, Baseline, PhotonFrame, PosteriorEngine, ThresholdMap};
use emccd_pnr::{Frame, FrameStack, FrameTag, IntensityMap, Region};
use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{PipelineConfig, SourceKind};
use crate::error::{CliError, Result, StageExt};
use crate::format::{self, Image, StackHeader, StackReader, StackWriter};

/// Frames generated per parallel batch when simulating.
const BATCH: usize = 64;

pub const STACK_FILE: &str = "stack.emccd";
pub const CORRECTION_FILE: &str = "correction.img";
pub const NOISE_FILE: &str = "noise_fit.json";
pub const DARK_HISTOGRAM_FILE: &str = "dark_histogram.csv";
pub const INTENSITY_FILE: &str = "intensity.img";
pub const PHOTON_FIT_FILE: &str = "photon_fit.json";
pub const PHOTON_HISTOGRAM_FILE: &str = "photon_histogram.csv";
pub const PHOTONS_FILE: &str = "photons.emccd";
pub const THRESHOLDS_FILE: &str = "thresholds.map";
pub const SNR_FILE: &str = "snr.csv";

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Noise parameters and the fit they came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseFile {
    pub params: NoiseParams,
    pub fit: Option<FitResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhotonFitFile {
    pub mu_f: f64,
    pub p_c: f64,
    pub mean_gain: f64,
    pub region: Region,
    pub fit: FitResult,
}

#[derive(Debug, Serialize)]
struct HistogramRow {
    count: i64,
    events: u64,
    p_emp: f64,
    p_model: f64,
    residual: f64,
}

fn histogram_rows(fit: &FitResult) -> impl Iterator<Item = HistogramRow> + '_ {
    (0..fit.bins.len()).map(|i| HistogramRow {
        count: fit.bins[i],
        events: fit.events[i],
        p_emp: fit.p_emp[i],
        p_model: fit.p_model[i],
        residual: fit.residuals[i],
    })
}

/// Frame generator for the config's source at one exposure.
pub fn generator(cfg: &PipelineConfig, exposure: f64, seed: u64) -> Result<FrameGenerator> {
    let camera = Camera::new(cfg.camera_config()?).stage("simulate")?;
    let gen = match cfg.source.kind {
        SourceKind::Dark => FrameGenerator::new(camera, PhotonSource::Dark, seed),
        SourceKind::Spot | SourceKind::Map => {
            FrameGenerator::illuminated(camera, &cfg.intensity()?, cfg.source.mu_f * exposure, seed)
        }
        SourceKind::Spdc => FrameGenerator::new(camera, PhotonSource::Spdc(cfg.spdc_source()), seed),
    }
    .stage("simulate")?;
    Ok(gen.with_exposure(exposure))
}

/// Writes `n` frames of `gen` to `path`, generating them in parallel batches.
pub fn write_generated(path: &Path, gen: &FrameGenerator, n: usize, header: StackHeader) -> Result<()> {
    let mut w = StackWriter::create(path, header)?;
    let mut start = 0;
    while start < n {
        let len = BATCH.min(n - start);
        for f in gen.frames(start as u64, len) {
            w.write(&f)?;
        }
        start += len;
    }
    w.finish()
}

/// `simulate`: one stack, or one per entry of `source.exposures`.
pub fn simulate(cfg: &PipelineConfig, out: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(out)?;
    let n = cfg.source.n_frames;
    if n == 0 {
        return Err(CliError::config("source.n_frames: must be at least 1"));
    }
    let camera = cfg.camera_config()?;
    let runs: Vec<(PathBuf, f64, u64)> = if cfg.source.exposures.is_empty() {
        vec![(out.join(STACK_FILE), 1.0, cfg.seed)]
    } else {
        cfg.source
            .exposures
            .iter()
            .enumerate()
            .map(|(i, &e)| (out.join(format!("stack_{i}.emccd")), e, cfg.seed.wrapping_add(i as u64)))
            .collect()
    };
    let source = serde_json::to_value(&cfg.source).map_err(|e| CliError::config(e.to_string()))?;
    for (path, exposure, seed) in &runs {
        let gen = generator(cfg, *exposure, *seed)?;
        let mut header = StackHeader::new(camera.width, camera.height, n, FrameTag::Simulated);
        header.exposure = *exposure;
        header.camera = Some(camera.clone());
        header.noise = Some(camera.noise);
        header.seed = Some(*seed);
        header.source = Some(source.clone());
        info!("simulating {n} frames into {}", path.display());
        write_generated(path, &gen, n, header)?;
    }
    Ok(runs.into_iter().map(|r| r.0).collect())
}

fn correction_from_file(path: &Path) -> Result<CorrectionImage> {
    let img = format::read_image(path, "correction")?;
    CorrectionImage::new(img.width, img.height, img.values).stage("read correction image")
}

pub fn write_correction(path: &Path, corr: &CorrectionImage) -> Result<()> {
    let (width, height) = corr.dims();
    format::write_image(
        path,
        &Image {
            kind: "correction".into(),
            width,
            height,
            values: corr.values.clone(),
        },
    )
}

/// Correction image of a dark stack file, streamed.
pub fn correction_of(path: &Path) -> Result<CorrectionImage> {
    let reader = StackReader::open(path)?;
    let (w, h) = (reader.header().width, reader.header().height);
    let mut acc = CorrectionAccumulator::new(w, h);
    for f in reader {
        acc.add(&f?).stage("calibrate")?;
    }
    acc.finish().stage("calibrate")
}

/// Streams `path` through `corr` and hands every corrected frame to `each`.
pub fn for_each_corrected(path: &Path, corr: &CorrectionImage, mut each: impl FnMut(Frame) -> Result<()>) -> Result<StackHeader> {
    let reader = StackReader::open(path)?;
    let header = reader.header().clone();
    if (header.width, header.height) != corr.dims() {
        return Err(CliError::Stage {
            stage: "correct",
            source: emccd_pnr::Error::DimensionMismatch {
                expected: corr.dims(),
                found: (header.width, header.height),
            },
        });
    }
    for f in reader {
        each(emccd_pnr::calibration::correct_frame(&f?, corr).stage("correct")?)?;
    }
    Ok(header)
}

pub struct Calibration {
    pub correction: CorrectionImage,
    pub histogram: CountHistogram,
    pub noise: NoiseFile,
}

/// `calibrate`: correction image and noise fit of a dark stack.
pub fn calibrate(cfg: &PipelineConfig, dark: &Path, out: &Path) -> Result<Calibration> {
    ensure_dir(out)?;
    let correction = correction_of(dark)?;
    let (w, h) = correction.dims();
    let region = cfg.analysis.fit_region(w, h);
    region.check_within(w, h).stage("calibrate")?;
    let mut hist = CountHistogram::new();
    for_each_corrected(dark, &correction, |f| {
        hist.add_frame(&f, &region);
        Ok(())
    })?;
    let n_r = cfg.camera.n_r;
    let initial = initial_noise_guess(&hist, n_r, cfg.specified_gain()?).stage("calibrate")?;
    info!("fitting dark histogram of {} events", hist.total());
    let fit = fit_noise(&hist, &initial, &FitOptions::corrected()).stage("calibrate")?;
    let params = fit.noise_params(n_r).stage("calibrate")?;
    write_correction(&out.join(CORRECTION_FILE), &correction)?;
    format::write_csv(&out.join(DARK_HISTOGRAM_FILE), histogram_rows(&fit))?;
    let noise = NoiseFile { params, fit: Some(fit) };
    format::write_json(&out.join(NOISE_FILE), &noise)?;
    Ok(Calibration {
        correction,
        histogram: hist,
        noise,
    })
}

/// Noise parameters from a `calibrate` result, or from the config.
pub fn noise_of(cfg: &PipelineConfig, path: Option<&Path>) -> Result<NoiseParams> {
    match path {
        Some(p) => Ok(format::read_json::<NoiseFile>(p)?.params),
        None if cfg.noise.fit => Err(CliError::config("noise.fit is set but no noise file was given")),
        None => cfg.noise_params(),
    }
}

pub struct PhotonFit {
    pub intensity: IntensityMap,
    pub histogram: CountHistogram,
    pub result: PhotonFitFile,
}

/// Histogram and normalized mean frame of `region` over corrected frames.
pub fn histogram_and_intensity(
    stack: &Path,
    corr: &CorrectionImage,
    region: &Region,
) -> Result<(CountHistogram, IntensityMap)> {
    let (w, h) = corr.dims();
    region.check_within(w, h).stage("fit photons")?;
    let mut hist = CountHistogram::new();
    let mut sum = vec![0.0; w * h];
    for_each_corrected(stack, corr, |f| {
        hist.add_frame(&f, region);
        sum.iter_mut().zip(&f.values).for_each(|(s, v)| *s += v);
        Ok(())
    })?;
    let total = FrameStack::new(vec![Frame::new(w, h, sum, FrameTag::Corrected).stage("fit photons")?])
        .stage("fit photons")?;
    let intensity = estimate_intensity_map(&total, region).stage("fit photons")?;
    Ok((hist, intensity))
}

/// `fit-photons`: intensity map and the `mu_f`, `p_c` fit of a stack.
pub fn fit_photons(
    cfg: &PipelineConfig,
    stack: &Path,
    correction: &Path,
    noise: Option<&Path>,
    out: &Path,
) -> Result<PhotonFit> {
    ensure_dir(out)?;
    let corr = correction_from_file(correction)?;
    let noise = noise_of(cfg, noise)?;
    let (w, h) = corr.dims();
    let region = cfg.analysis.fit_region(w, h);
    let (hist, intensity) = histogram_and_intensity(stack, &corr, &region)?;
    let start = initial_mu_f(&hist, &intensity, &noise, true);
    info!("fitting photon histogram of {} events from mu_f = {start:.1}", hist.total());
    let fit = fit_photon_model(&hist, &intensity, &noise, start, &FitOptions::corrected()).stage("fit photons")?;
    let mu_f = fit.value("mu_f").expect("photon fit has mu_f");
    let p_c = fit.value("p_c").expect("photon fit has p_c");
    let mean_gain = (noise.gain.n_r as f64 * p_c.ln_1p()).exp();
    format::write_image(
        &out.join(INTENSITY_FILE),
        &Image {
            kind: "intensity".into(),
            width: intensity.width(),
            height: intensity.height(),
            values: intensity.values().to_vec(),
        },
    )?;
    format::write_csv(&out.join(PHOTON_HISTOGRAM_FILE), histogram_rows(&fit))?;
    let result = PhotonFitFile {
        mu_f,
        p_c,
        mean_gain,
        region,
        fit,
    };
    format::write_json(&out.join(PHOTON_FIT_FILE), &result)?;
    Ok(PhotonFit {
        intensity,
        histogram: hist,
        result,
    })
}

/// Turns plain-corrected frames into photon-number frames over a region.
#[derive(Debug, Clone)]
pub enum Counter {
    Sigma {
        n: f64,
        noise: NoiseParams,
        baseline: Baseline,
        region: Region,
    },
    Photon {
        map: ThresholdMap,
        /// Added to plain-corrected counts to put them on the model's axis.
        dark_level: f64,
        clamp: Option<u32>,
    },
}

impl Counter {
    /// `method = None` uses the cutoff's own photon-number range.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        method: Option<Method>,
        engine: &PosteriorEngine,
        intensity: &IntensityMap,
        region: Region,
        mu_f: f64,
        cutoff: f64,
        baseline: Baseline,
    ) -> Result<Self> {
        if intensity.dims() != (region.width, region.height) {
            return Err(CliError::config(format!(
                "intensity map is {}x{}, region is {}x{}",
                intensity.width(),
                intensity.height(),
                region.width,
                region.height
            )));
        }
        let dark_level = engine.model().mean();
        let photon = |min_k: u32, clamp: Option<u32>| -> Result<Counter> {
            let map = ThresholdMap::build_resolving(engine, intensity, mu_f, cutoff, min_k)
                .stage("threshold map")?
                .at(region.x0, region.y0);
            Ok(Counter::Photon { map, dark_level, clamp })
        };
        match method {
            None => photon(1, None),
            Some(Method::Photon { k }) => photon(k, Some(k)),
            Some(Method::Sigma { n }) => Ok(Counter::Sigma {
                n,
                noise: *engine.model().params(),
                baseline,
                region,
            }),
            Some(Method::Given) => Err(CliError::config("method `given` does not count photons")),
        }
    }

    pub fn threshold_map(&self) -> Option<&ThresholdMap> {
        match self {
            Counter::Photon { map, .. } => Some(map),
            Counter::Sigma { .. } => None,
        }
    }

    pub fn count(&self, corrected: &Frame) -> Result<PhotonFrame> {
        match self {
            Counter::Sigma {
                n,
                noise,
                baseline,
                region,
            } => {
                region.check_within(corrected.width, corrected.height).stage("count")?;
                let values = region.indices(corrected.width).map(|i| corrected.values[i]).collect();
                let crop = Frame::new(region.width, region.height, values, FrameTag::Corrected).stage("count")?;
                binary_threshold(&crop, noise, *n, baseline).stage("count")
            }
            Counter::Photon { map, dark_level, clamp } => {
                let shifted = Frame {
                    values: corrected.values.iter().map(|v| v + dark_level).collect(),
                    ..corrected.clone()
                };
                let p = count_photons(&shifted, map).stage("count")?;
                Ok(match clamp {
                    Some(k) => p.clamped(*k),
                    None => p,
                })
            }
        }
    }

    /// Counts a batch of frames in parallel, keeping their order.
    pub fn count_all(&self, frames: &[Frame]) -> Result<Vec<PhotonFrame>> {
        frames.par_iter().map(|f| self.count(f)).collect()
    }
}

/// Inputs `count` and `correlate` need to turn raw frames into photon numbers.
pub struct CountInputs<'a> {
    pub correction: &'a Path,
    pub intensity: &'a Path,
    pub noise: Option<&'a Path>,
    pub mu_f: f64,
}

impl CountInputs<'_> {
    fn load(&self, cfg: &PipelineConfig) -> Result<(CorrectionImage, IntensityMap, Region, PosteriorEngine)> {
        let corr = correction_from_file(self.correction)?;
        let img = format::read_image(self.intensity, "intensity")?;
        let intensity = IntensityMap::from_weights(img.width, img.height, img.values).stage("read intensity map")?;
        let (w, h) = corr.dims();
        let region = cfg.analysis.fit_region(w, h);
        if intensity.dims() != (region.width, region.height) {
            return Err(CliError::config(format!(
                "intensity map is {}x{} but analysis.fit_region is {}x{}",
                intensity.width(),
                intensity.height(),
                region.width,
                region.height
            )));
        }
        let engine = PosteriorEngine::new(&noise_of(cfg, self.noise)?).stage("count")?;
        Ok((corr, intensity, region, engine))
    }
}

/// `mu_f` given directly or read from a `fit-photons` result.
pub fn mu_f_of(mu_f: Option<f64>, photon_fit: Option<&Path>) -> Result<f64> {
    match (mu_f, photon_fit) {
        (Some(m), _) if m >= 0.0 && m.is_finite() => Ok(m),
        (Some(m), _) => Err(CliError::config(format!("mu_f: {m} must be finite and >= 0"))),
        (None, Some(p)) => Ok(format::read_json::<PhotonFitFile>(p)?.mu_f),
        (None, None) => Err(CliError::config("mu_f: give --mu-f or --photon-fit")),
    }
}

/// `count`: photon-number stack and the threshold map used.
pub fn count(cfg: &PipelineConfig, stack: &Path, inputs: &CountInputs, method: Option<Method>, out: &Path) -> Result<PathBuf> {
    ensure_dir(out)?;
    let (corr, intensity, region, engine) = inputs.load(cfg)?;
    let counter = Counter::new(
        method,
        &engine,
        &intensity,
        region,
        inputs.mu_f,
        cfg.analysis.cutoff,
        cfg.analysis.baseline(),
    )?;
    if let Some(map) = counter.threshold_map() {
        format::write_threshold_map(&out.join(THRESHOLDS_FILE), map)?;
    }
    let reader = StackReader::open(stack)?;
    let mut header = StackHeader::new(region.width, region.height, reader.header().n_frames, FrameTag::PhotonCounted);
    header.exposure = reader.header().exposure;
    header.seed = reader.header().seed;
    header.noise = Some(*engine.model().params());
    header.source = Some(serde_json::json!({
        "method": method.map(|m| m.to_string()),
        "mu_f": inputs.mu_f,
        "region": region,
        "input": stack.file_name().map(|n| n.to_string_lossy().into_owned()),
    }));
    let path = out.join(PHOTONS_FILE);
    let mut w = StackWriter::create(&path, header)?;
    for_each_corrected(stack, &corr, |f| {
        let p = counter.count(&f)?;
        w.write(&p.to_frame())
    })?;
    w.finish()?;
    Ok(path)
}

fn method_file(method: Method) -> String {
    format!("correlation_{method}.map")
}

/// Default frame counts: the whole stack.
fn frame_counts(cfg: &PipelineConfig, n: usize) -> Result<Vec<usize>> {
    let counts = if cfg.analysis.frame_counts.is_empty() {
        vec![n]
    } else {
        cfg.analysis.frame_counts.clone()
    };
    if let Some(&bad) = counts.iter().find(|&&c| c < 2 || c > n) {
        return Err(CliError::config(format!(
            "analysis.frame_counts: {bad} not in 2..={n} (frames in the stack)"
        )));
    }
    Ok(counts)
}

pub struct Correlation {
    pub maps: Vec<CorrelationMap>,
    pub rows: Vec<SnrRow>,
}

/// Correlation maps and the SNR table for photon stacks of several methods.
pub fn correlate_frames(cfg: &PipelineConfig, stacks: &[(Method, Vec<PhotonFrame>)], out: &Path) -> Result<Correlation> {
    ensure_dir(out)?;
    let n = stacks.iter().map(|(_, s)| s.len()).min().unwrap_or(0);
    if n < 2 {
        return Err(CliError::Stage {
            stage: "correlate",
            source: emccd_pnr::Error::Empty("correlation needs at least 2 frames"),
        });
    }
    let counts = frame_counts(cfg, n)?;
    let refs: Vec<(Method, &[PhotonFrame])> = stacks.iter().map(|(m, s)| (*m, &s[..n])).collect();
    let rows = snr_vs_frames(&refs, &counts, cfg.analysis.signal_region()).stage("correlate")?;
    let maps = refs
        .iter()
        .map(|(m, s)| quantum_correlation(s, *m).stage("correlate"))
        .collect::<Result<Vec<_>>>()?;
    for m in &maps {
        format::write_correlation_map(&out.join(method_file(m.method)), m)?;
    }
    format::write_csv(&out.join(SNR_FILE), &rows)?;
    Ok(Correlation { maps, rows })
}

/// `correlate` on a photon-counted stack, or on a raw stack counted with
/// every method of `analysis.methods`.
pub fn correlate(
    cfg: &PipelineConfig,
    stack: &Path,
    inputs: Option<&CountInputs>,
    method: Option<Method>,
    out: &Path,
) -> Result<Correlation> {
    let reader = StackReader::open(stack)?;
    let header = reader.header().clone();
    if header.n_frames < 2 {
        return Err(CliError::Stage {
            stage: "correlate",
            source: emccd_pnr::Error::Empty("correlation needs at least 2 frames"),
        });
    }
    if header.tag == FrameTag::PhotonCounted {
        let recorded = header
            .source
            .as_ref()
            .and_then(|s| s.get("method"))
            .and_then(|m| m.as_str())
            .and_then(|m| m.parse().ok());
        let method = method.or(recorded).unwrap_or(Method::Given);
        let frames = reader
            .map(|f| f.map(|f| format::photon_frame(&f)))
            .collect::<Result<Vec<_>>>()?;
        return correlate_frames(cfg, &[(method, frames)], out);
    }
    let inputs = inputs.ok_or_else(|| {
        CliError::config("raw stack: --correction, --intensity and --mu-f (or --photon-fit) are needed to count photons")
    })?;
    let (corr, intensity, region, engine) = inputs.load(cfg)?;
    let methods = match method {
        Some(m) => vec![m],
        None => cfg.analysis.methods()?,
    };
    let counters = methods
        .iter()
        .map(|&m| {
            Counter::new(
                Some(m),
                &engine,
                &intensity,
                region,
                inputs.mu_f,
                cfg.analysis.cutoff,
                cfg.analysis.baseline(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let mut stacks: Vec<(Method, Vec<PhotonFrame>)> = methods.iter().map(|&m| (m, Vec::new())).collect();
    for_each_corrected(stack, &corr, |f| {
        for (c, (_, s)) in counters.iter().zip(stacks.iter_mut()) {
            s.push(c.count(&f)?);
        }
        Ok(())
    })?;
    correlate_frames(cfg, &stacks, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SourceKind;

    fn small(kind: SourceKind) -> PipelineConfig {
        let mut c = PipelineConfig::default();
        c.camera.width = 32;
        c.camera.height = 32;
        c.camera.gain = Some(300.0);
        c.source.kind = kind;
        c.source.n_frames = 10;
        c
    }

    #[test]
    fn dark_stack_has_expected_size_and_is_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(SourceKind::Dark);
        let a = simulate(&cfg, &dir.path().join("a")).unwrap();
        let b = simulate(&cfg, &dir.path().join("b")).unwrap();
        let (ba, bb) = (std::fs::read(&a[0]).unwrap(), std::fs::read(&b[0]).unwrap());
        assert_eq!(ba, bb);
        let header_len = ba.iter().position(|&c| c == b'\n').unwrap() + 1;
        assert_eq!(ba.len() - header_len, 10 * 32 * 32 * 2);
    }

    #[test]
    fn spdc_header_echoes_the_source() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(SourceKind::Spdc);
        cfg.source.pairs_per_frame = 12.5;
        cfg.source.envelope_width = 4.0;
        let paths = simulate(&cfg, dir.path()).unwrap();
        let r = StackReader::open(&paths[0]).unwrap();
        assert_eq!(r.header().tag, FrameTag::Simulated);
        let src = r.header().source.as_ref().unwrap();
        assert_eq!(src["kind"], "spdc");
        assert_eq!(src["pairs_per_frame"], 12.5);
        assert_eq!(r.header().seed, Some(cfg.seed));
    }

    #[test]
    fn exposures_give_one_stack_each() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(SourceKind::Spot);
        cfg.source.mu_f = 100.0;
        cfg.source.exposures = vec![1.0, 2.0, 3.0];
        cfg.source.n_frames = 2;
        let paths = simulate(&cfg, dir.path()).unwrap();
        assert_eq!(paths.len(), 3);
        let r = StackReader::open(&paths[2]).unwrap();
        assert_eq!(r.header().exposure, 3.0);
    }

    #[test]
    fn calibrate_then_count_then_correlate() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(SourceKind::Dark);
        cfg.source.n_frames = 150;
        let dark = simulate(&cfg, &dir.path().join("dark")).unwrap();
        let cal = calibrate(&cfg, &dark[0], &dir.path().join("cal")).unwrap();
        let fit = cal.noise.fit.as_ref().unwrap();
        assert!(fit.converged);
        assert!((cal.noise.params.sigma_n / 14.19 - 1.0).abs() < 0.03, "{:?}", cal.noise.params);
        for f in [CORRECTION_FILE, NOISE_FILE, DARK_HISTOGRAM_FILE] {
            assert!(dir.path().join("cal").join(f).exists(), "{f}");
        }

        let mut spdc = small(SourceKind::Spdc);
        spdc.source.n_frames = 40;
        spdc.source.pairs_per_frame = 40.0;
        spdc.source.envelope_width = 5.0;
        spdc.analysis.methods = vec!["3sigmaT".into(), "2pT".into()];
        let stack = simulate(&spdc, &dir.path().join("spdc")).unwrap();
        let intensity = dir.path().join("i.img");
        let spot = IntensityMap::gaussian_spot(32, 32, 16.0, 16.0, 5.0);
        format::write_image(
            &intensity,
            &Image {
                kind: "intensity".into(),
                width: 32,
                height: 32,
                values: spot.values().to_vec(),
            },
        )
        .unwrap();
        let noise = dir.path().join("cal").join(NOISE_FILE);
        let inputs = CountInputs {
            correction: &dir.path().join("cal").join(CORRECTION_FILE),
            intensity: &intensity,
            noise: Some(&noise),
            mu_f: 80.0,
        };
        let photons = count(&spdc, &stack[0], &inputs, Some(Method::Photon { k: 2 }), &dir.path().join("count")).unwrap();
        let (h, s) = format::read_stack(&photons).unwrap();
        assert_eq!(h.tag, FrameTag::PhotonCounted);
        assert_eq!(s.len(), 40);
        assert!(s.iter().all(|f| f.values.iter().all(|&v| v <= 2.0)));
        assert!(s.iter().map(|f| f.values.iter().sum::<f64>()).sum::<f64>() > 0.0);
        let map = format::read_threshold_map(&dir.path().join("count").join(THRESHOLDS_FILE)).unwrap();
        assert_eq!(map.min_k, 2);

        let from_photons = correlate(&spdc, &photons, None, None, &dir.path().join("c1")).unwrap();
        assert_eq!(from_photons.maps[0].method, Method::Photon { k: 2 });
        let from_raw = correlate(&spdc, &stack[0], Some(&inputs), None, &dir.path().join("c2")).unwrap();
        assert_eq!(from_raw.maps.len(), 2);
        // Counting inside `correlate` matches the separate `count` step.
        assert_eq!(from_raw.maps[1], from_photons.maps[0]);
        assert!(dir.path().join("c2").join(SNR_FILE).exists());
        assert!(dir.path().join("c2").join("correlation_3sigmaT.map").exists());
    }

    #[test]
    fn correlate_needs_two_frames_and_inputs_for_raw_stacks() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(SourceKind::Dark);
        cfg.source.n_frames = 1;
        let one = simulate(&cfg, dir.path()).unwrap();
        let e = correlate(&cfg, &one[0], None, None, dir.path()).err().unwrap();
        assert_eq!(e.exit_code(), 2);
        let p = dir.path().join("p.emccd");
        let f = Frame::zeros(4, 4, FrameTag::PhotonCounted);
        format::write_stack(&p, StackHeader::new(4, 4, 1, FrameTag::PhotonCounted), [&f]).unwrap();
        assert!(correlate(&cfg, &p, None, None, dir.path()).is_err());
    }
}
