//! Pipeline configuration: one TOML file plus dotted-path overrides.

use std::path::{Path, PathBuf};

use emccd_pnr::correlation::Method;
use emccd_pnr::distributions::{GainModel, NoiseParams};
use emccd_pnr::simulator::{CameraConfig, SpdcSource};
use emccd_pnr::thresholding::{Baseline, DEFAULT_CUTOFF};
use emccd_pnr::{IntensityMap, Region, SATURATION};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::format;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub camera: CameraSection,
    pub noise: NoiseSection,
    pub source: SourceSection,
    pub analysis: AnalysisSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 1,
            camera: CameraSection::default(),
            noise: NoiseSection::default(),
            source: SourceSection::default(),
            analysis: AnalysisSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraSection {
    pub width: usize,
    pub height: usize,
    pub n_r: u32,
    pub saturation: u32,
    /// Mean register gain. When absent the gain follows `noise.p_c`.
    pub gain: Option<f64>,
    pub offset: f64,
}

impl Default for CameraSection {
    fn default() -> Self {
        CameraSection {
            width: 128,
            height: 128,
            n_r: 552,
            saturation: SATURATION,
            gain: None,
            offset: CameraConfig::DEFAULT_OFFSET,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    /// Take the noise from a `calibrate` result instead of these values.
    pub fit: bool,
    pub sigma_n: f64,
    pub p_cic: f64,
    pub p_ser: f64,
    pub p_c: f64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        let r = NoiseParams::reference();
        NoiseSection {
            fit: false,
            sigma_n: r.sigma_n,
            p_cic: r.p_cic,
            p_ser: r.p_ser,
            p_c: r.gain.p_c,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Dark,
    /// Gaussian spot, see `spot`.
    Spot,
    /// Intensity map read from `intensity_map`.
    Map,
    Spdc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpotSection {
    pub cx: f64,
    pub cy: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SourceSection {
    pub kind: SourceKind,
    pub n_frames: usize,
    /// Mean photons per frame (at unit exposure when `exposures` is set).
    pub mu_f: f64,
    /// One stack per exposure, each with `mu_f * exposure` photons per frame.
    pub exposures: Vec<f64>,
    /// Defaults to the sensor centre with sigma of a sixth of the width.
    pub spot: Option<SpotSection>,
    pub intensity_map: Option<PathBuf>,
    pub pairs_per_frame: f64,
    pub sigma_sum: f64,
    pub envelope_width: f64,
    pub envelope_center: Option<(f64, f64)>,
    pub background_per_frame: f64,
}

impl Default for SourceSection {
    fn default() -> Self {
        SourceSection {
            kind: SourceKind::Dark,
            n_frames: 100,
            mu_f: 0.0,
            exposures: Vec::new(),
            spot: None,
            intensity_map: None,
            pairs_per_frame: 0.0,
            sigma_sum: 1.0,
            envelope_width: 10.0,
            envelope_center: None,
            background_per_frame: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    FrameMean,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    pub cutoff: f64,
    /// `[x0, y0, width, height]` on the lag grid.
    pub signal_region: Option<[usize; 4]>,
    /// Pixels used for histograms and intensity maps, `[x0, y0, width, height]`.
    pub fit_region: Option<[usize; 4]>,
    pub methods: Vec<String>,
    /// Empty means the whole stack.
    pub frame_counts: Vec<usize>,
    /// Reference level of the sigma threshold.
    pub baseline: BaselineKind,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            cutoff: DEFAULT_CUTOFF,
            signal_region: None,
            fit_region: None,
            methods: vec!["3sigmaT".into(), "1pT".into(), "2pT".into()],
            frame_counts: Vec::new(),
            baseline: BaselineKind::FrameMean,
        }
    }
}

fn region(r: [usize; 4]) -> Region {
    Region::new(r[0], r[1], r[2], r[3])
}

impl AnalysisSection {
    pub fn methods(&self) -> Result<Vec<Method>> {
        self.methods
            .iter()
            .map(|m| {
                m.parse()
                    .map_err(|_| CliError::config(format!("analysis.methods: `{m}` is not kpT or <n>sigmaT")))
            })
            .collect()
    }

    pub fn signal_region(&self) -> Option<Region> {
        self.signal_region.map(region)
    }

    pub fn fit_region(&self, width: usize, height: usize) -> Region {
        self.fit_region.map(region).unwrap_or(Region::full(width, height))
    }

    pub fn baseline(&self) -> Baseline {
        match self.baseline {
            BaselineKind::FrameMean => Baseline::FrameMean,
            BaselineKind::Zero => Baseline::Fixed(0.0),
        }
    }
}

impl PipelineConfig {
    /// Reads `path` (or starts from defaults), applies `key=value` overrides
    /// and validates the result. Relative paths are taken from the config
    /// file's directory.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                toml::from_str::<toml::Table>(&text).map_err(|e| CliError::config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let mut cfg: PipelineConfig = serde_path_to_error::deserialize(toml::Value::Table(value))
            .map_err(|e| CliError::config(format!("{}: {}", e.path(), e.inner())))?;
        if let (Some(base), Some(map)) = (path.and_then(Path::parent), cfg.source.intensity_map.as_mut()) {
            if map.is_relative() {
                *map = base.join(&*map);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.camera;
        if c.width == 0 || c.height == 0 {
            return Err(CliError::config("camera.width/height: must be at least 1"));
        }
        if c.n_r == 0 {
            return Err(CliError::config("camera.n_r: must be at least 1"));
        }
        if !c.offset.is_finite() || c.offset < 0.0 {
            return Err(CliError::config("camera.offset: must be finite and >= 0"));
        }
        self.noise_params()?;
        let a = &self.analysis;
        if !(a.cutoff > 0.0 && a.cutoff < 1.0) {
            return Err(CliError::config("analysis.cutoff: must lie in (0, 1)"));
        }
        a.methods()?;
        if let Some(r) = a.fit_region {
            region(r)
                .check_within(c.width, c.height)
                .map_err(|e| CliError::config(format!("analysis.fit_region: {e}")))?;
        }
        let s = &self.source;
        if !(s.mu_f >= 0.0 && s.mu_f.is_finite()) {
            return Err(CliError::config("source.mu_f: must be finite and >= 0"));
        }
        if s.exposures.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return Err(CliError::config("source.exposures: entries must be finite and > 0"));
        }
        match s.kind {
            SourceKind::Map => match &s.intensity_map {
                None => return Err(CliError::config("source.intensity_map: required for kind = \"map\"")),
                Some(p) if !p.exists() => {
                    return Err(CliError::config(format!("source.intensity_map: {} does not exist", p.display())))
                }
                _ => {}
            },
            SourceKind::Spdc => {
                let src = self.spdc_source();
                src.validate().map_err(|e| CliError::config(format!("source: {e}")))?;
            }
            SourceKind::Spot => {
                if let Some(spot) = &s.spot {
                    if !(spot.sigma > 0.0) {
                        return Err(CliError::config("source.spot.sigma: must be > 0"));
                    }
                }
            }
            SourceKind::Dark => {}
        }
        Ok(())
    }

    /// Noise parameters of the config, with the register re-tuned to
    /// `camera.gain` when that is set.
    pub fn noise_params(&self) -> Result<NoiseParams> {
        let n = &self.noise;
        let gain = match self.camera.gain {
            Some(g) => GainModel::from_mean_gain(g, self.camera.n_r),
            None => GainModel::new(n.p_c, self.camera.n_r),
        }
        .map_err(|e| CliError::config(format!("camera.gain / noise.p_c: {e}")))?;
        NoiseParams::new(n.sigma_n, n.p_cic, n.p_ser, gain).map_err(|e| CliError::config(format!("noise: {e}")))
    }

    /// Mean gain the fits start from.
    pub fn specified_gain(&self) -> Result<f64> {
        Ok(self.noise_params()?.gain.mean_gain())
    }

    pub fn camera_config(&self) -> Result<CameraConfig> {
        let c = &self.camera;
        let mut cfg = CameraConfig::new(c.width, c.height, self.noise_params()?).with_offset(c.offset);
        cfg.saturation = c.saturation;
        cfg.validate().map_err(|e| CliError::config(format!("camera: {e}")))?;
        Ok(cfg)
    }

    pub fn spdc_source(&self) -> SpdcSource {
        let s = &self.source;
        SpdcSource {
            pairs_per_frame: s.pairs_per_frame,
            sigma_sum: s.sigma_sum,
            envelope_center: s
                .envelope_center
                .unwrap_or((self.camera.width as f64 / 2.0, self.camera.height as f64 / 2.0)),
            envelope_width: s.envelope_width,
            background_per_frame: s.background_per_frame,
        }
    }

    /// Normalized illumination of a spot or map source.
    pub fn intensity(&self) -> Result<IntensityMap> {
        let (w, h) = (self.camera.width, self.camera.height);
        match self.source.kind {
            SourceKind::Map => {
                let path = self.source.intensity_map.as_ref().expect("validated");
                let img = format::read_image(path, "intensity")?;
                if (img.width, img.height) != (w, h) {
                    return Err(CliError::config(format!(
                        "source.intensity_map: {}x{} map for a {w}x{h} camera",
                        img.width, img.height
                    )));
                }
                IntensityMap::from_weights(w, h, img.values)
                    .map_err(|e| CliError::config(format!("source.intensity_map: {e}")))
            }
            _ => {
                let spot = self.source.spot.clone().unwrap_or(SpotSection {
                    cx: w as f64 / 2.0,
                    cy: h as f64 / 2.0,
                    sigma: w as f64 / 6.0,
                });
                Ok(IntensityMap::gaussian_spot(w, h, spot.cx, spot.cy, spot.sigma))
            }
        }
    }
}

/// Sets `a.b.c = value` in `table`. The value is read as a TOML literal,
/// falling back to a bare string.
fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::config(format!("override `{spec}`: expected key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::config(format!("override `{spec}`: empty key segment")));
    }
    let mut node = table;
    for part in &parts[..parts.len() - 1] {
        let entry = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| CliError::config(format!("override `{spec}`: `{part}` is not a section")))?;
    }
    node.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load_str(text: &str, overrides: &[&str]) -> Result<PipelineConfig> {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, text).unwrap();
        let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
        PipelineConfig::load(Some(&path), &o)
    }

    #[test]
    fn defaults_are_the_reference_camera() {
        let c = PipelineConfig::load(None, &[]).unwrap();
        assert_eq!(c.noise_params().unwrap(), NoiseParams::reference());
        assert_eq!(c.camera.width, 128);
    }

    #[test]
    fn dotted_overrides() {
        let c = load_str(
            "seed = 3\n[camera]\nwidth = 64\n",
            &["camera.gain=300", "source.kind=spdc", "analysis.methods=[\"2pT\"]", "seed = 9"],
        )
        .unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.camera.width, 64);
        assert!((c.specified_gain().unwrap() - 300.0).abs() < 1e-9);
        assert_eq!(c.source.kind, SourceKind::Spdc);
        assert_eq!(c.analysis.methods().unwrap(), vec![Method::Photon { k: 2 }]);
    }

    #[test]
    fn errors_name_the_field() {
        let e = load_str("[camera]\nwidth = \"wide\"\n", &[]).unwrap_err().to_string();
        assert!(e.contains("camera.width"), "{e}");
        let e = load_str("[camera]\nwidht = 3\n", &[]).unwrap_err().to_string();
        assert!(e.contains("widht"), "{e}");
        let e = load_str("", &["analysis.methods=[\"0pT\"]"]).unwrap_err().to_string();
        assert!(e.contains("analysis.methods"), "{e}");
        let e = load_str("", &["noise.sigma_n=-1"]).unwrap_err().to_string();
        assert!(e.contains("noise"), "{e}");
        let e = load_str("", &["camera.width.x=1"]).unwrap_err().to_string();
        assert!(e.contains("camera.width.x") || e.contains("width"), "{e}");
        assert!(matches!(load_str("", &["nokey"]), Err(CliError::Config(_))));
    }

    #[test]
    fn intensity_path_must_exist_and_is_relative_to_the_config() {
        let e = load_str("[source]\nkind = \"map\"\nintensity_map = \"nope.img\"\n", &[]).unwrap_err();
        assert!(e.to_string().contains("source.intensity_map"), "{e}");

        let dir = tempfile::tempdir().unwrap();
        let img = format::Image {
            kind: "intensity".into(),
            width: 2,
            height: 2,
            values: vec![1.0, 1.0, 2.0, 0.0],
        };
        format::write_image(&dir.path().join("m.img"), &img).unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(
            &path,
            "[camera]\nwidth = 2\nheight = 2\n[source]\nkind = \"map\"\nintensity_map = \"m.img\"\n",
        )
        .unwrap();
        let c = PipelineConfig::load(Some(&path), &[]).unwrap();
        assert_eq!(c.intensity().unwrap().values(), &[0.25, 0.25, 0.5, 0.0]);
    }

    #[test]
    fn missing_config_file_is_io() {
        let e = PipelineConfig::load(Some(Path::new("/nonexistent/c.toml")), &[]).unwrap_err();
        assert_eq!(e.exit_code(), 4);
    }
}
