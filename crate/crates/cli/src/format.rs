//! On-disk formats. Every file is one line of JSON header followed by a raw
//! little-endian payload.
//!
//! - frame stacks (`EMCCD-STACK/1`): u16 or f32 pixels, frame-major, row-major
//!   within a frame;
//! - images (`EMCCD-IMAGE/1`): one f64 image, e.g. a correction or intensity map;
//! - threshold maps (`EMCCD-THRESHOLDS/1`): threshold sets in the header, one
//!   u32 set index per pixel in the payload;
//! - correlation maps (`EMCCD-CORRELATION/1`): f64 lags.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use emccd_pnr::correlation::{CorrelationMap, Method};
use emccd_pnr::distributions::NoiseParams;
use emccd_pnr::simulator::CameraConfig;
use emccd_pnr::thresholding::{PhotonFrame, ThresholdMap, ThresholdSet};
use emccd_pnr::{Frame, FrameStack, FrameTag, Region, SATURATION};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result, StageExt};

pub const STACK_MAGIC: &str = "EMCCD-STACK/1";
pub const IMAGE_MAGIC: &str = "EMCCD-IMAGE/1";
pub const THRESHOLDS_MAGIC: &str = "EMCCD-THRESHOLDS/1";
pub const CORRELATION_MAGIC: &str = "EMCCD-CORRELATION/1";
pub const FORMAT_VERSION: u32 = 1;

/// Longest header line accepted when reading.
const MAX_HEADER: u64 = 1 << 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    U16,
    F32,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::U16 => 2,
            Dtype::F32 => 4,
        }
    }

    /// u16 for raw and photon-counted frames, f32 for anything corrected.
    pub fn for_tag(tag: FrameTag) -> Dtype {
        match tag {
            FrameTag::Corrected => Dtype::F32,
            _ => Dtype::U16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackHeader {
    pub magic: String,
    pub version: u32,
    pub width: usize,
    pub height: usize,
    pub n_frames: usize,
    pub dtype: Dtype,
    pub exposure: f64,
    pub tag: FrameTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera: Option<CameraConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Free-form description of whatever produced the frames.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<serde_json::Value>,
}

impl StackHeader {
    pub fn new(width: usize, height: usize, n_frames: usize, tag: FrameTag) -> Self {
        StackHeader {
            magic: STACK_MAGIC.into(),
            version: FORMAT_VERSION,
            width,
            height,
            n_frames,
            dtype: Dtype::for_tag(tag),
            exposure: 0.0,
            tag,
            camera: None,
            noise: None,
            seed: None,
            source: None,
        }
    }

    pub fn payload_len(&self) -> u64 {
        (self.width * self.height * self.n_frames * self.dtype.size()) as u64
    }

    fn frame_len(&self) -> usize {
        self.width * self.height * self.dtype.size()
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn write_header<T: Serialize>(w: &mut impl Write, path: &Path, header: &T) -> Result<()> {
    let line = serde_json::to_string(header).map_err(|e| CliError::format(path, e.to_string()))?;
    w.write_all(line.as_bytes())
        .and_then(|_| w.write_all(b"\n"))
        .map_err(|e| CliError::io(path, e))
}

/// Opens `path`, checks the header's magic and version, and returns the
/// header, the reader positioned at the payload and the payload length.
fn open_with_header<T: DeserializeOwned>(path: &Path, magic: &str) -> Result<(T, BufReader<File>, u64)> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let file_len = file.metadata().map_err(|e| CliError::io(path, e))?.len();
    let mut r = BufReader::new(file);
    let mut line = Vec::new();
    let n = (&mut r)
        .take(MAX_HEADER)
        .read_until(b'\n', &mut line)
        .map_err(|e| CliError::io(path, e))?;
    if line.last() != Some(&b'\n') {
        return Err(CliError::format(path, "no header line"));
    }
    let value: serde_json::Value =
        serde_json::from_slice(&line).map_err(|e| CliError::format(path, format!("header: {e}")))?;
    let found = value.get("magic").and_then(|m| m.as_str()).unwrap_or("");
    if found != magic {
        return Err(CliError::format(path, format!("magic `{found}`, expected `{magic}`")));
    }
    let version = value.get("version").and_then(|v| v.as_u64());
    if version != Some(FORMAT_VERSION as u64) {
        return Err(CliError::format(path, format!("unsupported version {version:?}")));
    }
    let header = serde_json::from_value(value).map_err(|e| CliError::format(path, format!("header: {e}")))?;
    Ok((header, r, file_len - n as u64))
}

fn check_payload(path: &Path, found: u64, expected: u64) -> Result<()> {
    if found != expected {
        return Err(CliError::format(
            path,
            format!("payload is {found} bytes, header implies {expected}"),
        ));
    }
    Ok(())
}

fn read_payload(path: &Path, r: &mut impl Read, len: u64) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; len as usize];
    r.read_exact(&mut buf).map_err(|e| CliError::io(path, e))?;
    Ok(buf)
}

fn f64s(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect()
}

fn f64_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Writes frames one at a time; the frame count is fixed by the header.
pub struct StackWriter {
    path: PathBuf,
    out: BufWriter<File>,
    header: StackHeader,
    written: usize,
    buf: Vec<u8>,
}

impl StackWriter {
    pub fn create(path: &Path, header: StackHeader) -> Result<Self> {
        let mut out = create(path)?;
        write_header(&mut out, path, &header)?;
        Ok(StackWriter {
            path: path.to_path_buf(),
            out,
            header,
            written: 0,
            buf: Vec::new(),
        })
    }

    pub fn write_values(&mut self, values: &[f64]) -> Result<()> {
        let h = &self.header;
        if values.len() != h.width * h.height {
            return Err(CliError::format(
                &self.path,
                format!("frame has {} pixels, header says {}x{}", values.len(), h.width, h.height),
            ));
        }
        if self.written == h.n_frames {
            return Err(CliError::format(&self.path, "more frames than the header declares"));
        }
        self.buf.clear();
        match h.dtype {
            Dtype::U16 => {
                for &v in values {
                    if !(v >= 0.0 && v <= SATURATION as f64 && v.fract() == 0.0) {
                        return Err(CliError::format(&self.path, format!("value {v} does not fit u16")));
                    }
                    self.buf.extend((v as u16).to_le_bytes());
                }
            }
            Dtype::F32 => {
                for &v in values {
                    self.buf.extend((v as f32).to_le_bytes());
                }
            }
        }
        self.out.write_all(&self.buf).map_err(|e| CliError::io(&self.path, e))?;
        self.written += 1;
        Ok(())
    }

    pub fn write(&mut self, frame: &Frame) -> Result<()> {
        self.write_values(&frame.values)
    }

    pub fn finish(mut self) -> Result<()> {
        if self.written != self.header.n_frames {
            return Err(CliError::format(
                &self.path,
                format!("wrote {} frames, header declares {}", self.written, self.header.n_frames),
            ));
        }
        self.out.flush().map_err(|e| CliError::io(&self.path, e))
    }
}

/// Streams frames out of a stack file.
pub struct StackReader {
    path: PathBuf,
    input: BufReader<File>,
    header: StackHeader,
    read: usize,
    buf: Vec<u8>,
}

impl StackReader {
    pub fn open(path: &Path) -> Result<Self> {
        let (header, input, payload): (StackHeader, _, _) = open_with_header(path, STACK_MAGIC)?;
        check_payload(path, payload, header.payload_len())?;
        if header.width == 0 || header.height == 0 {
            return Err(CliError::format(path, "zero width or height"));
        }
        Ok(StackReader {
            path: path.to_path_buf(),
            input,
            buf: vec![0; header.frame_len()],
            header,
            read: 0,
        })
    }

    pub fn header(&self) -> &StackHeader {
        &self.header
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn next_frame(&mut self) -> Result<Frame> {
        self.input.read_exact(&mut self.buf).map_err(|e| CliError::io(&self.path, e))?;
        let values: Vec<f64> = match self.header.dtype {
            Dtype::U16 => self
                .buf
                .chunks_exact(2)
                .map(|c| u16::from_le_bytes([c[0], c[1]]) as f64)
                .collect(),
            Dtype::F32 => self
                .buf
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect(),
        };
        self.read += 1;
        let h = &self.header;
        Ok(Frame::new(h.width, h.height, values, h.tag)
            .expect("size checked against the header")
            .with_exposure(h.exposure))
    }
}

impl Iterator for StackReader {
    type Item = Result<Frame>;

    fn next(&mut self) -> Option<Self::Item> {
        (self.read < self.header.n_frames).then(|| self.next_frame())
    }
}

pub fn write_stack<'a>(path: &Path, header: StackHeader, frames: impl IntoIterator<Item = &'a Frame>) -> Result<()> {
    let mut w = StackWriter::create(path, header)?;
    for f in frames {
        w.write(f)?;
    }
    w.finish()
}

pub fn read_stack(path: &Path) -> Result<(StackHeader, FrameStack)> {
    let reader = StackReader::open(path)?;
    let header = reader.header().clone();
    let frames = reader.collect::<Result<Vec<_>>>()?;
    let stack = FrameStack::new(frames).stage("read stack")?;
    Ok((header, stack))
}

pub fn photon_frame(frame: &Frame) -> PhotonFrame {
    PhotonFrame {
        width: frame.width,
        height: frame.height,
        values: frame.values.iter().map(|&v| v.max(0.0) as u32).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ImageHeader {
    magic: String,
    version: u32,
    kind: String,
    width: usize,
    height: usize,
    dtype: String,
}

/// A named f64 image (correction image, intensity map).
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub kind: String,
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

pub fn write_image(path: &Path, image: &Image) -> Result<()> {
    let header = ImageHeader {
        magic: IMAGE_MAGIC.into(),
        version: FORMAT_VERSION,
        kind: image.kind.clone(),
        width: image.width,
        height: image.height,
        dtype: "f64".into(),
    };
    let mut out = create(path)?;
    write_header(&mut out, path, &header)?;
    out.write_all(&f64_bytes(&image.values))
        .and_then(|_| out.flush())
        .map_err(|e| CliError::io(path, e))
}

/// Reads an image and checks that it is of `kind`.
pub fn read_image(path: &Path, kind: &str) -> Result<Image> {
    let (h, mut r, payload): (ImageHeader, _, _) = open_with_header(path, IMAGE_MAGIC)?;
    if h.kind != kind {
        return Err(CliError::format(path, format!("image kind `{}`, expected `{kind}`", h.kind)));
    }
    if h.dtype != "f64" {
        return Err(CliError::format(path, format!("image dtype `{}`, expected f64", h.dtype)));
    }
    check_payload(path, payload, (h.width * h.height * 8) as u64)?;
    let values = f64s(&read_payload(path, &mut r, payload)?);
    Ok(Image {
        kind: h.kind,
        width: h.width,
        height: h.height,
        values,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ThresholdHeader {
    magic: String,
    version: u32,
    region: Region,
    mu_f: f64,
    cutoff: f64,
    min_k: u32,
    noise: NoiseParams,
    sets: Vec<ThresholdSet>,
}

pub fn write_threshold_map(path: &Path, map: &ThresholdMap) -> Result<()> {
    let header = ThresholdHeader {
        magic: THRESHOLDS_MAGIC.into(),
        version: FORMAT_VERSION,
        region: map.region,
        mu_f: map.mu_f,
        cutoff: map.cutoff,
        min_k: map.min_k,
        noise: map.noise,
        sets: map.sets().to_vec(),
    };
    let mut out = create(path)?;
    write_header(&mut out, path, &header)?;
    let payload: Vec<u8> = map.indices().iter().flat_map(|i| i.to_le_bytes()).collect();
    out.write_all(&payload)
        .and_then(|_| out.flush())
        .map_err(|e| CliError::io(path, e))
}

pub fn read_threshold_map(path: &Path) -> Result<ThresholdMap> {
    let (h, mut r, payload): (ThresholdHeader, _, _) = open_with_header(path, THRESHOLDS_MAGIC)?;
    check_payload(path, payload, (h.region.pixel_count() * 4) as u64)?;
    let bytes = read_payload(path, &mut r, payload)?;
    let index = bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    ThresholdMap::from_parts(h.region, h.mu_f, h.cutoff, h.min_k, h.noise, h.sets, index).stage("read threshold map")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CorrelationHeader {
    magic: String,
    version: u32,
    width: usize,
    height: usize,
    n_frames: usize,
    method: Method,
    label: String,
}

pub fn write_correlation_map(path: &Path, map: &CorrelationMap) -> Result<()> {
    let header = CorrelationHeader {
        magic: CORRELATION_MAGIC.into(),
        version: FORMAT_VERSION,
        width: map.width,
        height: map.height,
        n_frames: map.n_frames,
        method: map.method,
        label: map.method.to_string(),
    };
    let mut out = create(path)?;
    write_header(&mut out, path, &header)?;
    out.write_all(&f64_bytes(&map.values))
        .and_then(|_| out.flush())
        .map_err(|e| CliError::io(path, e))
}

pub fn read_correlation_map(path: &Path) -> Result<CorrelationMap> {
    let (h, mut r, payload): (CorrelationHeader, _, _) = open_with_header(path, CORRELATION_MAGIC)?;
    check_payload(path, payload, (h.width * h.height * 8) as u64)?;
    let values = f64s(&read_payload(path, &mut r, payload)?);
    CorrelationMap::new(h.width, h.height, values, h.n_frames, h.method).stage("read correlation map")
}

/// Writes serializable rows as CSV with a header line.
pub fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => CliError::io(path, io),
            _ => unreachable!("checked is_io_error"),
        }
    } else {
        CliError::format(path, e.to_string())
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| CliError::format(path, e.to_string()))?;
    out.write_all(b"\n")
        .and_then(|_| out.flush())
        .map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| CliError::format(path, e.to_string()))
}
