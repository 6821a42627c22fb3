//! On-disk containers for features, estimates and the ML export, plus the
//! atomic write helper every stage uses.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dsp::GtgramFeature;
use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::scene::{Area, SourceClass};
use crate::soundmap::SoundmapFeature;

pub const GTGR_MAGIC: [u8; 4] = *b"GTGR";
pub const SMAP_MAGIC: [u8; 4] = *b"SMAP";
pub const WSML_MAGIC: [u8; 4] = *b"WSML";
pub const WSML_VERSION: u32 = 1;

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_owned(),
        reason: reason.into(),
    }
}

/// Writes `bytes` to a temporary sibling of `path` and renames it into
/// place, so readers never observe a partial file. The parent directory
/// must already exist.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic_with(path, |tmp| fs::write(tmp, bytes).map_err(|e| Error::io(tmp, e)))
}

/// Like [`write_atomic`] but lets `write` produce the temporary file itself.
pub fn write_atomic_with(path: &Path, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let tmp = temp_sibling(path);
    if let Err(e) = write(&tmp) {
        let _ = fs::remove_file(&tmp);
        return Err(e);
    }
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

fn temp_sibling(path: &Path) -> PathBuf {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!(".{name}.{}.tmp", std::process::id()))
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}

/// Reads a JSON-lines file, reporting the line number of a bad record.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| format_err(path, format!("line {}: {e}", i + 1)))?,
        );
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8], path: &'a Path) -> Self {
        Self { bytes, pos: 0, path }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            format_err(
                self.path,
                format!("truncated: need {n} bytes at offset {}, file has {}", self.pos, self.bytes.len()),
            )
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn magic(&mut self, expected: [u8; 4]) -> Result<()> {
        let m = self.take(4)?;
        if m != expected {
            return Err(format_err(
                self.path,
                format!("bad magic {:?}, expected {:?}", String::from_utf8_lossy(m), String::from_utf8_lossy(&expected)),
            ));
        }
        Ok(())
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| format_err(self.path, "size overflow"))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(format_err(
                self.path,
                format!("{} trailing bytes", self.bytes.len() - self.pos),
            ));
        }
        Ok(())
    }
}

fn push_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u32).to_le_bytes());
}

fn push_f32s<'a>(buf: &mut Vec<u8>, values: impl IntoIterator<Item = &'a f64>) {
    for v in values {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
}

/// GTGR container: `"GTGR"`, node_id, D, H (u32 LE), then D×H f32 LE.
pub fn encode_gtgram(g: &GtgramFeature) -> Vec<u8> {
    let (d, h) = (g.num_frames(), g.num_channels());
    let mut buf = Vec::with_capacity(16 + 4 * d * h);
    buf.extend_from_slice(&GTGR_MAGIC);
    push_u32(&mut buf, g.node_id);
    push_u32(&mut buf, d);
    push_u32(&mut buf, h);
    push_f32s(&mut buf, g.matrix.iter().flatten());
    buf
}

/// Frame duration and hop are not stored; the defaults (0.1 s, 0.05 s) are filled in.
pub fn decode_gtgram(bytes: &[u8], path: &Path) -> Result<GtgramFeature> {
    let mut c = Cursor::new(bytes, path);
    c.magic(GTGR_MAGIC)?;
    let node_id = c.u32()? as usize;
    let d = c.u32()? as usize;
    let h = c.u32()? as usize;
    let flat = c.f32s(d.checked_mul(h).ok_or_else(|| format_err(path, "size overflow"))?)?;
    c.finish()?;
    Ok(GtgramFeature {
        node_id,
        matrix: flat.chunks(h.max(1)).take(d).map(<[f64]>::to_vec).collect(),
        frame_dur: 0.1,
        hop: 0.05,
    })
}

/// SMAP container: `"SMAP"`, node_id, F, U (u32 LE), F+1 sub-band edges
/// (f32), then the raw F×U map (f32). Angles are the uniform grid
/// `k·360/U`; the normalized map is recomputed on load.
pub fn encode_soundmap(s: &SoundmapFeature, path: &Path) -> Result<Vec<u8>> {
    let (f, u) = (s.num_subbands(), s.num_angles());
    if s.subband_edges.len() != f + 1 {
        return Err(format_err(path, "sub-band edge count must be F + 1"));
    }
    if !s.angles.iter().enumerate().all(|(k, a)| (a - uniform_angle(k, u)).abs() < 1e-9) {
        return Err(format_err(path, "only uniform angle grids starting at 0° can be stored"));
    }
    let mut buf = Vec::with_capacity(16 + 4 * (f + 1 + f * u));
    buf.extend_from_slice(&SMAP_MAGIC);
    push_u32(&mut buf, s.node_id);
    push_u32(&mut buf, f);
    push_u32(&mut buf, u);
    push_f32s(&mut buf, &s.subband_edges);
    push_f32s(&mut buf, s.raw.iter().flatten());
    Ok(buf)
}

fn uniform_angle(k: usize, u: usize) -> f64 {
    k as f64 * 360.0 / u as f64
}

pub fn decode_soundmap(bytes: &[u8], path: &Path) -> Result<SoundmapFeature> {
    let mut c = Cursor::new(bytes, path);
    c.magic(SMAP_MAGIC)?;
    let node_id = c.u32()? as usize;
    let f = c.u32()? as usize;
    let u = c.u32()? as usize;
    let edges = c.f32s(f + 1)?;
    let flat = c.f32s(f.checked_mul(u).ok_or_else(|| format_err(path, "size overflow"))?)?;
    c.finish()?;
    let raw = flat.chunks(u.max(1)).take(f).map(<[f64]>::to_vec).collect();
    let angles = (0..u).map(|k| uniform_angle(k, u)).collect();
    Ok(SoundmapFeature::from_raw(node_id, raw, edges, angles))
}

pub fn write_gtgram(path: &Path, g: &GtgramFeature) -> Result<()> {
    write_atomic(path, &encode_gtgram(g))
}

pub fn read_gtgram(path: &Path) -> Result<GtgramFeature> {
    decode_gtgram(&fs::read(path).map_err(|e| Error::io(path, e))?, path)
}

pub fn write_soundmap(path: &Path, s: &SoundmapFeature) -> Result<()> {
    write_atomic(path, &encode_soundmap(s, path)?)
}

pub fn read_soundmap(path: &Path) -> Result<SoundmapFeature> {
    decode_soundmap(&fs::read(path).map_err(|e| Error::io(path, e))?, path)
}

/// One node's entry in the feature index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeFeatureRecord {
    pub node: usize,
    pub pos: Point2,
    /// Position divided by the area size.
    pub norm_pos: [f64; 2],
    pub soundmap: String,
    pub gtgram: String,
}

/// One line of `features.jsonl`; file names are relative to the index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureIndexRecord {
    pub scene_id: String,
    pub area: Area,
    pub nodes: Vec<NodeFeatureRecord>,
}

/// One line of `estimates.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub scene_id: String,
    /// Producer tag: `plse` or `fuzzy` from `localize`, anything else
    /// (e.g. a learned model) is accepted by `evaluate` as-is.
    pub method: String,
    pub x: f64,
    pub y: f64,
    pub residual: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<SourceClass>,
}

/// Shape of each sample in the ML export.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlShape {
    pub nodes: usize,
    pub subbands: usize,
    pub angles: usize,
    pub frames: usize,
    pub channels: usize,
}

impl MlShape {
    pub fn sample_floats(&self) -> usize {
        self.nodes * (self.subbands * self.angles + self.frames * self.channels + 2)
    }
}

/// One sample of the ML export, all tensors flattened row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MlSample {
    /// N×F×U normalized soundmaps.
    pub soundmap: Vec<f64>,
    /// N×D×H GTGram.
    pub gtgram: Vec<f64>,
    /// N×2 normalized node positions.
    pub position: Vec<f64>,
}

/// One line of `labels.jsonl`, aligned with the sample order of the container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlLabel {
    pub index: usize,
    pub scene_id: String,
    pub class: SourceClass,
    pub class_index: usize,
    /// Normalized target position; absent for interfering-only scenes.
    pub target: Option<[f64; 2]>,
    pub area: Area,
}

/// WSML container: `"WSML"`, version, count, N, F, U, D, H (u32 LE), then
/// per sample the soundmap, GTGram and position tensors as f32 LE.
pub fn encode_ml(shape: MlShape, samples: &[MlSample]) -> Result<Vec<u8>> {
    let (n, f, u, d, h) = (shape.nodes, shape.subbands, shape.angles, shape.frames, shape.channels);
    let mut buf = Vec::with_capacity(32 + 4 * samples.len() * shape.sample_floats());
    buf.extend_from_slice(&WSML_MAGIC);
    for v in [WSML_VERSION as usize, samples.len(), n, f, u, d, h] {
        push_u32(&mut buf, v);
    }
    for (i, s) in samples.iter().enumerate() {
        if s.soundmap.len() != n * f * u || s.gtgram.len() != n * d * h || s.position.len() != n * 2 {
            return Err(Error::invalid(format!("sample {i} does not match shape {shape:?}")));
        }
        push_f32s(&mut buf, &s.soundmap);
        push_f32s(&mut buf, &s.gtgram);
        push_f32s(&mut buf, &s.position);
    }
    Ok(buf)
}

pub fn decode_ml(bytes: &[u8], path: &Path) -> Result<(MlShape, Vec<MlSample>)> {
    let mut c = Cursor::new(bytes, path);
    c.magic(WSML_MAGIC)?;
    let version = c.u32()?;
    if version != WSML_VERSION {
        return Err(format_err(path, format!("unsupported version {version}")));
    }
    let count = c.u32()? as usize;
    let mut dims = [0usize; 5];
    for d in &mut dims {
        *d = c.u32()? as usize;
    }
    let [n, f, u, d, h] = dims;
    let shape = MlShape {
        nodes: n,
        subbands: f,
        angles: u,
        frames: d,
        channels: h,
    };
    let size = |a: usize, b: usize, k: usize| {
        a.checked_mul(b)
            .and_then(|v| v.checked_mul(k))
            .ok_or_else(|| format_err(path, "tensor size overflow"))
    };
    let (sm_len, gt_len, pos_len) = (size(n, f, u)?, size(n, d, h)?, size(n, 2, 1)?);
    let mut samples = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        samples.push(MlSample {
            soundmap: c.f32s(sm_len)?,
            gtgram: c.f32s(gt_len)?,
            position: c.f32s(pos_len)?,
        });
    }
    c.finish()?;
    Ok((shape, samples))
}
