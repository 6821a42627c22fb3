//! Scene geometry: circular microphone arrays, source events, and the
//! randomized layout sampler used to build datasets.
//!
//! Everything lives in the horizontal plane. Bearings are degrees
//! counter-clockwise from +x in [0, 360).

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::{SAMPLE_RATE, SPEED_OF_SOUND};

pub const DEFAULT_NUM_MICS: usize = 8;
pub const DEFAULT_ARRAY_RADIUS: f64 = 0.11;
pub const DEFAULT_NUM_NODES: usize = 5;
pub const MIN_NODE_SPACING: f64 = 30.0;
pub const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;
pub const DEFAULT_DURATION: f64 = 1.0;

/// Training/validation areas 1–5 followed by test areas 6–8, in metres.
pub const DATASET_AREAS: [(f64, f64); 8] = [
    (100.0, 100.0),
    (100.0, 180.0),
    (120.0, 120.0),
    (160.0, 180.0),
    (200.0, 200.0),
    (140.0, 140.0),
    (140.0, 180.0),
    (180.0, 180.0),
];

/// A rectangular deployment area anchored at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Area {
    pub width: f64,
    pub height: f64,
}

impl Area {
    pub fn new(width: f64, height: f64) -> Result<Self> {
        if !(width > 0.0 && height > 0.0 && width.is_finite() && height.is_finite()) {
            return Err(Error::InvalidArea(format!("{width}x{height}")));
        }
        Ok(Self { width, height })
    }

    pub fn diagonal(&self) -> f64 {
        self.width.hypot(self.height)
    }

    pub fn contains(&self, p: Point2) -> bool {
        (0.0..=self.width).contains(&p.x) && (0.0..=self.height).contains(&p.y)
    }
}

impl From<[f64; 2]> for Area {
    fn from([width, height]: [f64; 2]) -> Self {
        Self { width, height }
    }
}

impl From<Area> for [f64; 2] {
    fn from(a: Area) -> Self {
        [a.width, a.height]
    }
}

impl fmt::Display for Area {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

impl std::str::FromStr for Area {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (w, h) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| Error::InvalidArea(format!("expected WxH, got {s:?}")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidArea(format!("bad dimension {v:?} in {s:?}")))
        };
        Area::new(parse(w)?, parse(h)?)
    }
}

/// Uniform (or arbitrary) circular microphone array.
#[derive(Debug, Clone, PartialEq)]
pub struct MicrophoneArray {
    pub center: Point2,
    pub radius: f64,
    /// Microphone angles in degrees, strictly increasing in [0, 360).
    pub mic_angles: Vec<f64>,
}

impl MicrophoneArray {
    pub fn new(center: Point2, radius: f64, mic_angles: Vec<f64>) -> Result<Self> {
        if mic_angles.len() < 2 {
            return Err(Error::invalid(format!(
                "array needs at least 2 microphones, got {}",
                mic_angles.len()
            )));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::invalid(format!("array radius must be > 0, got {radius}")));
        }
        if mic_angles.iter().any(|a| !(0.0..360.0).contains(a))
            || mic_angles.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(Error::invalid(
                "microphone angles must be strictly increasing in [0, 360)",
            ));
        }
        Ok(Self {
            center,
            radius,
            mic_angles,
        })
    }

    pub fn num_mics(&self) -> usize {
        self.mic_angles.len()
    }

    pub fn mic_position(&self, index: usize) -> Point2 {
        let phi = self.mic_angles[index].to_radians();
        self.center
            .translate(self.radius * phi.cos(), self.radius * phi.sin())
    }

    pub fn mic_positions(&self) -> Vec<Point2> {
        (0..self.num_mics()).map(|m| self.mic_position(m)).collect()
    }

    pub fn with_center(&self, center: Point2) -> Self {
        Self {
            center,
            ..self.clone()
        }
    }
}

/// Builds a uniform circular array; microphone 0 (the reference) sits at 0°.
pub fn make_uca(num_mics: usize, radius: f64, center: Point2) -> Result<MicrophoneArray> {
    if num_mics < 2 {
        return Err(Error::invalid(format!(
            "array needs at least 2 microphones, got {num_mics}"
        )));
    }
    let step = 360.0 / num_mics as f64;
    let angles = (0..num_mics).map(|k| k as f64 * step).collect();
    MicrophoneArray::new(center, radius, angles)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceClass {
    Siren,
    Scream,
    Gunshot,
    Interfering,
}

impl SourceClass {
    pub const ALL: [SourceClass; 4] = [
        SourceClass::Siren,
        SourceClass::Scream,
        SourceClass::Gunshot,
        SourceClass::Interfering,
    ];
    pub const TARGETS: [SourceClass; 3] =
        [SourceClass::Siren, SourceClass::Scream, SourceClass::Gunshot];

    /// Source level range in dB (Table-I style calibration).
    pub fn spl_range(self) -> (f64, f64) {
        match self {
            SourceClass::Siren => (100.0, 120.0),
            SourceClass::Scream => (90.0, 110.0),
            SourceClass::Gunshot => (120.0, 140.0),
            SourceClass::Interfering => (90.0, 130.0),
        }
    }

    /// Interfering sources are the non-active class.
    pub fn is_active(self) -> bool {
        self != SourceClass::Interfering
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            SourceClass::Siren => "siren",
            SourceClass::Scream => "scream",
            SourceClass::Gunshot => "gunshot",
            SourceClass::Interfering => "interfering",
        }
    }
}

impl fmt::Display for SourceClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SourceClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SourceClass::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown source class {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceEvent {
    pub class: SourceClass,
    #[serde(rename = "pos")]
    pub position: Point2,
    /// Source level in dB re 20 µPa, before divergence and absorption.
    pub spl: f64,
    pub signal_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub scene_id: String,
    pub area: Area,
    pub nodes: Vec<MicrophoneArray>,
    pub sources: Vec<SourceEvent>,
    pub seed: u64,
    pub sample_rate: u32,
    pub duration: f64,
}

impl Scene {
    /// The non-interfering source, if any.
    pub fn target(&self) -> Option<&SourceEvent> {
        self.sources.iter().find(|s| s.class.is_active())
    }

    /// Ground-truth class label: the target's class, or `Interfering` when
    /// only interferers (or nothing) are present.
    pub fn label(&self) -> SourceClass {
        self.target()
            .map_or(SourceClass::Interfering, |s| s.class)
    }

    pub fn node_centers(&self) -> Vec<Point2> {
        self.nodes.iter().map(|n| n.center).collect()
    }

    /// Largest source-to-microphone distance divided by c, in seconds.
    pub fn max_time_of_flight(&self) -> f64 {
        self.sources
            .iter()
            .flat_map(|s| {
                self.nodes
                    .iter()
                    .flat_map(|n| n.mic_positions())
                    .map(move |m| s.position.distance(m))
            })
            .fold(0.0, f64::max)
            / SPEED_OF_SOUND
    }

    pub fn to_record(&self) -> SceneRecord {
        SceneRecord {
            scene_id: self.scene_id.clone(),
            area: self.area,
            nodes: self.node_centers(),
            sources: self.sources.clone(),
            seed: self.seed,
        }
    }

    /// Rebuilds a scene from a manifest record, placing a copy of `array`
    /// at every node center.
    pub fn from_record(record: &SceneRecord, array: &ArrayGeometry) -> Result<Self> {
        let area = Area::new(record.area.width, record.area.height)?;
        let nodes = record
            .nodes
            .iter()
            .map(|&c| make_uca(array.num_mics, array.radius, c))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            scene_id: record.scene_id.clone(),
            area,
            nodes,
            sources: record.sources.clone(),
            seed: record.seed,
            sample_rate: array.sample_rate,
            duration: array.duration,
        })
    }
}

/// Per-node array geometry and capture settings shared by a whole dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub num_mics: usize,
    pub radius: f64,
    pub sample_rate: u32,
    pub duration: f64,
}

impl Default for ArrayGeometry {
    fn default() -> Self {
        Self {
            num_mics: DEFAULT_NUM_MICS,
            radius: DEFAULT_ARRAY_RADIUS,
            sample_rate: SAMPLE_RATE,
            duration: DEFAULT_DURATION,
        }
    }
}

/// One line of the scene manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub scene_id: String,
    pub area: Area,
    pub nodes: Vec<Point2>,
    pub sources: Vec<SourceEvent>,
    pub seed: u64,
}

pub fn write_manifest<W: Write>(mut out: W, records: &[SceneRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n").map_err(|e| Error::io("<manifest>", e))?;
    }
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<SceneRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Format {
            path: path.to_owned(),
            reason: format!("line {}: {e}", lineno + 1),
        })?;
        records.push(rec);
    }
    Ok(records)
}

/// Which target class (if any) and how many interferers a sampled scene gets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMix {
    /// Relative weights for siren, scream, gunshot and "no target".
    pub target_weights: [f64; 4],
    /// Interferer count is drawn uniformly from `0..=max_interferers` (at most 2).
    pub max_interferers: usize,
}

impl Default for ClassMix {
    fn default() -> Self {
        Self {
            target_weights: [1.0, 1.0, 1.0, 1.0],
            max_interferers: 2,
        }
    }
}

impl ClassMix {
    /// Every scene has exactly one target and no interferers.
    pub fn targets_only() -> Self {
        Self {
            target_weights: [1.0, 1.0, 1.0, 0.0],
            max_interferers: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.max_interferers > 2 {
            return Err(Error::invalid("at most 2 interfering sources per scene"));
        }
        if self.target_weights.iter().any(|w| !(*w >= 0.0 && w.is_finite()))
            || self.target_weights.iter().sum::<f64>() <= 0.0
        {
            return Err(Error::invalid("class weights must be non-negative with a positive sum"));
        }
        Ok(())
    }
}

/// Layout sampler settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSampler {
    pub num_nodes: usize,
    pub min_spacing: f64,
    pub max_attempts: usize,
    pub array: ArrayGeometry,
}

impl Default for SceneSampler {
    fn default() -> Self {
        Self {
            num_nodes: DEFAULT_NUM_NODES,
            min_spacing: MIN_NODE_SPACING,
            max_attempts: MAX_PLACEMENT_ATTEMPTS,
            array: ArrayGeometry::default(),
        }
    }
}

impl SceneSampler {
    pub fn sample(&self, area: Area, mix: &ClassMix, seed: u64) -> Result<Scene> {
        mix.validate()?;
        let area = Area::new(area.width, area.height)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers = self.place_nodes(area, &mut rng)?;

        let mut taken: Vec<Point2> = centers.clone();
        let mut sources = Vec::new();

        let pick = weighted_index(&mix.target_weights, &mut rng);
        if let Some(&class) = SourceClass::TARGETS.get(pick) {
            sources.push(self.sample_source(class, area, &mut taken, &mut rng));
        }
        let interferers = rng.random_range(0..=mix.max_interferers);
        for _ in 0..interferers {
            sources.push(self.sample_source(SourceClass::Interfering, area, &mut taken, &mut rng));
        }

        let nodes = centers
            .into_iter()
            .map(|c| make_uca(self.array.num_mics, self.array.radius, c))
            .collect::<Result<Vec<_>>>()?;
        Ok(Scene {
            scene_id: format!("scene_{seed:016x}"),
            area,
            nodes,
            sources,
            seed,
            sample_rate: self.array.sample_rate,
            duration: self.array.duration,
        })
    }

    fn place_nodes(&self, area: Area, rng: &mut ChaCha8Rng) -> Result<Vec<Point2>> {
        let (wx, wy) = (area.width.floor() as i64, area.height.floor() as i64);
        for _ in 0..self.max_attempts {
            let pts: Vec<Point2> = (0..self.num_nodes)
                .map(|_| grid_point(wx, wy, rng))
                .collect();
            let ok = pts.iter().enumerate().all(|(i, a)| {
                pts[i + 1..]
                    .iter()
                    .all(|b| a.distance(*b) >= self.min_spacing)
            });
            if ok {
                return Ok(pts);
            }
        }
        Err(Error::InfeasibleGeometry {
            nodes: self.num_nodes,
            min_spacing: self.min_spacing,
            width: area.width,
            height: area.height,
            attempts: self.max_attempts,
        })
    }

    fn sample_source(
        &self,
        class: SourceClass,
        area: Area,
        taken: &mut Vec<Point2>,
        rng: &mut ChaCha8Rng,
    ) -> SourceEvent {
        let (wx, wy) = (area.width.floor() as i64, area.height.floor() as i64);
        let position = loop {
            let p = grid_point(wx, wy, rng);
            if !taken.contains(&p) {
                break p;
            }
        };
        taken.push(position);
        let (lo, hi) = class.spl_range();
        let spl = rng.random_range(lo..=hi);
        let signal_seed: u64 = rng.random();
        SourceEvent {
            class,
            position,
            spl,
            signal_id: format!("synth:{class}:{signal_seed:016x}"),
        }
    }
}

fn grid_point(wx: i64, wy: i64, rng: &mut ChaCha8Rng) -> Point2 {
    Point2::new(
        rng.random_range(0..=wx) as f64,
        rng.random_range(0..=wy) as f64,
    )
}

fn weighted_index(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut r = rng.random_range(0.0..total);
    for (i, w) in weights.iter().enumerate() {
        if r < *w {
            return i;
        }
        r -= w;
    }
    // floating-point leftovers land on the last non-zero weight
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

/// Samples a scene with the default sampler (5 nodes, 8-mic UCAs, 30 m spacing).
pub fn sample_scene(area: Area, mix: &ClassMix, seed: u64) -> Result<Scene> {
    SceneSampler::default().sample(area, mix, seed)
}

/// Node centers divided by the area size, in node order.
pub fn normalize_coords(scene: &Scene) -> Vec<[f64; 2]> {
    normalize_points(&scene.node_centers(), scene.area)
}

pub fn normalize_points(points: &[Point2], area: Area) -> Vec<[f64; 2]> {
    points
        .iter()
        .map(|p| [p.x / area.width, p.y / area.height])
        .collect()
}

/// SplitMix64 finalizer; used to derive independent per-scene seeds.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of scene `index` under `root`: `splitmix64(root ^ splitmix64(index))`.
pub fn derive_seed(root: u64, index: u64) -> u64 {
    splitmix64(root ^ splitmix64(index))
}
