//! Stage functions and the end-to-end driver behind the CLI.
//!
//! Every stage reads only files written by earlier stages and writes its
//! outputs atomically, so a failing stage never leaves partial artifacts
//! and any stage can be re-run on its own.
//!
//! Seeds: scene `i` (counted across all areas in order) uses
//! `derive_seed(root, i)`. Everything random about a scene, including its
//! background noise level and noise samples, derives from that seed.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsp::{gtgram, GammatoneBank, GtgramFeature};
use crate::error::{Error, Result};
use crate::formats::{
    self, EstimateRecord, FeatureIndexRecord, MlLabel, MlSample, MlShape, NodeFeatureRecord,
};
use crate::localize::{
    doa_from_soundmap, fuzzy_localize, plse_triangulate_with, Bearing, BearingSet, FuzzyOptions,
    LocalizationEstimate, Method, PlseOptions,
};
use crate::metrics::{evaluate, EvalReport, Prediction, Truth};
use crate::propagate::{AttenuationModel, MultichannelClip, RenderOptions};
use crate::scene::{
    derive_seed, make_uca, normalize_points, read_manifest, splitmix64, write_manifest,
    ArrayGeometry, Area, ClassMix, Scene, SceneRecord, SceneSampler, SourceClass,
    DEFAULT_ARRAY_RADIUS, DEFAULT_NUM_MICS, DEFAULT_NUM_NODES, MAX_PLACEMENT_ATTEMPTS,
    MIN_NODE_SPACING,
};
use crate::signals::SignalResolver;
use crate::soundmap::{linear_subband_edges, srp_phat_map, SoundmapConfig, SoundmapFeature};
use crate::{SAMPLE_RATE, SPEED_OF_SOUND};

pub const MANIFEST_FILE: &str = "scenes.jsonl";
pub const CLIPS_INDEX_FILE: &str = "clips.jsonl";
pub const FEATURES_INDEX_FILE: &str = "features.jsonl";
pub const ESTIMATES_FILE: &str = "estimates.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const ML_FILE: &str = "dataset.wsml";
pub const ML_LABELS_FILE: &str = "labels.jsonl";

const NOISE_LEVEL_SALT: u64 = 0x6c_6576_656c;

pub fn clip_file_name(scene_id: &str, node: usize) -> String {
    format!("{scene_id}_node{node}.wav")
}

fn soundmap_file_name(scene_id: &str, node: usize) -> String {
    format!("{scene_id}_node{node}.smap")
}

fn gtgram_file_name(scene_id: &str, node: usize) -> String {
    format!("{scene_id}_node{node}.gtg")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub subbands: usize,
    pub angles: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub stft_frame: usize,
    pub stft_hop: usize,
    pub gammatone_channels: usize,
    pub gtgram_frame: f64,
    pub gtgram_hop: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            subbands: 6,
            angles: 360,
            fmin: 20.0,
            fmax: 4000.0,
            stft_frame: 256,
            stft_hop: 128,
            gammatone_channels: 64,
            gtgram_frame: 0.1,
            gtgram_hop: 0.05,
        }
    }
}

impl FeatureConfig {
    pub fn soundmap_config(&self) -> SoundmapConfig {
        SoundmapConfig {
            subband_edges: linear_subband_edges(self.fmin, self.fmax, self.subbands),
            angles: (0..self.angles)
                .map(|k| k as f64 * 360.0 / self.angles as f64)
                .collect(),
            frame_len: self.stft_frame,
            hop: self.stft_hop,
            speed_of_sound: SPEED_OF_SOUND,
        }
    }

    pub fn gammatone_bank(&self) -> Result<GammatoneBank> {
        GammatoneBank::new(self.gammatone_channels, self.fmin, self.fmax, SAMPLE_RATE)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalizeConfig {
    pub method: Method,
    /// Fuzzy grid cell size, m.
    pub cell: f64,
    /// Fuzzy triangular membership half-width, degrees.
    pub halfwidth: f64,
    /// Confidence-weighted PLSE rows.
    pub weighted: bool,
}

impl Default for LocalizeConfig {
    fn default() -> Self {
        Self {
            method: Method::Fuzzy,
            cell: 1.0,
            halfwidth: 10.0,
            weighted: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub areas: Vec<Area>,
    pub scenes_per_area: usize,
    pub num_nodes: usize,
    pub num_mics: usize,
    pub array_radius: f64,
    pub duration: f64,
    /// Background noise level range in dB; each scene draws uniformly from it.
    pub noise_spl: [f64; 2],
    /// Relative weights of siren, scream, gunshot and "no target" scenes.
    pub target_weights: [f64; 4],
    pub max_interferers: usize,
    pub temperature: f64,
    pub humidity: f64,
    /// Base directory for relative `wav:` signal ids.
    pub wav_root: Option<PathBuf>,
    pub features: FeatureConfig,
    pub localize: LocalizeConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            areas: vec![Area {
                width: 140.0,
                height: 140.0,
            }],
            scenes_per_area: 20,
            num_nodes: DEFAULT_NUM_NODES,
            num_mics: DEFAULT_NUM_MICS,
            array_radius: DEFAULT_ARRAY_RADIUS,
            duration: 1.0,
            noise_spl: [40.0, 70.0],
            target_weights: ClassMix::default().target_weights,
            max_interferers: 2,
            temperature: 20.0,
            humidity: 70.0,
            wav_root: None,
            features: FeatureConfig::default(),
            localize: LocalizeConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Parses TOML; errors name the offending line and key.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(Error::Config(format!("{field}: {why}")));
        if self.areas.is_empty() {
            return bad("areas", "at least one area is required");
        }
        for a in &self.areas {
            Area::new(a.width, a.height).map_err(|e| Error::Config(format!("areas: {e}")))?;
        }
        if self.num_nodes == 0 {
            return bad("num_nodes", "must be positive");
        }
        if self.num_mics < 2 {
            return bad("num_mics", "need at least 2 microphones");
        }
        if !(self.array_radius > 0.0) {
            return bad("array_radius", "must be positive");
        }
        if !(self.duration > 0.0) {
            return bad("duration", "must be positive");
        }
        let [lo, hi] = self.noise_spl;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return bad("noise_spl", "expected [low, high] with low <= high");
        }
        if self.max_interferers > 2 {
            return bad("max_interferers", "at most 2");
        }
        if !(self.humidity > 0.0 && self.humidity <= 100.0) {
            return bad("humidity", "must be in (0, 100]");
        }
        let f = &self.features;
        if f.subbands == 0 || f.angles == 0 || f.gammatone_channels < 2 {
            return bad("features", "subbands, angles and gammatone_channels must be positive");
        }
        if !(f.fmin > 0.0 && f.fmin < f.fmax && f.fmax <= SAMPLE_RATE as f64 / 2.0) {
            return bad("features.fmin/fmax", "need 0 < fmin < fmax <= 4000");
        }
        if f.stft_frame < 2 || f.stft_hop == 0 {
            return bad("features.stft_frame/stft_hop", "bad STFT framing");
        }
        if !(f.gtgram_frame > 0.0 && f.gtgram_hop > 0.0) {
            return bad("features.gtgram_frame/gtgram_hop", "must be positive");
        }
        let l = &self.localize;
        if !(l.cell > 0.0 && l.halfwidth > 0.0) {
            return bad("localize.cell/halfwidth", "must be positive");
        }
        Ok(())
    }

    pub fn array_geometry(&self) -> ArrayGeometry {
        ArrayGeometry {
            num_mics: self.num_mics,
            radius: self.array_radius,
            sample_rate: SAMPLE_RATE,
            duration: self.duration,
        }
    }

    pub fn sampler(&self) -> SceneSampler {
        SceneSampler {
            num_nodes: self.num_nodes,
            min_spacing: MIN_NODE_SPACING,
            max_attempts: MAX_PLACEMENT_ATTEMPTS,
            array: self.array_geometry(),
        }
    }

    pub fn class_mix(&self) -> ClassMix {
        ClassMix {
            target_weights: self.target_weights,
            max_interferers: self.max_interferers,
        }
    }

    pub fn attenuation_model(&self) -> AttenuationModel {
        AttenuationModel {
            temperature_c: self.temperature,
            humidity: self.humidity,
            ..AttenuationModel::default()
        }
    }

    pub fn signal_resolver(&self) -> SignalResolver {
        let mut r = SignalResolver::new(
            SAMPLE_RATE,
            (self.duration * SAMPLE_RATE as f64).round() as usize,
        );
        r.wav_root = self.wav_root.clone();
        r
    }
}

/// Samples every scene of the dataset; ids are `s<index>`.
pub fn generate_scenes(cfg: &PipelineConfig) -> Result<Vec<SceneRecord>> {
    cfg.validate()?;
    let sampler = cfg.sampler();
    let mix = cfg.class_mix();
    let jobs: Vec<(usize, Area)> = cfg
        .areas
        .iter()
        .flat_map(|&a| std::iter::repeat_n(a, cfg.scenes_per_area))
        .enumerate()
        .collect();
    jobs.par_iter()
        .map(|&(i, area)| {
            let mut scene = sampler.sample(area, &mix, derive_seed(cfg.seed, i as u64))?;
            scene.scene_id = format!("s{i:06}");
            Ok(scene.to_record())
        })
        .collect()
}

/// Writes `scenes.jsonl` into `out_dir` (which must exist).
pub fn stage_dataset(cfg: &PipelineConfig, out_dir: &Path) -> Result<Vec<SceneRecord>> {
    ensure_dir(out_dir)?;
    let records = generate_scenes(cfg)?;
    let mut buf = Vec::new();
    write_manifest(&mut buf, &records)?;
    formats::write_atomic(&out_dir.join(MANIFEST_FILE), &buf)?;
    log::info!("wrote {} scenes to {}", records.len(), out_dir.display());
    Ok(records)
}

/// Background noise level of a scene, drawn from the configured range.
pub fn scene_noise_spl(cfg: &PipelineConfig, seed: u64) -> f64 {
    let [lo, hi] = cfg.noise_spl;
    if lo == hi {
        return lo;
    }
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ NOISE_LEVEL_SALT)).random_range(lo..=hi)
}

/// Renders one scene; returns its noise level and one clip per node.
pub fn simulate_scene(
    cfg: &PipelineConfig,
    record: &SceneRecord,
) -> Result<(f64, Vec<MultichannelClip>)> {
    let scene = Scene::from_record(record, &cfg.array_geometry())?;
    let signals = cfg.signal_resolver().resolve_scene(&scene)?;
    let noise = scene_noise_spl(cfg, scene.seed);
    let opts = RenderOptions {
        noise_spl: Some(noise),
        model: cfg.attenuation_model(),
        ..RenderOptions::default()
    };
    Ok((noise, crate::propagate::render_scene(&scene, &signals, &opts)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipIndexRecord {
    pub scene_id: String,
    pub noise_spl: f64,
    pub files: Vec<String>,
}

/// Renders every scene of `manifest` into `<scene_id>_node<k>.wav` files.
pub fn stage_simulate(
    cfg: &PipelineConfig,
    manifest: &Path,
    out_dir: &Path,
) -> Result<Vec<ClipIndexRecord>> {
    ensure_dir(out_dir)?;
    let records = read_manifest(manifest)?;
    let index = records
        .par_iter()
        .map(|rec| {
            let (noise_spl, clips) = simulate_scene(cfg, rec)?;
            let mut files = Vec::with_capacity(clips.len());
            for clip in &clips {
                let name = clip_file_name(&rec.scene_id, clip.node_id);
                formats::write_atomic_with(&out_dir.join(&name), |tmp| clip.write_wav(tmp))?;
                files.push(name);
            }
            Ok(ClipIndexRecord {
                scene_id: rec.scene_id.clone(),
                noise_spl,
                files,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    formats::write_jsonl(&out_dir.join(CLIPS_INDEX_FILE), &index)?;
    log::info!("rendered {} scenes into {}", index.len(), out_dir.display());
    Ok(index)
}

/// Soundmap and GTGram (from microphone 0) for every node of a scene.
pub fn extract_features(
    cfg: &PipelineConfig,
    bank: &GammatoneBank,
    nodes: &[crate::Point2],
    clips: &[MultichannelClip],
) -> Result<(Vec<SoundmapFeature>, Vec<GtgramFeature>)> {
    if nodes.len() != clips.len() {
        return Err(Error::MismatchedNodes(format!(
            "{} nodes but {} clips",
            nodes.len(),
            clips.len()
        )));
    }
    let smap_cfg = cfg.features.soundmap_config();
    let mut maps = Vec::with_capacity(clips.len());
    let mut grams = Vec::with_capacity(clips.len());
    for (&center, clip) in nodes.iter().zip(clips) {
        let array = make_uca(clip.num_channels(), cfg.array_radius, center)?;
        maps.push(srp_phat_map(clip, &array, &smap_cfg)?);
        let reference = clip
            .samples
            .first()
            .ok_or(Error::TooFewChannels(0))?;
        grams.push(gtgram(
            reference,
            bank,
            cfg.features.gtgram_frame,
            cfg.features.gtgram_hop,
            clip.node_id,
        )?);
    }
    Ok((maps, grams))
}

/// Computes features from the clips in `clips_dir` for every scene of
/// `manifest`, writing `.smap`/`.gtg` files and `features.jsonl`.
pub fn stage_features(
    cfg: &PipelineConfig,
    manifest: &Path,
    clips_dir: &Path,
    out_dir: &Path,
) -> Result<Vec<FeatureIndexRecord>> {
    ensure_dir(out_dir)?;
    let records = read_manifest(manifest)?;
    let bank = cfg.features.gammatone_bank()?;
    let index = records
        .par_iter()
        .map(|rec| {
            let clips = (0..rec.nodes.len())
                .map(|k| {
                    let clip = MultichannelClip::read_wav(
                        &clips_dir.join(clip_file_name(&rec.scene_id, k)),
                        k,
                    )?;
                    if clip.sample_rate != SAMPLE_RATE {
                        return Err(Error::invalid(format!(
                            "clip for {} node {k} is {} Hz, expected {SAMPLE_RATE}",
                            rec.scene_id, clip.sample_rate
                        )));
                    }
                    Ok(clip)
                })
                .collect::<Result<Vec<_>>>()?;
            let (maps, grams) = extract_features(cfg, &bank, &rec.nodes, &clips)?;
            let norm = normalize_points(&rec.nodes, rec.area);
            let mut nodes = Vec::with_capacity(maps.len());
            for (k, (map, gram)) in maps.iter().zip(&grams).enumerate() {
                let smap = soundmap_file_name(&rec.scene_id, k);
                let gtg = gtgram_file_name(&rec.scene_id, k);
                formats::write_soundmap(&out_dir.join(&smap), map)?;
                formats::write_gtgram(&out_dir.join(&gtg), gram)?;
                nodes.push(NodeFeatureRecord {
                    node: k,
                    pos: rec.nodes[k],
                    norm_pos: norm[k],
                    soundmap: smap,
                    gtgram: gtg,
                });
            }
            Ok(FeatureIndexRecord {
                scene_id: rec.scene_id.clone(),
                area: rec.area,
                nodes,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    formats::write_jsonl(&out_dir.join(FEATURES_INDEX_FILE), &index)?;
    log::info!("extracted features for {} scenes", index.len());
    Ok(index)
}

/// Bearings from the nodes whose soundmaps give an unambiguous DOA.
pub fn bearings_from_maps(nodes: &[crate::Point2], maps: &[SoundmapFeature]) -> BearingSet {
    let bearings = nodes
        .iter()
        .zip(maps)
        .filter_map(|(&node, map)| match doa_from_soundmap(map) {
            Ok(doa) => Some(Bearing {
                node,
                bearing: doa.bearing,
                confidence: doa.confidence,
            }),
            Err(e) => {
                log::debug!("node at {node:?}: {e}");
                None
            }
        })
        .collect();
    BearingSet::new(bearings)
}

/// Localizes from a bearing set with the configured method; `None` when
/// there are too few bearings or their geometry is degenerate.
pub fn localize_bearings(
    cfg: &LocalizeConfig,
    bearings: &BearingSet,
    area: Area,
) -> Option<LocalizationEstimate> {
    let result = match cfg.method {
        Method::Plse => plse_triangulate_with(
            bearings,
            PlseOptions {
                weighted: cfg.weighted,
            },
        ),
        Method::Fuzzy => fuzzy_localize(
            bearings,
            area,
            FuzzyOptions {
                cell: cfg.cell,
                halfwidth: cfg.halfwidth,
            },
        ),
    };
    match result {
        Ok(est) => Some(est.clamped(area)),
        Err(e) => {
            log::debug!("no estimate: {e}");
            None
        }
    }
}

/// Localizes every scene of a feature index.
pub fn stage_localize(
    cfg: &LocalizeConfig,
    features_dir: &Path,
    out: &Path,
) -> Result<Vec<EstimateRecord>> {
    let index: Vec<FeatureIndexRecord> =
        formats::read_jsonl(&features_dir.join(FEATURES_INDEX_FILE))?;
    let estimates: Vec<Option<EstimateRecord>> = index
        .par_iter()
        .map(|rec| {
            let maps = rec
                .nodes
                .iter()
                .map(|n| formats::read_soundmap(&features_dir.join(&n.soundmap)))
                .collect::<Result<Vec<_>>>()?;
            let positions: Vec<_> = rec.nodes.iter().map(|n| n.pos).collect();
            let bearings = bearings_from_maps(&positions, &maps);
            Ok(localize_bearings(cfg, &bearings, rec.area).map(|est| EstimateRecord {
                scene_id: rec.scene_id.clone(),
                method: est.method.to_string(),
                x: est.position.x,
                y: est.position.y,
                residual: est.residual,
                class: None,
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    let skipped = estimates.iter().filter(|e| e.is_none()).count();
    if skipped > 0 {
        log::warn!("{skipped} of {} scenes produced no estimate", estimates.len());
    }
    let estimates: Vec<EstimateRecord> = estimates.into_iter().flatten().collect();
    formats::write_jsonl(out, &estimates)?;
    Ok(estimates)
}

/// Ground truth of a manifest record.
pub fn truth_of(record: &SceneRecord) -> Truth {
    let target = record.sources.iter().find(|s| s.class.is_active());
    Truth {
        scene_id: record.scene_id.clone(),
        area: record.area,
        class: target.map_or(SourceClass::Interfering, |s| s.class),
        position: target.map(|s| s.position),
    }
}

/// Scores an estimates file against a manifest.
pub fn stage_evaluate(estimates: &Path, manifest: &Path, out: &Path) -> Result<EvalReport> {
    let truths: Vec<Truth> = read_manifest(manifest)?.iter().map(truth_of).collect();
    let records: Vec<EstimateRecord> = formats::read_jsonl(estimates)?;
    let mut seen = BTreeSet::new();
    for r in &records {
        if !seen.insert(r.scene_id.as_str()) {
            return Err(Error::Format {
                path: estimates.to_owned(),
                reason: format!("duplicate estimate for scene {}", r.scene_id),
            });
        }
    }
    let preds: Vec<Prediction> = records
        .iter()
        .map(|r| Prediction {
            scene_id: r.scene_id.clone(),
            class: r.class,
            position: (r.x.is_finite() && r.y.is_finite()).then(|| crate::Point2::new(r.x, r.y)),
        })
        .collect();
    let report = evaluate(&truths, &preds)?;
    formats::write_atomic(out, &serde_json::to_vec_pretty(&report)?)?;
    Ok(report)
}

/// Packs features and labels into `dataset.wsml` + `labels.jsonl`.
pub fn stage_export_ml(manifest: &Path, features_dir: &Path, out_dir: &Path) -> Result<MlShape> {
    ensure_dir(out_dir)?;
    let records = read_manifest(manifest)?;
    let index: Vec<FeatureIndexRecord> =
        formats::read_jsonl(&features_dir.join(FEATURES_INDEX_FILE))?;
    let loaded = index
        .par_iter()
        .map(|rec| {
            let mut sample = MlSample {
                soundmap: Vec::new(),
                gtgram: Vec::new(),
                position: Vec::new(),
            };
            let mut shape = None;
            for n in &rec.nodes {
                let map = formats::read_soundmap(&features_dir.join(&n.soundmap))?;
                let gram = formats::read_gtgram(&features_dir.join(&n.gtgram))?;
                let s = (map.num_subbands(), map.num_angles(), gram.num_frames(), gram.num_channels());
                if shape.is_some_and(|prev| prev != s) {
                    return Err(Error::invalid(format!("inconsistent feature shapes in {}", rec.scene_id)));
                }
                shape = Some(s);
                sample.soundmap.extend(map.map.iter().flatten());
                sample.gtgram.extend(gram.matrix.iter().flatten());
                sample.position.extend(n.norm_pos);
            }
            let (f, u, d, h) = shape.unwrap_or_default();
            Ok((
                MlShape {
                    nodes: rec.nodes.len(),
                    subbands: f,
                    angles: u,
                    frames: d,
                    channels: h,
                },
                sample,
            ))
        })
        .collect::<Result<Vec<_>>>()?;

    let shape = match loaded.first() {
        Some((s, _)) => *s,
        None => return Err(Error::invalid("feature index is empty")),
    };
    if let Some(i) = loaded.iter().position(|(s, _)| *s != shape) {
        return Err(Error::invalid(format!(
            "scene {} has feature shape {:?}, expected {shape:?}",
            index[i].scene_id, loaded[i].0
        )));
    }
    let labels = index
        .iter()
        .enumerate()
        .map(|(i, rec)| {
            let scene = records
                .iter()
                .find(|r| r.scene_id == rec.scene_id)
                .ok_or_else(|| Error::invalid(format!("scene {} missing from manifest", rec.scene_id)))?;
            let truth = truth_of(scene);
            Ok(MlLabel {
                index: i,
                scene_id: rec.scene_id.clone(),
                class: truth.class,
                class_index: truth.class.index(),
                target: truth.position.map(|p| normalize_points(&[p], rec.area)[0]),
                area: rec.area,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let samples: Vec<MlSample> = loaded.into_iter().map(|(_, s)| s).collect();
    formats::write_atomic(&out_dir.join(ML_FILE), &formats::encode_ml(shape, &samples)?)?;
    formats::write_jsonl(&out_dir.join(ML_LABELS_FILE), &labels)?;
    Ok(shape)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenes: usize,
    pub clips: usize,
    pub feature_files: usize,
    pub estimates: usize,
    pub method: Method,
    pub report: EvalReport,
}

/// Runs dataset → simulate → features → localize → evaluate under
/// `out_dir`, which must already exist. Stage outputs go to
/// `scenes.jsonl`, `clips/`, `features/`, `estimates.jsonl`,
/// `report.json` and `summary.json`.
pub fn run_pipeline(cfg: &PipelineConfig, out_dir: &Path) -> Result<RunSummary> {
    cfg.validate()?;
    ensure_dir(out_dir)?;
    let records = stage_dataset(cfg, out_dir)?;
    let manifest = out_dir.join(MANIFEST_FILE);
    let clips_dir = out_dir.join("clips");
    let features_dir = out_dir.join("features");
    for d in [&clips_dir, &features_dir] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let clips = stage_simulate(cfg, &manifest, &clips_dir)?;
    let features = stage_features(cfg, &manifest, &clips_dir, &features_dir)?;
    let estimates_path = out_dir.join(ESTIMATES_FILE);
    let estimates = stage_localize(&cfg.localize, &features_dir, &estimates_path)?;
    let report = stage_evaluate(&estimates_path, &manifest, &out_dir.join(REPORT_FILE))?;
    let summary = RunSummary {
        scenes: records.len(),
        clips: clips.iter().map(|c| c.files.len()).sum(),
        feature_files: features.iter().map(|f| 2 * f.nodes.len()).sum(),
        estimates: estimates.len(),
        method: cfg.localize.method,
        report,
    };
    formats::write_atomic(
        &out_dir.join(SUMMARY_FILE),
        &serde_json::to_vec_pretty(&summary)?,
    )?;
    Ok(summary)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    match fs::metadata(dir) {
        Ok(m) if m.is_dir() => Ok(()),
        Ok(_) => Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotADirectory, "not a directory"),
        )),
        Err(e) => Err(Error::io(dir, e)),
    }
}
