use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::thread;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::parser::ValueSource;
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use wasn_core::formats::{self, FeatureIndexRecord};
use wasn_core::localize::Method;
use wasn_core::netsim::{
    Collector, CollectorOptions, FeatureKind, FeaturePacket, FrameAssembler, NodeEmitter,
};
use wasn_core::pipeline::{self, PipelineConfig, FEATURES_INDEX_FILE, MANIFEST_FILE};
use wasn_core::scene::Area;

/// Outdoor acoustic sensor network simulator and classical localization pipeline.
#[derive(Parser, Debug)]
#[command(name = "wasn", version)]
struct Cli {
    /// Log progress (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample scenes and write scenes.jsonl.
    Dataset {
        #[command(flatten)]
        config: ConfigArgs,
        /// Existing output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Render every scene of a manifest to per-node 8 kHz float WAV files.
    Simulate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract soundmaps and GTGrams from rendered clips.
    Features {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        manifest: PathBuf,
        /// Directory holding <scene_id>_node<k>.wav files.
        #[arg(long)]
        clips: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate source positions from soundmap features.
    Localize {
        #[command(flatten)]
        config: ConfigArgs,
        /// Directory containing features.jsonl.
        #[arg(long)]
        features: PathBuf,
        /// Output estimates file (JSON lines).
        #[arg(long)]
        out: PathBuf,
    },
    /// Score an estimates file against a manifest.
    Evaluate {
        #[arg(long)]
        estimates: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Output report (JSON).
        #[arg(long)]
        out: PathBuf,
    },
    /// Collect feature packets from node emitters and write aligned frames.
    ServeCollector {
        #[arg(long, default_value = "127.0.0.1")]
        bind: String,
        #[arg(long)]
        port: u16,
        /// Expected node ids are 0..nodes.
        #[arg(long, default_value_t = 5)]
        nodes: u8,
        /// Seconds after a frame's first packet before it is emitted incomplete.
        #[arg(long, default_value_t = 2.0)]
        timeout: f64,
        /// Stop after this many frames.
        #[arg(long)]
        max_frames: Option<usize>,
        /// Existing directory for frame_<timestamp>.json files.
        #[arg(long)]
        out: PathBuf,
    },
    /// Stream one node's features to a collector, one frame per scene.
    EmitNode {
        #[arg(long)]
        id: u8,
        /// Directory containing features.jsonl.
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        connect: String,
        /// Frames per second; 0 sends as fast as possible.
        #[arg(long, default_value_t = 1.0)]
        rate: f64,
        /// Timestamp of the first frame in epoch seconds.
        #[arg(long, default_value_t = 1_700_000_000)]
        start_time: u64,
    },
    /// Pack features and labels into dataset.wsml + labels.jsonl.
    ExportMl {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run dataset, simulate, features, localize and evaluate in one go.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        /// Existing output directory.
        #[arg(long)]
        out: PathBuf,
    },
}

/// Pipeline settings. A flag given on the command line overrides the
/// config file, which overrides the defaults shown here.
#[derive(Args, Debug)]
struct ConfigArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed; scene i uses a seed derived from it.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Areas as WxH in metres, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "140x140")]
    areas: Vec<Area>,
    /// Scenes per area.
    #[arg(long, default_value_t = 20)]
    count: usize,
    /// Array nodes per scene.
    #[arg(long, default_value_t = 5)]
    nodes: usize,
    /// Microphones per circular array.
    #[arg(long, default_value_t = 8)]
    mics: usize,
    /// Array radius in metres.
    #[arg(long, default_value_t = 0.11)]
    radius: f64,
    /// Clip length in seconds.
    #[arg(long, default_value_t = 1.0)]
    duration: f64,
    /// Background noise SPL range in dB, as LOW,HIGH.
    #[arg(long, value_delimiter = ',', default_value = "40,70")]
    noise_spl: Vec<f64>,
    /// Maximum interfering sources per scene (0 to 2).
    #[arg(long, default_value_t = 2)]
    max_interferers: usize,
    /// Relative weights of siren, scream, gunshot and no-target scenes.
    #[arg(long, value_delimiter = ',', default_value = "1,1,1,1")]
    class_weights: Vec<f64>,
    /// Air temperature in °C.
    #[arg(long, default_value_t = 20.0)]
    temperature: f64,
    /// Relative humidity in %.
    #[arg(long, default_value_t = 70.0)]
    humidity: f64,
    /// Base directory for relative wav: signal ids.
    #[arg(long)]
    wav_root: Option<PathBuf>,
    /// Soundmap sub-bands.
    #[arg(long, default_value_t = 6)]
    subbands: usize,
    /// Soundmap steering angles over 360°.
    #[arg(long, default_value_t = 360)]
    angles: usize,
    /// Gammatone channels.
    #[arg(long, default_value_t = 64)]
    gammatone_channels: usize,
    /// Localization method: plse or fuzzy.
    #[arg(long, default_value = "fuzzy")]
    method: Method,
    /// Fuzzy grid cell size in metres.
    #[arg(long, default_value_t = 1.0)]
    cell: f64,
    /// Fuzzy membership half-width in degrees.
    #[arg(long, default_value_t = 10.0)]
    halfwidth: f64,
    /// Down-weight low-confidence bearings in PLSE.
    #[arg(long)]
    weighted: bool,
}

impl ConfigArgs {
    /// Loads the config file (or defaults) and applies command-line flags.
    fn resolve(&self, m: &ArgMatches) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        let given = |id: &str| m.value_source(id) == Some(ValueSource::CommandLine);
        if given("seed") {
            cfg.seed = self.seed;
        }
        if given("areas") {
            cfg.areas = self.areas.clone();
        }
        if given("count") {
            cfg.scenes_per_area = self.count;
        }
        if given("nodes") {
            cfg.num_nodes = self.nodes;
        }
        if given("mics") {
            cfg.num_mics = self.mics;
        }
        if given("radius") {
            cfg.array_radius = self.radius;
        }
        if given("duration") {
            cfg.duration = self.duration;
        }
        if given("noise_spl") {
            let [lo, hi] = self.noise_spl[..] else {
                bail!("--noise-spl takes LOW,HIGH");
            };
            cfg.noise_spl = [lo, hi];
        }
        if given("max_interferers") {
            cfg.max_interferers = self.max_interferers;
        }
        if given("class_weights") {
            if self.class_weights.len() != 4 {
                bail!("--class-weights takes 4 comma-separated values");
            }
            cfg.target_weights.copy_from_slice(&self.class_weights);
        }
        if given("temperature") {
            cfg.temperature = self.temperature;
        }
        if given("humidity") {
            cfg.humidity = self.humidity;
        }
        if given("wav_root") {
            cfg.wav_root = self.wav_root.clone();
        }
        if given("subbands") {
            cfg.features.subbands = self.subbands;
        }
        if given("angles") {
            cfg.features.angles = self.angles;
        }
        if given("gammatone_channels") {
            cfg.features.gammatone_channels = self.gammatone_channels;
        }
        if given("method") {
            cfg.localize.method = self.method;
        }
        if given("cell") {
            cfg.localize.cell = self.cell;
        }
        if given("halfwidth") {
            cfg.localize.halfwidth = self.halfwidth;
        }
        if given("weighted") {
            cfg.localize.weighted = self.weighted;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    let matches = Cli::command().get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let sub = matches.subcommand().map(|(_, m)| m).expect("subcommand is required");
    match run(cli.command, sub) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command, m: &ArgMatches) -> Result<()> {
    match command {
        Command::Dataset { config, out } => {
            let cfg = config.resolve(m)?;
            let records = pipeline::stage_dataset(&cfg, &out)?;
            println!("{} scenes -> {}", records.len(), out.join(MANIFEST_FILE).display());
        }
        Command::Simulate {
            config,
            manifest,
            out,
        } => {
            let cfg = config.resolve(m)?;
            let index = pipeline::stage_simulate(&cfg, &manifest, &out)?;
            let files: usize = index.iter().map(|r| r.files.len()).sum();
            println!("{} scenes, {files} clips -> {}", index.len(), out.display());
        }
        Command::Features {
            config,
            manifest,
            clips,
            out,
        } => {
            let cfg = config.resolve(m)?;
            let index = pipeline::stage_features(&cfg, &manifest, &clips, &out)?;
            println!(
                "{} scenes -> {}",
                index.len(),
                out.join(FEATURES_INDEX_FILE).display()
            );
        }
        Command::Localize {
            config,
            features,
            out,
        } => {
            let cfg = config.resolve(m)?;
            let est = pipeline::stage_localize(&cfg.localize, &features, &out)?;
            println!("{} estimates ({}) -> {}", est.len(), cfg.localize.method, out.display());
        }
        Command::Evaluate {
            estimates,
            manifest,
            out,
        } => {
            let report = pipeline::stage_evaluate(&estimates, &manifest, &out)?;
            match report.rmse {
                Some(r) => println!(
                    "mean RMSE {r:.3} m over {} scenes -> {}",
                    report.rmse_per_scene.len(),
                    out.display()
                ),
                None => println!("no localized scenes -> {}", out.display()),
            }
        }
        Command::ServeCollector {
            bind,
            port,
            nodes,
            timeout,
            max_frames,
            out,
        } => serve_collector(&bind, port, nodes, timeout, max_frames, &out)?,
        Command::EmitNode {
            id,
            features,
            connect,
            rate,
            start_time,
        } => emit_node(id, &features, &connect, rate, start_time)?,
        Command::ExportMl {
            manifest,
            features,
            out,
        } => {
            let shape = pipeline::stage_export_ml(&manifest, &features, &out)?;
            println!(
                "exported N={} F={} U={} D={} H={} -> {}",
                shape.nodes,
                shape.subbands,
                shape.angles,
                shape.frames,
                shape.channels,
                out.display()
            );
        }
        Command::Run { config, out } => {
            let cfg = config.resolve(m)?;
            let summary = pipeline::run_pipeline(&cfg, &out)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
    }
    Ok(())
}

fn serve_collector(
    bind: &str,
    port: u16,
    nodes: u8,
    timeout: f64,
    max_frames: Option<usize>,
    out: &Path,
) -> Result<()> {
    if !out.is_dir() {
        bail!("output directory {} does not exist", out.display());
    }
    if !(timeout > 0.0 && timeout.is_finite()) {
        bail!("timeout must be positive");
    }
    let expected: BTreeSet<u8> = (0..nodes).collect();
    let assembler = FrameAssembler::new(expected, Duration::from_secs_f64(timeout));
    let collector = Collector::bind((bind, port), assembler)?;
    eprintln!("listening on {}", collector.local_addr()?);
    let opts = CollectorOptions {
        max_frames,
        exit_when_idle: true,
    };
    let stats = collector.run(opts, |frame| {
        let path = out.join(format!("frame_{}.json", frame.timestamp));
        formats::write_atomic(&path, &serde_json::to_vec(frame)?)?;
        log::info!(
            "frame t={} complete={} nodes={}",
            frame.timestamp,
            frame.complete,
            frame.nodes.len()
        );
        Ok(())
    })?;
    println!(
        "{} frames ({} incomplete) from {} connections, {} packets, {} decode errors",
        stats.frames, stats.incomplete_frames, stats.connections, stats.packets, stats.decode_errors
    );
    Ok(())
}

fn to_f32(values: impl IntoIterator<Item = f64>) -> Vec<f32> {
    values.into_iter().map(|v| v as f32).collect()
}

fn dim(n: usize) -> Result<u16> {
    u16::try_from(n).context("feature dimension exceeds 65535")
}

fn emit_node(id: u8, features: &Path, connect: &str, rate: f64, start_time: u64) -> Result<()> {
    if !(rate >= 0.0 && rate.is_finite()) {
        bail!("rate must be non-negative");
    }
    let index: Vec<FeatureIndexRecord> = formats::read_jsonl(&features.join(FEATURES_INDEX_FILE))?;
    let mut emitter = NodeEmitter::connect(connect)?;
    let mut sent = 0;
    for (i, rec) in index.iter().enumerate() {
        let Some(node) = rec.nodes.iter().find(|n| n.node == id as usize) else {
            continue;
        };
        let ts = start_time + i as u64;
        let map = formats::read_soundmap(&features.join(&node.soundmap))?;
        let gram = formats::read_gtgram(&features.join(&node.gtgram))?;
        let packets = [
            FeaturePacket::new(
                id,
                FeatureKind::Soundmap,
                ts,
                vec![dim(map.num_subbands())?, dim(map.num_angles())?],
                to_f32(map.map.iter().flatten().copied()),
            ),
            FeaturePacket::new(
                id,
                FeatureKind::Gtgram,
                ts,
                vec![dim(gram.num_frames())?, dim(gram.num_channels())?],
                to_f32(gram.matrix.iter().flatten().copied()),
            ),
            FeaturePacket::new(id, FeatureKind::Position, ts, vec![2], to_f32(node.norm_pos)),
        ];
        for p in &packets {
            emitter.send(p)?;
        }
        emitter.flush()?;
        sent += 1;
        if rate > 0.0 && i + 1 < index.len() {
            thread::sleep(Duration::from_secs_f64(1.0 / rate));
        }
    }
    println!("node {id}: sent {sent} frames to {connect}");
    Ok(())
}
