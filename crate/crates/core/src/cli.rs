//! `trackprune` command line: `run`, `eval` and `simulate`.
//!
//! Exit codes: 0 success, 1 configuration error, 2 dataset error,
//! 3 backend unreachable.

use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::bench::{generate, BenchOptions, Benchmark, DistractorMode};
use crate::eval::{
    evaluate_dataset, load_dataset, prediction_dir, write_prediction, write_report, Report,
};
use crate::frames::{DiskFrames, FrameSource};
use crate::model::{MaskTrack, PipelineConfig, Query, TrackId};
use crate::perception::{FrameEncoding, HttpPerception, Perception};
use crate::pipeline::Engine;
use crate::reasoner::scripted::ScriptedReasoner;
use crate::reasoner::{HttpReasoner, Reasoner, TemplateSet};

#[derive(Debug, Parser)]
#[command(
    name = "trackprune",
    version,
    about = "Training-free referring video object segmentation"
)]
pub struct Cli {
    /// More log output (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Segment every expression of a dataset and write predictions.
    Run(RunArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Generate a synthetic benchmark.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    Http,
    Sim,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub meta: PathBuf,
    /// Defaults to `frames/` next to the meta file.
    #[arg(long)]
    pub frames_root: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "http")]
    pub backend: BackendKind,
    #[arg(long)]
    pub perception_url: Option<String>,
    #[arg(long)]
    pub reasoner_url: Option<String>,
    #[arg(long, default_value = "default")]
    pub reasoner_model: String,
    #[arg(long, value_enum, default_value = "path")]
    pub frame_encoding: EncodingArg,
    /// Benchmark directory for `--backend sim`; defaults to the meta file's directory.
    #[arg(long)]
    pub sim_root: Option<PathBuf>,
    /// Directory of prompt template overrides.
    #[arg(long)]
    pub templates: Option<PathBuf>,
    /// TOML or JSON pipeline configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub num_frames: Option<usize>,
    #[arg(long)]
    pub max_extract_iters: Option<usize>,
    #[arg(long)]
    pub max_prune_iters: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub max_output_tokens: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Expressions processed concurrently.
    #[arg(long, default_value_t = 1)]
    pub parallel: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EncodingArg {
    Path,
    B64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub meta: PathBuf,
    /// Defaults to `frames/` next to the meta file.
    #[arg(long)]
    pub frames_root: Option<PathBuf>,
    /// Defaults to `annotations/` next to the meta file.
    #[arg(long)]
    pub annotations_root: Option<PathBuf>,
    #[arg(long)]
    pub pred_root: PathBuf,
    /// Report directory; defaults to the prediction root.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub boundary_tolerance: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub videos: usize,
    #[arg(long, default_value_t = 60)]
    pub frames: usize,
    #[arg(long, default_value_t = 128)]
    pub width: u32,
    #[arg(long, default_value_t = 96)]
    pub height: u32,
    #[arg(long, value_enum, default_value = "clear")]
    pub distractors: DistractorMode,
    /// JSON file with `worlds` and `expressions`; replaces random generation.
    #[arg(long)]
    pub world_spec: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Dataset(String),
    Unreachable(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Dataset(_) => 2,
            CliError::Unreachable(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Dataset(m) => write!(f, "dataset error: {m}"),
            CliError::Unreachable(m) => write!(f, "backend unreachable: {m}"),
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

fn dataset_err(e: impl std::fmt::Display) -> CliError {
    CliError::Dataset(e.to_string())
}

fn sibling(meta: &Path, name: &str) -> PathBuf {
    meta.parent().unwrap_or(Path::new(".")).join(name)
}

/// Defaults, then the config file, then flags.
pub fn resolve_config(args: &RunArgs) -> Result<PipelineConfig, CliError> {
    let mut config = match &args.config {
        None => PipelineConfig::default(),
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
            if path.extension().is_some_and(|e| e == "json") {
                serde_json::from_str(&text)
                    .map_err(|e| config_err(format!("{}: {e}", path.display())))?
            } else {
                toml::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?
            }
        }
    };
    if let Some(v) = args.num_frames {
        config.num_frames = v;
    }
    if let Some(v) = args.max_extract_iters {
        config.max_extract_iters = v;
    }
    if let Some(v) = args.max_prune_iters {
        config.max_prune_iters = v;
    }
    if let Some(v) = args.temperature {
        config.temperature = v;
    }
    if let Some(v) = args.max_output_tokens {
        config.max_output_tokens = v;
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    config.validate().map_err(config_err)?;
    Ok(config)
}

/// TCP connect to the URL's host and port.
pub fn preflight(url: &str) -> Result<(), CliError> {
    let parsed = url::Url::parse(url).map_err(|e| config_err(format!("bad URL {url:?}: {e}")))?;
    let addrs = parsed
        .socket_addrs(|| None)
        .map_err(|e| CliError::Unreachable(format!("{url}: {e}")))?;
    let reachable = addrs
        .iter()
        .any(|a| TcpStream::connect_timeout(a, Duration::from_secs(3)).is_ok());
    if reachable {
        Ok(())
    } else {
        Err(CliError::Unreachable(format!("cannot connect to {url}")))
    }
}

type Backends = (Arc<dyn Reasoner>, Arc<dyn Perception>, Arc<dyn FrameSource>);

fn backends(args: &RunArgs) -> Result<Backends, CliError> {
    match args.backend {
        BackendKind::Sim => {
            let root = args
                .sim_root
                .clone()
                .unwrap_or_else(|| sibling(&args.meta, ""));
            let bench = Benchmark::load(&root).map_err(config_err)?;
            let sim = Arc::new(bench.perception().map_err(config_err)?);
            let reasoner =
                ScriptedReasoner::from_script(&bench.script, &sim).map_err(config_err)?;
            Ok((Arc::new(reasoner), sim.clone(), sim))
        }
        BackendKind::Http => {
            let perception_url = args
                .perception_url
                .as_deref()
                .ok_or_else(|| config_err("--perception-url is required with --backend http"))?;
            let reasoner_url = args
                .reasoner_url
                .as_deref()
                .ok_or_else(|| config_err("--reasoner-url is required with --backend http"))?;
            preflight(perception_url)?;
            preflight(reasoner_url)?;
            let encoding = match args.frame_encoding {
                EncodingArg::Path => FrameEncoding::Path,
                EncodingArg::B64 => FrameEncoding::B64,
            };
            Ok((
                Arc::new(HttpReasoner::new(reasoner_url, &args.reasoner_model)),
                Arc::new(HttpPerception::new(perception_url).with_encoding(encoding)),
                Arc::new(DiskFrames),
            ))
        }
    }
}

/// Outcome counts of a `run`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunSummary {
    pub expressions: usize,
    pub failed: usize,
    pub empty: usize,
}

pub fn cmd_run(args: &RunArgs) -> Result<RunSummary, CliError> {
    let config = resolve_config(args)?;
    if args.parallel == 0 {
        return Err(config_err("--parallel must be at least 1"));
    }
    let frames_root = args
        .frames_root
        .clone()
        .unwrap_or_else(|| sibling(&args.meta, "frames"));
    let dataset = load_dataset(&args.meta, &frames_root).map_err(dataset_err)?;
    let (reasoner, perception, frames) = backends(args)?;
    let mut engine = Engine::new(reasoner, perception, frames, config).map_err(config_err)?;
    if let Some(dir) = &args.templates {
        engine = engine.with_templates(TemplateSet::load_dir(dir).map_err(config_err)?);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.parallel)
        .build()
        .map_err(config_err)?;
    let failed = AtomicUsize::new(0);
    let empty = AtomicUsize::new(0);
    let write_failures = AtomicUsize::new(0);
    pool.install(|| {
        dataset.expressions.par_iter().for_each(|rec| {
            let video = &dataset.videos[&rec.video_id];
            let dir = prediction_dir(&args.out, &rec.video_id, &rec.expression_id);
            let outcome = Query::new(rec.text.clone())
                .map_err(|e| e.to_string())
                .and_then(|q| engine.run_expression(video, &q).map_err(|e| e.to_string()));
            let written = match outcome {
                Ok(out) => {
                    if out.trace.empty_prediction {
                        empty.fetch_add(1, Ordering::Relaxed);
                    }
                    write_prediction(&dir, video, &out.prediction, Some(&out.trace))
                }
                Err(e) => {
                    log::error!("{}/{}: {e}", rec.video_id, rec.expression_id);
                    failed.fetch_add(1, Ordering::Relaxed);
                    empty.fetch_add(1, Ordering::Relaxed);
                    write_prediction(&dir, video, &MaskTrack::new(TrackId(0), "prediction"), None)
                }
            };
            if let Err(e) = written {
                log::error!("{}/{}: {e}", rec.video_id, rec.expression_id);
                write_failures.fetch_add(1, Ordering::Relaxed);
            }
        })
    });
    if write_failures.load(Ordering::Relaxed) > 0 {
        return Err(dataset_err(format!(
            "{} predictions could not be written under {}",
            write_failures.load(Ordering::Relaxed),
            args.out.display()
        )));
    }
    Ok(RunSummary {
        expressions: dataset.expressions.len(),
        failed: failed.into_inner(),
        empty: empty.into_inner(),
    })
}

pub fn cmd_eval(args: &EvalArgs) -> Result<Report, CliError> {
    let frames_root = args
        .frames_root
        .clone()
        .unwrap_or_else(|| sibling(&args.meta, "frames"));
    let ann_root = args
        .annotations_root
        .clone()
        .unwrap_or_else(|| sibling(&args.meta, "annotations"));
    let tolerance = args
        .boundary_tolerance
        .unwrap_or(PipelineConfig::default().boundary_tolerance_ratio);
    if tolerance.is_nan() || tolerance <= 0.0 {
        return Err(config_err("--boundary-tolerance must be > 0"));
    }
    let dataset = load_dataset(&args.meta, &frames_root).map_err(dataset_err)?;
    let report =
        evaluate_dataset(&dataset, &ann_root, &args.pred_root, tolerance).map_err(dataset_err)?;
    let out = args.out.clone().unwrap_or_else(|| args.pred_root.clone());
    write_report(&out, &report).map_err(dataset_err)?;
    Ok(report)
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<Benchmark, CliError> {
    let bench = match &args.world_spec {
        Some(path) => Benchmark::from_spec(path).map_err(config_err)?,
        None => {
            let opts = BenchOptions {
                seed: args.seed,
                videos: args.videos,
                frames: args.frames,
                width: args.width,
                height: args.height,
                distractors: args.distractors,
            };
            opts.validate().map_err(config_err)?;
            generate(&opts)
        }
    };
    bench.write(&args.out).map_err(dataset_err)?;
    Ok(bench)
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .try_init();
}

// Like println!, but a closed stdout (e.g. `| head`) is not an error.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

pub fn run_cli(cli: Cli) -> Result<(), CliError> {
    init_logging(cli.verbose);
    match cli.command {
        Command::Run(args) => {
            let s = cmd_run(&args)?;
            say!(
                "{} expressions: {} failed, {} empty predictions; written to {}",
                s.expressions,
                s.failed,
                s.empty,
                args.out.display()
            );
        }
        Command::Eval(args) => {
            let r = cmd_eval(&args)?;
            let o = r.overall;
            say!(
                "J: {:.1}  F: {:.1}  J&F: {:.1}  empty: {:.1}%  ({} expressions)",
                100.0 * o.j,
                100.0 * o.f,
                100.0 * o.jf,
                o.empty_mask_ratio,
                o.count
            );
            for (tag, s) in &r.by_tag {
                say!(
                    "  {tag}: J&F {:.1}  empty {:.1}%  ({})",
                    100.0 * s.jf,
                    s.empty_mask_ratio,
                    s.count
                );
            }
        }
        Command::Simulate(args) => {
            let b = cmd_simulate(&args)?;
            say!(
                "{} videos, {} expressions written to {}",
                b.worlds.len(),
                b.script.expressions.len(),
                args.out.display()
            );
        }
    }
    Ok(())
}

/// Parses `std::env::args` and runs; returns the process exit code.
pub fn main_from_env() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run_cli(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
