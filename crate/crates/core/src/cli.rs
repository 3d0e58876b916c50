//! Command-line surface of the `hflow` binary.
//!
//! Every artifact-producing command writes its outputs plus one
//! `run_manifest.json` under `--out`. Exit codes: 0 success, 1 invalid input,
//! 2 runtime or numeric failure (including a failed `verify` suite).

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;

use crate::data::episode::{domain, keyed_rng};
use crate::data::{
    generate_synthetic, load_embeddings, save_embeddings, CovarianceMode, DatasetManifest,
    EmbeddingDataset, EpisodeSpec, SplitTag, SynthSpec,
};
use crate::error::{Error, Result};
use crate::experiment::{
    evaluate_episodes, run_ablation, select_per_class, train_adapter_on, EvalReport,
};
use crate::flow::ReflectorActivation;
use crate::losses::BetaSchedule;
use crate::model::base::DEFAULT_EMBEDDING_DIM;
use crate::model::checkpoint::{load_adapter, load_base, save_adapter, save_base};
use crate::model::{
    base_forward, train_base, AdapterCheckpoint, BaseCheckpoint, LogRow, ToyBaseEncoder,
    TrainConfig,
};
use crate::par::Execution;
use crate::verify::{run_suites, VerifyConfig, SUITES};

pub const EMBEDDINGS_FILE: &str = "embeddings.hfemb";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";
pub const BASE_FILE: &str = "base.hfbase";
pub const ADAPTER_FILE: &str = "adapter.hflow";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const EVAL_FILE: &str = "eval.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const ABLATION_FILE: &str = "ablation.csv";

#[derive(Debug, Parser)]
#[command(name = "hflow", version, about = "Householder-flow few-shot adapter toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic HFEMB1 dataset and a seen/novel manifest.
    GenSynth(GenSynthArgs),
    /// Train the toy base encoder on the seen classes.
    TrainBase(TrainBaseArgs),
    /// Run a dataset through a trained base encoder and save its embeddings.
    Extract(ExtractArgs),
    /// Train an adapter on k labelled records per novel class.
    TrainAdapter(TrainAdapterArgs),
    /// Episodic few-shot evaluation of an adapter checkpoint.
    Eval(EvalArgs),
    /// Flow-length by shot-count grid of train + eval cells.
    Ablate(AblateArgs),
    /// Run the numerical property suites.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct GenSynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    pub classes: u64,
    #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u64).range(1..))]
    pub dim: u64,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    pub samples_per_class: u64,
    #[arg(long, value_enum, default_value_t = CovarianceMode::Isotropic)]
    pub covariance: CovarianceMode,
    #[arg(long, default_value_t = 1.0)]
    pub noise_scale: f64,
    #[arg(long, default_value_t = 2.0)]
    pub mean_scale: f64,
    /// Classes assigned to the novel split; the rest are seen. Defaults to all.
    #[arg(long)]
    pub novel_classes: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    /// HFEMB1 file. Optional when --manifest names one.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Seen/novel split manifest.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OptimArgs {
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    pub patience: u64,
}

#[derive(Debug, Args)]
pub struct AdapterArgs {
    #[command(flatten)]
    pub optim: OptimArgs,
    #[arg(long, default_value_t = 1.0)]
    pub beta_start: f64,
    #[arg(long, default_value_t = 0.0)]
    pub beta_end: f64,
    #[arg(long, default_value_t = 10)]
    pub anneal_epochs: usize,
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u64).range(1..))]
    pub batch: u64,
    #[arg(long, default_value_t = 128)]
    pub hidden_dim: usize,
    #[arg(long, default_value_t = 64)]
    pub latent_dim: usize,
    #[arg(long, value_enum, default_value_t = ReflectorActivation::None)]
    pub activation: ReflectorActivation,
    /// Per-episode fine-tuning epochs on the support set.
    #[arg(long, default_value_t = 50)]
    pub fine_tune_epochs: usize,
}

#[derive(Debug, Args)]
pub struct EpisodeArgs {
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(2..))]
    pub n_way: u64,
    #[arg(long, default_value_t = 15, value_parser = clap::value_parser!(u64).range(1..))]
    pub n_query: u64,
    #[arg(long, default_value_t = 400, value_parser = clap::value_parser!(u64).range(1..))]
    pub episodes: u64,
    /// Evaluate episodes one after another instead of in parallel.
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Debug, Args)]
pub struct TrainBaseArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Hidden widths after the input; the last one is the embedding dim.
    #[arg(long, value_delimiter = ',', default_values_t = [DEFAULT_EMBEDDING_DIM])]
    pub widths: Vec<usize>,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 150, value_parser = clap::value_parser!(u64).range(1..))]
    pub batch: u64,
    #[command(flatten)]
    pub optim: OptimArgs,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    /// HFBASE encoder checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainAdapterArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 3)]
    pub flow_length: usize,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
    pub k_shot: u64,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[command(flatten)]
    pub adapter: AdapterArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    /// HFLOW1 adapter checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
    pub k_shot: u64,
    #[command(flatten)]
    pub episode: EpisodeArgs,
    #[command(flatten)]
    pub adapter: AdapterArgs,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 3, 10, 20])]
    pub lengths: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 5])]
    pub shots: Vec<usize>,
    /// Adapter training epochs per cell.
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[command(flatten)]
    pub episode: EpisodeArgs,
    #[command(flatten)]
    pub adapter: AdapterArgs,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Run a single suite.
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(SUITES))]
    pub suite: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Provenance written next to every command's outputs. Timestamps live only
/// here so the data files themselves stay byte-stable.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub code_version: String,
    pub seed: u64,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub train_config: Option<TrainConfig>,
    pub episode_spec: Option<EpisodeSpec>,
    pub synth_spec: Option<SynthSpec>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    fn new(command: &str, seed: u64) -> Self {
        RunManifest {
            command: command.to_string(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            started_unix: unix_now(),
            finished_unix: 0,
            train_config: None,
            episode_spec: None,
            synth_spec: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    fn finish(mut self, out: &Path) -> Result<()> {
        self.finished_unix = unix_now();
        let path = out.join(RUN_MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&self)?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn prepare_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))
}

impl AdapterArgs {
    fn train_config(&self, seed: u64, flow_length: usize, max_epochs: usize) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            learning_rate: self.optim.lr,
            plateau_patience: self.optim.patience as usize,
            adapter_batch: self.batch as usize,
            flow_length,
            hidden_dim: self.hidden_dim,
            latent_dim: self.latent_dim,
            reflector_activation: self.activation,
            beta_schedule: BetaSchedule::new(self.beta_start, self.beta_end, self.anneal_epochs)?,
            max_epochs,
            fine_tune_epochs: self.fine_tune_epochs,
            seed,
            ..TrainConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl EpisodeArgs {
    fn spec(&self, k_shot: u64, seed: u64) -> Result<EpisodeSpec> {
        let spec = EpisodeSpec {
            n_way: self.n_way as usize,
            k_shot: k_shot as usize,
            n_query: self.n_query as usize,
            episode_count: self.episodes as usize,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn execution(&self) -> Execution {
        if self.sequential {
            Execution::Sequential
        } else {
            Execution::Parallel
        }
    }
}

struct LoadedData {
    full: EmbeddingDataset,
    manifest: Option<DatasetManifest>,
    inputs: Vec<PathBuf>,
}

impl LoadedData {
    fn split(&self, tag: SplitTag) -> Result<EmbeddingDataset> {
        let Some(m) = &self.manifest else {
            return Ok(self.full.clone());
        };
        let (seen, novel) = m.apply(&self.full)?;
        let (part, name) = match tag {
            SplitTag::Seen => (seen, "seen"),
            _ => (novel, "novel"),
        };
        part.ok_or_else(|| Error::InvalidConfig(format!("manifest lists no {name} classes")))
    }
}

fn load_data(args: &DatasetArgs) -> Result<LoadedData> {
    let manifest = args.manifest.as_deref().map(DatasetManifest::load).transpose()?;
    let path = match (&args.dataset, &manifest) {
        (Some(p), _) => p.clone(),
        (None, Some(m)) => m.dataset.clone(),
        (None, None) => {
            return Err(Error::InvalidConfig("pass --dataset or --manifest".into()));
        }
    };
    let mut inputs = vec![path.clone()];
    inputs.extend(args.manifest.clone());
    Ok(LoadedData {
        full: load_embeddings(&path)?,
        manifest,
        inputs,
    })
}

fn write_log(path: &Path, rows: &[LogRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Per-episode rows.
pub fn write_eval_csv<W: std::io::Write>(report: &EvalReport, w: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    for e in &report.episodes {
        w.serialize(e)?;
    }
    w.flush().map_err(|e| Error::io("<eval csv>", e))
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    metric: &'a str,
    mean: f64,
    ci95_half_width: f64,
    episodes: usize,
    n_way: usize,
    k_shot: usize,
    flow_length: usize,
}

pub fn write_summary_csv<W: std::io::Write>(report: &EvalReport, w: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    for (metric, mean, ci) in [
        ("top1", report.top1_mean, report.top1_ci95),
        ("top5", report.top5_mean, report.top5_ci95),
    ] {
        w.serialize(SummaryRow {
            metric,
            mean,
            ci95_half_width: ci,
            episodes: report.episode_count,
            n_way: report.n_way,
            k_shot: report.k_shot,
            flow_length: report.flow_length,
        })?;
    }
    w.flush().map_err(|e| Error::io("<summary csv>", e))
}

fn create(path: &Path) -> Result<fs::File> {
    fs::File::create(path).map_err(|e| Error::io(path, e))
}

fn cmd_gen_synth(a: &GenSynthArgs) -> Result<()> {
    let spec = SynthSpec {
        class_count: a.classes as usize,
        dim: a.dim as usize,
        samples_per_class: a.samples_per_class as usize,
        covariance_mode: a.covariance,
        noise_scale: a.noise_scale,
        mean_scale: a.mean_scale,
        seed: a.seed,
    };
    spec.validate()?;
    let novel = a.novel_classes.unwrap_or(spec.class_count);
    let mut run = RunManifest::new("gen-synth", a.seed);
    prepare_out(&a.out)?;
    let ds = generate_synthetic(&spec)?;
    let manifest = DatasetManifest::random_split(EMBEDDINGS_FILE.into(), ds.class_names(), novel, a.seed)?;
    let data_path = a.out.join(EMBEDDINGS_FILE);
    let manifest_path = a.out.join(MANIFEST_FILE);
    save_embeddings(&data_path, &ds)?;
    manifest.save(&manifest_path)?;
    println!("wrote {} records ({} classes, dim {})", ds.records().len(), ds.class_count(), ds.dim());
    run.synth_spec = Some(spec);
    run.outputs = vec![data_path, manifest_path];
    run.finish(&a.out)
}

fn cmd_train_base(a: &TrainBaseArgs) -> Result<()> {
    let data = load_data(&a.data)?;
    let seen = data.split(SplitTag::Seen)?;
    let cfg = TrainConfig {
        learning_rate: a.optim.lr,
        plateau_patience: a.optim.patience as usize,
        base_batch: a.batch as usize,
        max_epochs: a.epochs,
        seed: a.seed,
        ..TrainConfig::default()
    };
    cfg.validate()?;
    if a.widths.is_empty() || a.widths.contains(&0) {
        return Err(Error::InvalidConfig("--widths must be positive".into()));
    }
    let mut widths = vec![seen.dim()];
    widths.extend(&a.widths);
    let mut run = RunManifest::new("train-base", a.seed);
    prepare_out(&a.out)?;
    let mut enc = ToyBaseEncoder::init(&widths, seen.class_count(), &mut keyed_rng(a.seed, domain::MODEL_INIT, 1))?;
    let samples: Vec<_> = seen.records().iter().map(|r| (&r.vector, r.label)).collect();
    let history = train_base(&mut enc, &samples, &cfg, a.epochs, &mut keyed_rng(a.seed, domain::ADAPTER_TRAIN, 1))?;
    let ckpt_path = a.out.join(BASE_FILE);
    let log_path = a.out.join(TRAIN_LOG_FILE);
    save_base(&ckpt_path, &BaseCheckpoint { encoder: enc, seed: a.seed })?;
    write_log(&log_path, &history.rows)?;
    if let (Some(first), Some(last)) = (history.epoch_losses.first(), history.epoch_losses.last()) {
        println!("base CE {first:.4} -> {last:.4} over {} epochs", history.epoch_losses.len());
    }
    run.train_config = Some(cfg);
    run.inputs = data.inputs;
    run.outputs = vec![ckpt_path, log_path];
    run.finish(&a.out)
}

fn cmd_extract(a: &ExtractArgs) -> Result<()> {
    let data = load_data(&a.data)?;
    let ckpt = load_base(&a.checkpoint)?;
    let mut run = RunManifest::new("extract", ckpt.seed);
    prepare_out(&a.out)?;
    let embedded = data
        .full
        .map_vectors(|x| base_forward(&ckpt.encoder, x).map(|(e, _)| e))?;
    let data_path = a.out.join(EMBEDDINGS_FILE);
    save_embeddings(&data_path, &embedded)?;
    run.outputs.push(data_path);
    if let Some(m) = &data.manifest {
        let m = DatasetManifest {
            dataset: EMBEDDINGS_FILE.into(),
            ..m.clone()
        };
        let path = a.out.join(MANIFEST_FILE);
        m.save(&path)?;
        run.outputs.push(path);
    }
    println!("embedded {} records to dim {}", embedded.records().len(), embedded.dim());
    run.inputs = data.inputs;
    run.inputs.push(a.checkpoint.clone());
    run.finish(&a.out)
}

fn cmd_train_adapter(a: &TrainAdapterArgs) -> Result<()> {
    let cfg = a.adapter.train_config(a.seed, a.flow_length, a.epochs)?;
    let data = load_data(&a.data)?;
    let novel = data.split(SplitTag::Novel)?;
    select_per_class(&novel, a.k_shot as usize, a.seed)?;
    let mut run = RunManifest::new("train-adapter", a.seed);
    prepare_out(&a.out)?;
    let (model, history) = train_adapter_on(&novel, &cfg, a.k_shot as usize)?;
    let ckpt_path = a.out.join(ADAPTER_FILE);
    let log_path = a.out.join(TRAIN_LOG_FILE);
    save_adapter(&ckpt_path, &AdapterCheckpoint { model, seed: a.seed })?;
    write_log(&log_path, &history.rows)?;
    if let (Some(first), Some(last)) = (history.rows.first(), history.rows.last()) {
        println!("adapter CE {:.4} -> {:.4}, {} skipped steps", first.ce, last.ce, history.skipped_steps);
    }
    run.train_config = Some(cfg);
    run.inputs = data.inputs;
    run.outputs = vec![ckpt_path, log_path];
    run.finish(&a.out)
}

fn print_report(r: &EvalReport) {
    println!("{:<6} {:>8} {:>10} {:>9}", "metric", "mean", "95% CI ±", "episodes");
    println!("{:<6} {:>8.4} {:>10.4} {:>9}", "top1", r.top1_mean, r.top1_ci95, r.episode_count);
    println!("{:<6} {:>8.4} {:>10.4} {:>9}", "top5", r.top5_mean, r.top5_ci95, r.episode_count);
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let spec = a.episode.spec(a.k_shot, a.seed)?;
    let data = load_data(&a.data)?;
    let novel = data.split(SplitTag::Novel)?;
    let ckpt = load_adapter(&a.checkpoint)?;
    let dims = ckpt.model.dims();
    let cfg = TrainConfig {
        hidden_dim: dims.hidden_dim,
        latent_dim: dims.latent_dim,
        reflector_activation: dims.activation,
        ..a.adapter.train_config(a.seed, dims.flow_length, 0)?
    };
    spec.check_dataset(&novel)?;
    if dims.embedding_dim != novel.dim() {
        return Err(Error::DimensionMismatch {
            expected: dims.embedding_dim,
            found: novel.dim(),
        });
    }
    let mut run = RunManifest::new("eval", a.seed);
    prepare_out(&a.out)?;
    let report = evaluate_episodes(&ckpt.model, &novel, &spec, &cfg, a.episode.execution())?;
    let eval_path = a.out.join(EVAL_FILE);
    let summary_path = a.out.join(SUMMARY_FILE);
    write_eval_csv(&report, create(&eval_path)?)?;
    write_summary_csv(&report, create(&summary_path)?)?;
    print_report(&report);
    run.train_config = Some(cfg);
    run.episode_spec = Some(spec);
    run.inputs = data.inputs;
    run.inputs.push(a.checkpoint.clone());
    run.outputs = vec![eval_path, summary_path];
    run.finish(&a.out)
}

#[derive(Serialize)]
struct AblationRow {
    flow_length: usize,
    k_shot: usize,
    episodes: Option<usize>,
    top1_mean: Option<f64>,
    top1_ci95: Option<f64>,
    top5_mean: Option<f64>,
    top5_ci95: Option<f64>,
    error: Option<String>,
}

fn cmd_ablate(a: &AblateArgs) -> Result<()> {
    if a.lengths.is_empty() || a.shots.is_empty() || a.shots.contains(&0) {
        return Err(Error::InvalidConfig("--lengths and --shots must be non-empty, shots >= 1".into()));
    }
    let spec = a.episode.spec(a.shots[0] as u64, a.seed)?;
    let cfg = a.adapter.train_config(a.seed, 0, a.epochs)?;
    let data = load_data(&a.data)?;
    let novel = data.split(SplitTag::Novel)?;
    let mut run = RunManifest::new("ablate", a.seed);
    prepare_out(&a.out)?;
    let cells = run_ablation(&novel, &a.lengths, &a.shots, &cfg, &spec, a.episode.execution());
    let path = a.out.join(ABLATION_FILE);
    let mut w = csv::Writer::from_path(&path)?;
    println!("{:>4} {:>3} {:>8} {:>8}", "T", "k", "top1", "± 95%");
    for c in &cells {
        let row = match &c.outcome {
            Ok(r) => {
                println!("{:>4} {:>3} {:>8.4} {:>8.4}", c.flow_length, c.k_shot, r.top1_mean, r.top1_ci95);
                AblationRow {
                    flow_length: c.flow_length,
                    k_shot: c.k_shot,
                    episodes: Some(r.episode_count),
                    top1_mean: Some(r.top1_mean),
                    top1_ci95: Some(r.top1_ci95),
                    top5_mean: Some(r.top5_mean),
                    top5_ci95: Some(r.top5_ci95),
                    error: None,
                }
            }
            Err(e) => {
                println!("{:>4} {:>3}   failed: {e}", c.flow_length, c.k_shot);
                AblationRow {
                    flow_length: c.flow_length,
                    k_shot: c.k_shot,
                    episodes: None,
                    top1_mean: None,
                    top1_ci95: None,
                    top5_mean: None,
                    top5_ci95: None,
                    error: Some(e.clone()),
                }
            }
        };
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    run.train_config = Some(cfg);
    run.episode_spec = Some(spec);
    run.inputs = data.inputs;
    run.outputs = vec![path];
    run.finish(&a.out)
}

/// Returns whether every suite passed.
fn cmd_verify(a: &VerifyArgs) -> Result<bool> {
    let cfg = VerifyConfig {
        seed: a.seed,
        ..VerifyConfig::default()
    };
    let reports = run_suites(a.suite.as_deref(), &cfg)?;
    for r in &reports {
        println!("{r}");
    }
    Ok(reports.iter().all(|r| r.passed))
}

/// Runs a parsed command and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let outcome = crate::par::init_thread_pool().and_then(|()| {
        info!("{:?}", cli.command);
        match &cli.command {
            Command::GenSynth(a) => cmd_gen_synth(a).map(|()| true),
            Command::TrainBase(a) => cmd_train_base(a).map(|()| true),
            Command::Extract(a) => cmd_extract(a).map(|()| true),
            Command::TrainAdapter(a) => cmd_train_adapter(a).map(|()| true),
            Command::Eval(a) => cmd_eval(a).map(|()| true),
            Command::Ablate(a) => cmd_ablate(a).map(|()| true),
            Command::Verify(a) => cmd_verify(a),
        }
    });
    match outcome {
        Ok(true) => 0,
        Ok(false) => {
            eprintln!("error: verification failed");
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                1
            } else {
                0
            }
        }
    }
}
