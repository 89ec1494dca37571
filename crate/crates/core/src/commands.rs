//! `sparsedet` subcommands.
//!
//! Every command writes its outputs plus a `manifest.json` into `--out-dir`.
//! The manifest records the resolved configuration, tool version, seeds and
//! SHA-256 digests of all inputs and outputs. Output files themselves hold
//! no timestamps, so identical inputs and flags give identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{
    build_factor_table, generate_synthetic, observed_factors, read_embeddings, read_labels, write_embeddings,
    write_labels, EmbeddingSet, SynthConfig,
};
use crate::detmetrics::{self, DcfParams, DetectionSummary};
use crate::disentangle::{default_survival_thresholds, DisentanglementReport};
use crate::error::{Error, Result};
use crate::infotheory::{nmi_matrix, BinningSpec, BinningStrategy};
use crate::nn::{load_checkpoint, save_checkpoint, LatentModel, TopKSelection};
use crate::plot::survival_svg;
use crate::train::{self, run_sweep, LatentSource, Optimizer, SweepConfig, SweepData, TrainConfig};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Parser)]
#[command(
    name = "sparsedet",
    version,
    about = "Sparse TopK latent detectors and disentanglement metrics"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a planted-factor synthetic dataset.
    Synth(SynthArgs),
    /// Train one model and keep its best dev-EER epoch.
    Train(TrainArgs),
    /// Score embeddings with a checkpoint.
    Score(ScoreArgs),
    /// EER, minimum DCF and per-attack EER of a score file.
    Metrics(MetricsArgs),
    /// nMI importance matrix, completeness, modularity and survival curve.
    Disentangle(DisentangleArgs),
    /// Train and evaluate a (D, k) grid over several seeds.
    Sweep(SweepArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingFormat {
    Bin,
    Csv,
}

impl EmbeddingFormat {
    fn extension(self) -> &'static str {
        match self {
            EmbeddingFormat::Bin => "spe",
            EmbeddingFormat::Csv => "csv",
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    /// JSON file with every SynthConfig field; replaces the generator flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 4000)]
    pub n_samples: usize,
    #[arg(long, default_value_t = 32)]
    pub dim_e: usize,
    #[arg(long, default_value_t = 7)]
    pub n_attacks: usize,
    #[arg(long, default_value_t = 0.2)]
    pub bonafide_fraction: f64,
    #[arg(long, default_value_t = 3.0)]
    pub factor_strength: f64,
    #[arg(long, default_value_t = 0.5)]
    pub noise_sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Plant factors along the standard basis.
    #[arg(long, default_value_t = false, action = ArgAction::Set)]
    pub axis_aligned: bool,
    /// Fraction of samples (taken from the end) written as the dev split.
    #[arg(long, default_value_t = 0.25)]
    pub dev_fraction: f64,
    #[arg(long, value_enum, default_value_t = EmbeddingFormat::Bin)]
    pub format: EmbeddingFormat,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DcfArgs {
    #[arg(long, default_value_t = 1.0)]
    pub c_miss: f64,
    #[arg(long, default_value_t = 10.0)]
    pub c_fa: f64,
    #[arg(long, default_value_t = 0.05)]
    pub p_target: f64,
}

impl DcfArgs {
    fn params(&self) -> DcfParams {
        DcfParams {
            c_miss: self.c_miss,
            c_fa: self.c_fa,
            p_target: self.p_target,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionArg {
    Value,
    Magnitude,
}

impl From<SelectionArg> for TopKSelection {
    fn from(s: SelectionArg) -> Self {
        match s {
            SelectionArg::Value => TopKSelection::Value,
            SelectionArg::Magnitude => TopKSelection::Magnitude,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub train_emb: PathBuf,
    /// Label CSV; optional when the embedding file carries labels.
    #[arg(long)]
    pub train_labels: Option<PathBuf>,
    #[arg(long)]
    pub dev_emb: PathBuf,
    #[arg(long)]
    pub dev_labels: Option<PathBuf>,
    /// Latent width D.
    #[arg(long, default_value_t = 64)]
    pub dim_d: usize,
    /// TopK sparsity; omitted means the dense baseline k = D.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, value_enum, default_value_t = SelectionArg::Value)]
    pub selection: SelectionArg,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = OptimizerKind::Adam)]
    pub optimizer: OptimizerKind,
    #[arg(long, default_value_t = 0.9)]
    pub beta1: f64,
    #[arg(long, default_value_t = 0.999)]
    pub beta2: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub epsilon: f64,
    /// Loss weight for bonafide samples; omitted means unweighted.
    #[arg(long)]
    pub bonafide_weight: Option<f64>,
    #[command(flatten)]
    pub dcf: DcfArgs,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ScoreArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub emb: PathBuf,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct MetricsArgs {
    #[arg(long)]
    pub scores: PathBuf,
    #[command(flatten)]
    pub dcf: DcfArgs,
    /// Attacks with EER above this are not retained.
    #[arg(long, default_value_t = detmetrics::DEFAULT_RETENTION_THRESHOLD)]
    pub retention_threshold: f64,
    /// Key columns copied into metrics.csv.
    #[arg(long, default_value = "dev")]
    pub split: String,
    #[arg(long)]
    pub dim_d: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentArg {
    PreTopk,
    PostTopk,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyArg {
    Quantile,
    EqualWidth,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DisentangleArgs {
    /// Embeddings; with --checkpoint they are mapped to latents first,
    /// otherwise they are used as latents directly.
    #[arg(long)]
    pub emb: PathBuf,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = LatentArg::PostTopk)]
    pub latent: LatentArg,
    #[arg(long, value_enum, default_value_t = StrategyArg::Quantile)]
    pub strategy: StrategyArg,
    #[arg(long, default_value_t = 20)]
    pub n_bins: usize,
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    pub zero_bin: bool,
    /// Comma-separated factors to keep; default is every observed factor.
    #[arg(long, value_delimiter = ',')]
    pub factors: Vec<String>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SweepArgs {
    /// Experiment JSON: a `data` section plus sweep settings.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// Where a sweep gets its data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Files {
        train_embeddings: PathBuf,
        #[serde(default)]
        train_labels: Option<PathBuf>,
        dev_embeddings: PathBuf,
        #[serde(default)]
        dev_labels: Option<PathBuf>,
    },
    Synthetic {
        config: SynthConfig,
        dev_fraction: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataSource,
    #[serde(flatten)]
    pub sweep: SweepConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub created_unix_seconds: u64,
}

fn digest(path: &Path) -> Result<FileDigest> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(FileDigest {
        path: path.to_owned(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes `value` as pretty JSON with a `manifest` key naming the manifest
/// file that accompanies it.
fn write_json_artifact<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut json = serde_json::to_value(value)?;
    if let serde_json::Value::Object(map) = &mut json {
        map.insert("manifest".into(), MANIFEST_FILE.into());
    }
    fs::write(path, serde_json::to_vec_pretty(&json)?).map_err(|e| Error::io(path, e))
}

fn finish(
    command: &str,
    config: serde_json::Value,
    seeds: Vec<u64>,
    inputs: &[&Path],
    outputs: &[PathBuf],
    out_dir: &Path,
) -> Result<RunManifest> {
    let manifest = RunManifest {
        command: command.to_owned(),
        tool_version: env!("CARGO_PKG_VERSION").to_owned(),
        config,
        seeds,
        inputs: inputs.iter().map(|p| digest(p)).collect::<Result<_>>()?,
        outputs: outputs.iter().map(|p| digest(p)).collect::<Result<_>>()?,
        created_unix_seconds: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    };
    let path = out_dir.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

fn load_labeled(emb: &Path, labels: Option<&Path>) -> Result<EmbeddingSet> {
    let set = read_embeddings(emb)?;
    match labels {
        Some(l) => set.with_labels(read_labels(l)?),
        None => {
            set.require_labels()?;
            Ok(set)
        }
    }
}

fn dev_split_len(n: usize, dev_fraction: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&dev_fraction) {
        return Err(Error::InvalidConfig(format!(
            "dev_fraction = {dev_fraction} not in [0, 1)"
        )));
    }
    Ok((n as f64 * dev_fraction).round() as usize)
}

pub fn cmd_synth(args: &SynthArgs) -> Result<RunManifest> {
    let config: SynthConfig = match &args.config {
        Some(p) => serde_json::from_slice(&fs::read(p).map_err(|e| Error::io(p, e))?)?,
        None => SynthConfig {
            n_samples: args.n_samples,
            dim_e: args.dim_e,
            n_attacks: args.n_attacks,
            bonafide_fraction: args.bonafide_fraction,
            factor_strength: args.factor_strength,
            noise_sigma: args.noise_sigma,
            seed: args.seed,
            axis_aligned: args.axis_aligned,
        },
    };
    let data = generate_synthetic(&config)?;
    let n_dev = dev_split_len(config.n_samples, args.dev_fraction)?;
    let (train_set, dev_set) = data.embeddings.split(config.n_samples - n_dev);
    create_dir(&args.out_dir)?;

    let ext = args.format.extension();
    let mut outputs = Vec::new();
    let mut splits = vec![("train", &train_set)];
    if !dev_set.is_empty() {
        splits.push(("dev", &dev_set));
    }
    for (name, set) in splits {
        let emb_path = args.out_dir.join(format!("{name}.{ext}"));
        let label_path = args.out_dir.join(format!("{name}_labels.csv"));
        write_embeddings(set, &emb_path)?;
        write_labels(set.require_labels()?, &label_path)?;
        let back = read_embeddings(&emb_path)?.with_labels(read_labels(&label_path)?)?;
        if back.matrix() != set.matrix() || back.sample_ids() != set.sample_ids() {
            return Err(Error::malformed(
                &emb_path,
                "re-read embeddings differ from written ones",
            ));
        }
        outputs.extend([emb_path, label_path]);
    }
    let resolved = serde_json::json!({
        "synth": config,
        "dev_fraction": args.dev_fraction,
        "format": args.format,
        "out_dir": args.out_dir,
    });
    let inputs: Vec<&Path> = args.config.iter().map(PathBuf::as_path).collect();
    finish("synth", resolved, vec![config.seed], &inputs, &outputs, &args.out_dir)
}

pub fn cmd_train(args: &TrainArgs) -> Result<RunManifest> {
    let train_set = load_labeled(&args.train_emb, args.train_labels.as_deref())?;
    let dev_set = load_labeled(&args.dev_emb, args.dev_labels.as_deref())?;
    let k = args.k.unwrap_or(args.dim_d);
    let config = TrainConfig {
        learning_rate: args.learning_rate,
        epochs: args.epochs,
        batch_size: args.batch_size,
        seed: args.seed,
        optimizer: match args.optimizer {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::Adam => Optimizer::Adam {
                beta1: args.beta1,
                beta2: args.beta2,
                epsilon: args.epsilon,
            },
        },
        bonafide_weight: args.bonafide_weight,
        dcf: args.dcf.params(),
    };
    let init = LatentModel::init(train_set.dim_e(), args.dim_d, k, args.seed)?.with_selection(args.selection.into());
    let record = train::train(&init, &train_set, &dev_set, &config)?;

    create_dir(&args.out_dir)?;
    let ckpt = args.out_dir.join("model.ckpt");
    let epochs = args.out_dir.join("epochs.csv");
    let record_path = args.out_dir.join("record.json");
    save_checkpoint(&record.best_model, args.seed, record.best_epoch, &ckpt)?;
    record.write_epochs_csv(&epochs)?;
    write_json_artifact(&record, &record_path)?;
    load_checkpoint(&ckpt)?;

    let resolved = serde_json::json!({
        "dim_e": train_set.dim_e(),
        "dim_d": args.dim_d,
        "k": k,
        "dense": k == args.dim_d,
        "selection": args.selection,
        "train": config,
        "best_epoch": record.best_epoch,
        "args": args,
    });
    let mut inputs = vec![args.train_emb.as_path(), args.dev_emb.as_path()];
    inputs.extend(args.train_labels.as_deref());
    inputs.extend(args.dev_labels.as_deref());
    finish(
        "train",
        resolved,
        vec![args.seed],
        &inputs,
        &[ckpt, epochs, record_path],
        &args.out_dir,
    )
}

pub fn cmd_score(args: &ScoreArgs) -> Result<RunManifest> {
    let (model, header) = load_checkpoint(&args.checkpoint)?;
    let set = load_labeled(&args.emb, args.labels.as_deref())?;
    if set.dim_e() != model.dim_e() {
        return Err(Error::DimensionMismatch(format!(
            "checkpoint expects E={}, embeddings have E={}",
            model.dim_e(),
            set.dim_e()
        )));
    }
    let scores = train::score_set(&model, &set)?;
    create_dir(&args.out_dir)?;
    let out = args.out_dir.join("scores.csv");
    detmetrics::write_scores(&scores, &out)?;
    detmetrics::read_scores(&out)?;
    let resolved = serde_json::json!({ "checkpoint": header, "args": args });
    let mut inputs = vec![args.checkpoint.as_path(), args.emb.as_path()];
    inputs.extend(args.labels.as_deref());
    finish("score", resolved, vec![header.seed], &inputs, &[out], &args.out_dir)
}

#[derive(Serialize)]
struct MetricsCsvRow<'a> {
    split: &'a str,
    dim_d: Option<usize>,
    k: Option<usize>,
    seed: Option<u64>,
    metric: &'a str,
    attack_id: &'a str,
    value: f64,
}

pub fn cmd_metrics(args: &MetricsArgs) -> Result<RunManifest> {
    let scores = detmetrics::read_scores(&args.scores)?;
    let summary = detmetrics::summarize(&scores, &args.dcf.params(), args.retention_threshold)?;
    create_dir(&args.out_dir)?;
    let json_path = args.out_dir.join("metrics.json");
    let csv_path = args.out_dir.join("metrics.csv");
    write_json_artifact(&summary, &json_path)?;

    let mut w = csv::Writer::from_path(&csv_path)?;
    let row = |metric, attack_id, value| MetricsCsvRow {
        split: &args.split,
        dim_d: args.dim_d,
        k: args.k,
        seed: args.seed,
        metric,
        attack_id,
        value,
    };
    w.serialize(row("eer", "", summary.eer))?;
    w.serialize(row("min_dcf", "", summary.min_dcf))?;
    for (attack, &e) in &summary.per_attack_eer {
        w.serialize(row("attack_eer", attack, e))?;
        let kept = summary.retained_attacks.contains(attack);
        w.serialize(row("retained", attack, if kept { 1.0 } else { 0.0 }))?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;
    let _: DetectionSummary = serde_json::from_slice(&fs::read(&json_path).map_err(|e| Error::io(&json_path, e))?)?;

    let resolved = serde_json::json!({ "dcf": summary.dcf_params, "args": args });
    let seeds = args.seed.into_iter().collect();
    finish(
        "metrics",
        resolved,
        seeds,
        &[&args.scores],
        &[json_path, csv_path],
        &args.out_dir,
    )
}

pub fn cmd_disentangle(args: &DisentangleArgs) -> Result<RunManifest> {
    let set = load_labeled(&args.emb, args.labels.as_deref())?;
    let labels = set.require_labels()?;
    let factors = if args.factors.is_empty() {
        observed_factors(labels)
    } else {
        args.factors.clone()
    };
    let table = build_factor_table(labels, &factors)?;
    let (latents, latent_desc, seeds) = match &args.checkpoint {
        Some(ckpt) => {
            let (model, header) = load_checkpoint(ckpt)?;
            let source = match args.latent {
                LatentArg::PreTopk => LatentSource::PreTopk,
                LatentArg::PostTopk => LatentSource::PostTopk,
            };
            (
                train::extract_latents(&model, &set, source)?,
                serde_json::to_value(source)?,
                vec![header.seed],
            )
        }
        None => (set.matrix_f64(), serde_json::Value::from("input"), Vec::new()),
    };
    let latents = latents.select(ndarray::Axis(0), table.source_rows());
    let binning = BinningSpec {
        strategy: match args.strategy {
            StrategyArg::Quantile => BinningStrategy::Quantile,
            StrategyArg::EqualWidth => BinningStrategy::EqualWidth,
        },
        n_bins: args.n_bins,
        zero_bin: args.zero_bin,
    };
    let matrix = nmi_matrix(latents.view(), &table, &binning)?;
    let report = DisentanglementReport::from_matrix(&matrix, &default_survival_thresholds());

    create_dir(&args.out_dir)?;
    let dir = &args.out_dir;
    let outputs = vec![
        dir.join("importance.csv"),
        dir.join("importance.json"),
        dir.join("report.json"),
        dir.join("completeness.csv"),
        dir.join("modularity.csv"),
        dir.join("survival.csv"),
        dir.join("survival.svg"),
    ];
    matrix.write_csv(&outputs[0])?;
    matrix.write_json(&outputs[1])?;
    write_json_artifact(&report, &outputs[2])?;
    report.write_completeness_csv(&outputs[3])?;
    report.write_modularity_csv(&outputs[4])?;
    report.write_survival_csv(&outputs[5])?;
    let svg = survival_svg(&[("latents".to_owned(), report.survival.clone())]);
    fs::write(&outputs[6], svg).map_err(|e| Error::io(&outputs[6], e))?;

    let resolved = serde_json::json!({
        "latent": latent_desc,
        "binning": binning,
        "factors": factors,
        "split_rows": table.n_rows(),
        "args": args,
    });
    let mut inputs = vec![args.emb.as_path()];
    inputs.extend(args.labels.as_deref());
    inputs.extend(args.checkpoint.as_deref());
    finish("disentangle", resolved, seeds, &inputs, &outputs, dir)
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_owned()
    } else {
        base.join(p)
    }
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<RunManifest> {
    let raw = fs::read(&args.config).map_err(|e| Error::io(&args.config, e))?;
    let experiment: ExperimentConfig = serde_json::from_slice(&raw)?;
    let base = args.config.parent().unwrap_or(Path::new("."));
    let mut inputs: Vec<PathBuf> = vec![args.config.clone()];
    let (train_set, dev_set) = match &experiment.data {
        DataSource::Files {
            train_embeddings,
            train_labels,
            dev_embeddings,
            dev_labels,
        } => {
            let te = resolve(base, train_embeddings);
            let de = resolve(base, dev_embeddings);
            let tl = train_labels.as_deref().map(|p| resolve(base, p));
            let dl = dev_labels.as_deref().map(|p| resolve(base, p));
            let t = load_labeled(&te, tl.as_deref())?;
            let d = load_labeled(&de, dl.as_deref())?;
            inputs.extend([te, de]);
            inputs.extend(tl);
            inputs.extend(dl);
            (t, d)
        }
        DataSource::Synthetic { config, dev_fraction } => {
            let data = generate_synthetic(config)?;
            let n_dev = dev_split_len(config.n_samples, *dev_fraction)?;
            if n_dev == 0 {
                return Err(Error::InvalidConfig("a sweep needs a nonempty dev split".into()));
            }
            data.embeddings.split(config.n_samples - n_dev)
        }
    };
    let outcome = run_sweep(
        SweepData {
            train: &train_set,
            dev: &dev_set,
        },
        &experiment.sweep,
    )?;

    let dir = &args.out_dir;
    let ckpt_dir = dir.join("checkpoints");
    let runs_dir = dir.join("runs");
    create_dir(&ckpt_dir)?;
    create_dir(&runs_dir)?;
    let mut outputs = Vec::new();
    for run in &outcome.runs {
        let stem = format!("D{}_k{}_seed{}", run.grid.dim_d, run.grid.sparsity_k(), run.seed);
        let ckpt = ckpt_dir.join(format!("{stem}.ckpt"));
        save_checkpoint(&run.record.best_model, run.seed, run.record.best_epoch, &ckpt)?;
        load_checkpoint(&ckpt)?;
        let epochs = runs_dir.join(format!("{stem}_epochs.csv"));
        run.record.write_epochs_csv(&epochs)?;
        outputs.extend([ckpt, epochs]);
    }
    let report_json = dir.join("report.json");
    let report_csv = dir.join("report.csv");
    let table = dir.join("completeness_table.csv");
    let svg_path = dir.join("survival.svg");
    write_json_artifact(&outcome.report, &report_json)?;
    outcome.report.write_csv(&report_csv)?;
    outcome.report.write_completeness_table(&table)?;
    let curves: Vec<(String, Vec<_>)> = outcome
        .report
        .averaged()
        .map(|r| {
            let label = if r.k == r.dim_d {
                format!("D={} dense", r.dim_d)
            } else {
                format!("D={} k={}", r.dim_d, r.k)
            };
            (label, r.disentanglement.survival.clone())
        })
        .collect();
    fs::write(&svg_path, survival_svg(&curves)).map_err(|e| Error::io(&svg_path, e))?;
    outputs.extend([report_json, report_csv, table, svg_path]);

    let grid: BTreeMap<String, usize> = experiment
        .sweep
        .grid
        .iter()
        .map(|g| (format!("D={}", g.dim_d), g.sparsity_k()))
        .collect();
    let resolved = serde_json::json!({
        "experiment": experiment,
        "resolved_k": grid,
        "n_models": outcome.runs.len(),
    });
    let input_refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    finish(
        "sweep",
        resolved,
        experiment.sweep.seeds.clone(),
        &input_refs,
        &outputs,
        dir,
    )
}

pub fn run(cli: &Cli) -> Result<RunManifest> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Score(a) => cmd_score(a),
        Command::Metrics(a) => cmd_metrics(a),
        Command::Disentangle(a) => cmd_disentangle(a),
        Command::Sweep(a) => cmd_sweep(a),
    }
}

/// Machine-readable error record printed on failure.
pub fn error_record(err: &Error) -> serde_json::Value {
    serde_json::json!({ "error": { "kind": err.kind(), "message": err.to_string() } })
}
