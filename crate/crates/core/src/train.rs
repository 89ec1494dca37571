//! Mini-batch training of [`LatentModel`] with best-epoch selection on a
//! development set, and multi-seed sweeps over `(D, k)` grids.

use std::fs;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{build_factor_table, EmbeddingSet, SampleClass};
use crate::detmetrics::{self, DcfParams, ScoreSet};
use crate::disentangle::{aggregate_over_seeds, fmt_opt, DisentanglementReport};
use crate::error::{Error, Result};
use crate::infotheory::{nmi_matrix, BinningSpec};
use crate::nn::{self, LatentModel, TopKSelection, BONAFIDE_CLASS, SPOOF_CLASS};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    /// Loss weight of bonafide samples; spoof samples weigh 1.
    pub bonafide_weight: Option<f64>,
    /// Operating point for the per-epoch dev DCF.
    pub dcf: DcfParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 20,
            batch_size: 64,
            seed: 0,
            optimizer: Optimizer::default(),
            bonafide_weight: None,
            dcf: DcfParams::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        // A zero rate is accepted: it freezes the parameters.
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate = {} must be finite and nonnegative",
                self.learning_rate
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("epochs and batch_size must be positive".into()));
        }
        if let Some(w) = self.bonafide_weight {
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::InvalidConfig(format!("bonafide_weight = {w} must be positive")));
            }
        }
        if let Optimizer::Adam { beta1, beta2, epsilon } = self.optimizer {
            let ok = (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && epsilon > 0.0;
            if !ok {
                return Err(Error::InvalidConfig(format!(
                    "adam needs betas in [0, 1) and positive epsilon, got {beta1}, {beta2}, {epsilon}"
                )));
            }
        }
        self.dcf.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_eer: f64,
    pub dev_min_dcf: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_model: LatentModel,
}

impl TrainRecord {
    pub fn best_stats(&self) -> &EpochStats {
        &self.epochs[self.best_epoch - 1]
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec_pretty(self)?)
    }

    pub fn write_epochs_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        for e in &self.epochs {
            w.serialize(e)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn targets_and_weights(set: &EmbeddingSet, bonafide_weight: Option<f64>) -> Result<(Vec<usize>, Vec<f64>)> {
    let labels = set.require_labels()?;
    let targets: Vec<usize> = labels
        .iter()
        .map(|l| match l.class {
            SampleClass::Bonafide => BONAFIDE_CLASS,
            SampleClass::Spoof => SPOOF_CLASS,
        })
        .collect();
    let w = bonafide_weight.unwrap_or(1.0);
    let weights = targets
        .iter()
        .map(|&t| if t == BONAFIDE_CLASS { w } else { 1.0 })
        .collect();
    Ok((targets, weights))
}

/// Per-tensor optimizer state, in parameter order w_in, b_in, w_out, b_out.
struct OptimizerState {
    kind: Optimizer,
    lr: f64,
    step: i32,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimizerState {
    fn new(kind: Optimizer, lr: f64, model: &LatentModel) -> Self {
        let sizes = [model.w_in.len(), model.b_in.len(), model.w_out.len(), model.b_out.len()];
        OptimizerState {
            kind,
            lr,
            step: 0,
            first: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    fn apply(&mut self, model: &mut LatentModel, grads: &nn::Gradients) {
        self.step += 1;
        let params: [&mut [f64]; 4] = [
            model.w_in.as_slice_mut().expect("standard layout"),
            model.b_in.as_slice_mut().expect("standard layout"),
            model.w_out.as_slice_mut().expect("standard layout"),
            model.b_out.as_slice_mut().expect("standard layout"),
        ];
        let grads: [&[f64]; 4] = [
            grads.w_in.as_slice().expect("standard layout"),
            grads.b_in.as_slice().expect("standard layout"),
            grads.w_out.as_slice().expect("standard layout"),
            grads.b_out.as_slice().expect("standard layout"),
        ];
        for (t, (p, g)) in params.into_iter().zip(grads).enumerate() {
            match self.kind {
                Optimizer::Sgd => {
                    for (p, &g) in p.iter_mut().zip(g) {
                        *p -= self.lr * g;
                    }
                }
                Optimizer::Adam { beta1, beta2, epsilon } => {
                    let c1 = 1.0 - beta1.powi(self.step);
                    let c2 = 1.0 - beta2.powi(self.step);
                    let (m, v) = (&mut self.first[t], &mut self.second[t]);
                    for i in 0..p.len() {
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                        let m_hat = m[i] / c1;
                        let v_hat = v[i] / c2;
                        p[i] -= self.lr * m_hat / (v_hat.sqrt() + epsilon);
                    }
                }
            }
        }
    }
}

/// Bonafide log-probability scores of `set` under `model`.
pub fn score_set(model: &LatentModel, set: &EmbeddingSet) -> Result<ScoreSet> {
    let trace = nn::forward(model, set.matrix_f64().view())?;
    ScoreSet::from_labels(set.require_labels()?, &nn::bonafide_scores(trace.logits.view()))
}

/// Trains from `model_init` and returns the snapshot with the lowest dev
/// EER (lower dev DCF breaks ties, then the earlier epoch).
pub fn train(
    model_init: &LatentModel,
    train_set: &EmbeddingSet,
    dev_set: &EmbeddingSet,
    config: &TrainConfig,
) -> Result<TrainRecord> {
    config.validate()?;
    model_init.validate()?;
    if train_set.is_empty() || dev_set.is_empty() {
        return Err(Error::InvalidConfig("training and dev sets must be nonempty".into()));
    }
    for (name, set) in [("training", train_set), ("dev", dev_set)] {
        if set.dim_e() != model_init.dim_e() {
            return Err(Error::DimensionMismatch(format!(
                "{name} embeddings have E={}, model expects {}",
                set.dim_e(),
                model_init.dim_e()
            )));
        }
    }
    let (targets, weights) = targets_and_weights(train_set, config.bonafide_weight)?;
    for (class, name) in [(BONAFIDE_CLASS, "bonafide"), (SPOOF_CLASS, "spoof")] {
        if !targets.contains(&class) {
            return Err(Error::MissingClass(format!("training data has no {name} samples")));
        }
    }
    dev_set.require_labels()?;

    let x = train_set.matrix_f64();
    let n = x.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut model = model_init.clone();
    let mut opt = OptimizerState::new(config.optimizer, config.learning_rate, &model);

    let mut epochs = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, LatentModel)> = None;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (batch, idx) in order.chunks(config.batch_size).enumerate() {
            let xb = x.select(Axis(0), idx);
            let tb: Vec<usize> = idx.iter().map(|&i| targets[i]).collect();
            let wb: Vec<f64> = idx.iter().map(|&i| weights[i]).collect();
            let trace = nn::forward(&model, xb.view())?;
            let (loss, grad_logits) = nn::cross_entropy(trace.logits.view(), &tb, Some(&wb))?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch });
            }
            loss_sum += loss * idx.len() as f64;
            let grads = nn::backward(&model, &trace, xb.view(), grad_logits.view())?;
            opt.apply(&mut model, &grads);
        }
        let scores = score_set(&model, dev_set)?;
        let stats = EpochStats {
            epoch,
            train_loss: loss_sum / n as f64,
            dev_eer: detmetrics::eer(&scores)?,
            dev_min_dcf: detmetrics::min_dcf(&scores, &config.dcf)?,
        };
        let improves = match &best {
            None => true,
            Some((b, _)) => {
                let prev: &EpochStats = &epochs[*b - 1];
                stats.dev_eer < prev.dev_eer || (stats.dev_eer == prev.dev_eer && stats.dev_min_dcf < prev.dev_min_dcf)
            }
        };
        if improves {
            best = Some((epoch, model.clone()));
        }
        epochs.push(stats);
    }
    let (best_epoch, best_model) = best.expect("at least one epoch");
    Ok(TrainRecord {
        epochs,
        best_epoch,
        best_model,
    })
}

/// Which latent feeds the importance matrix.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentSource {
    /// After relu, before TopK.
    PreTopk,
    /// After TopK.
    #[default]
    PostTopk,
}

/// Latent matrix of `set` under `model`.
pub fn extract_latents(model: &LatentModel, set: &EmbeddingSet, source: LatentSource) -> Result<Array2<f64>> {
    let trace = nn::forward(model, set.matrix_f64().view())?;
    Ok(match source {
        LatentSource::PreTopk => trace.pre_latent,
        LatentSource::PostTopk => trace.latent,
    })
}

/// One `(D, k)` configuration; `k = None` is the dense baseline (k = D).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridPoint {
    pub dim_d: usize,
    #[serde(default)]
    pub k: Option<usize>,
}

impl GridPoint {
    pub fn sparsity_k(&self) -> usize {
        self.k.unwrap_or(self.dim_d)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub grid: Vec<GridPoint>,
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
    pub binning: BinningSpec,
    pub latent: LatentSource,
    pub selection: TopKSelection,
    /// Factors for the importance matrix; empty means every observed factor.
    pub factors: Vec<String>,
    pub survival_thresholds: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            grid: vec![GridPoint { dim_d: 32, k: None }],
            seeds: vec![0],
            train: TrainConfig::default(),
            binning: BinningSpec::default(),
            latent: LatentSource::default(),
            selection: TopKSelection::default(),
            factors: Vec::new(),
            survival_thresholds: crate::disentangle::default_survival_thresholds(),
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() || self.seeds.is_empty() {
            return Err(Error::InvalidConfig("grid and seeds must be nonempty".into()));
        }
        for g in &self.grid {
            if g.dim_d == 0 || g.sparsity_k() == 0 || g.sparsity_k() > g.dim_d {
                return Err(Error::KOutOfRange {
                    k: g.sparsity_k(),
                    dim: g.dim_d,
                });
            }
        }
        self.binning.validate()?;
        self.train.validate()
    }
}

/// Metrics of one trained model, or the seed average of a configuration
/// when `seed` is `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub dim_d: usize,
    pub k: usize,
    pub seed: Option<u64>,
    pub n_seeds: usize,
    pub best_epoch: f64,
    pub eer: f64,
    pub min_dcf: f64,
    pub sparsity: f64,
    pub disentanglement: DisentanglementReport,
}

/// Arithmetic mean of per-seed rows from one configuration.
pub fn average_rows(rows: &[MetricRow]) -> Result<MetricRow> {
    let first = rows
        .first()
        .ok_or_else(|| Error::InvalidConfig("no rows to average".into()))?;
    if rows.iter().any(|r| (r.dim_d, r.k) != (first.dim_d, first.k)) {
        return Err(Error::InvalidConfig("rows mix configurations".into()));
    }
    let n = rows.len() as f64;
    let mean = |f: fn(&MetricRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let reports: Vec<DisentanglementReport> = rows.iter().map(|r| r.disentanglement.clone()).collect();
    Ok(MetricRow {
        dim_d: first.dim_d,
        k: first.k,
        seed: None,
        n_seeds: rows.iter().map(|r| r.n_seeds).sum(),
        best_epoch: mean(|r| r.best_epoch),
        eer: mean(|r| r.eer),
        min_dcf: mean(|r| r.min_dcf),
        sparsity: mean(|r| r.sparsity),
        disentanglement: aggregate_over_seeds(&reports)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub split: String,
    pub dcf: DcfParams,
    pub binning: BinningSpec,
    pub latent: LatentSource,
    pub factor_names: Vec<String>,
    /// Per-seed rows in grid-then-seed order, each configuration followed
    /// by its averaged row.
    pub rows: Vec<MetricRow>,
}

/// Threshold reported as a CSV column alongside the survival curve.
const SURVIVAL_COLUMN_THRESHOLD: f64 = 0.05;

impl MetricReport {
    pub fn averaged(&self) -> impl Iterator<Item = &MetricRow> {
        self.rows.iter().filter(|r| r.seed.is_none())
    }

    pub fn averaged_for(&self, dim_d: usize, k: usize) -> Option<&MetricRow> {
        self.averaged().find(|r| r.dim_d == dim_d && r.k == k)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    /// One row per model and per averaged configuration.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = [
            "split",
            "dim_d",
            "k",
            "seed",
            "n_seeds",
            "best_epoch",
            "eer",
            "min_dcf",
            "sparsity",
            "mean_completeness",
            "mean_modularity",
            "nmi_frac_above_0.05",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        header.extend(self.factor_names.iter().map(|f| format!("completeness_{f}")));
        w.write_record(&header)?;
        for r in &self.rows {
            let d = &r.disentanglement;
            let mut rec = vec![
                self.split.clone(),
                r.dim_d.to_string(),
                r.k.to_string(),
                r.seed.map_or_else(|| "mean".to_owned(), |s| s.to_string()),
                r.n_seeds.to_string(),
                r.best_epoch.to_string(),
                r.eer.to_string(),
                r.min_dcf.to_string(),
                r.sparsity.to_string(),
                fmt_opt(d.mean_completeness()),
                fmt_opt(d.mean_modularity()),
                fmt_opt(d.survival_at(SURVIVAL_COLUMN_THRESHOLD)),
            ];
            rec.extend(d.completeness.iter().map(|c| fmt_opt(*c)));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Completeness table: configurations as rows, factors as columns.
    pub fn write_completeness_table(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["dim_d".to_owned(), "k".to_owned(), "seed".to_owned()];
        header.extend(self.factor_names.iter().cloned());
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![
                r.dim_d.to_string(),
                r.k.to_string(),
                r.seed.map_or_else(|| "mean".to_owned(), |s| s.to_string()),
            ];
            rec.extend(r.disentanglement.completeness.iter().map(|c| fmt_opt(*c)));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Training data for a sweep. Disentanglement is measured on `dev`.
#[derive(Clone, Copy, Debug)]
pub struct SweepData<'a> {
    pub train: &'a EmbeddingSet,
    pub dev: &'a EmbeddingSet,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub grid: GridPoint,
    pub seed: u64,
    pub record: TrainRecord,
    pub row: MetricRow,
}

#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub report: MetricReport,
    pub runs: Vec<RunOutcome>,
}

/// Evaluates a trained model on the dev set: detection metrics, sparsity
/// and disentanglement.
pub fn evaluate_model(
    model: &LatentModel,
    dev: &EmbeddingSet,
    factors: &[String],
    config: &SweepConfig,
) -> Result<(f64, f64, f64, DisentanglementReport)> {
    let scores = score_set(model, dev)?;
    let eer = detmetrics::eer(&scores)?;
    let dcf = detmetrics::min_dcf(&scores, &config.train.dcf)?;
    let trace = nn::forward(model, dev.matrix_f64().view())?;
    let sparsity = nn::sparsity_ratio(&trace);
    let table = build_factor_table(dev.require_labels()?, factors)?;
    let latents = match config.latent {
        LatentSource::PreTopk => trace.pre_latent,
        LatentSource::PostTopk => trace.latent,
    };
    let latents = latents.select(Axis(0), table.source_rows());
    let m = nmi_matrix(latents.view(), &table, &config.binning)?;
    let report = DisentanglementReport::from_matrix(&m, &config.survival_thresholds);
    Ok((eer, dcf, sparsity, report))
}

/// Trains one model per `(D, k, seed)` and reports per-seed and
/// seed-averaged metrics. Runs execute in parallel; results are collated
/// in grid-then-seed order.
pub fn run_sweep(data: SweepData<'_>, config: &SweepConfig) -> Result<SweepOutcome> {
    config.validate()?;
    let factors = if config.factors.is_empty() {
        crate::data::observed_factors(data.dev.require_labels()?)
    } else {
        config.factors.clone()
    };
    let jobs: Vec<(GridPoint, u64)> = config
        .grid
        .iter()
        .flat_map(|g| config.seeds.iter().map(move |&s| (*g, s)))
        .collect();
    let runs: Vec<RunOutcome> = jobs
        .par_iter()
        .map(|&(grid, seed)| {
            let init = LatentModel::init(data.train.dim_e(), grid.dim_d, grid.sparsity_k(), seed)?
                .with_selection(config.selection);
            let train_config = TrainConfig {
                seed,
                ..config.train.clone()
            };
            let record = train(&init, data.train, data.dev, &train_config)?;
            let (eer, min_dcf, sparsity, disentanglement) =
                evaluate_model(&record.best_model, data.dev, &factors, config)?;
            let row = MetricRow {
                dim_d: grid.dim_d,
                k: grid.sparsity_k(),
                seed: Some(seed),
                n_seeds: 1,
                best_epoch: record.best_epoch as f64,
                eer,
                min_dcf,
                sparsity,
                disentanglement,
            };
            Ok(RunOutcome {
                grid,
                seed,
                record,
                row,
            })
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(runs.len() + config.grid.len());
    for chunk in runs.chunks(config.seeds.len()) {
        let per_seed: Vec<MetricRow> = chunk.iter().map(|r| r.row.clone()).collect();
        let avg = average_rows(&per_seed)?;
        rows.extend(per_seed);
        rows.push(avg);
    }
    let report = MetricReport {
        split: "dev".to_owned(),
        dcf: config.train.dcf,
        binning: config.binning,
        latent: config.latent,
        factor_names: factors,
        rows,
    };
    Ok(SweepOutcome { report, runs })
}
