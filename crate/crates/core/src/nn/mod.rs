//! Classifier head: `E -> D` affine + relu, TopK over the latent, `D -> 2`
//! affine logits. All arithmetic is plain `f64` array code with explicit
//! reverse-mode gradients.

mod checkpoint;
mod topk;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader, CHECKPOINT_MAGIC};
pub use topk::{topk_backward, topk_forward, topk_forward_by, topk_mask, TopKSelection};

/// Logit column holding the bonafide class.
pub const BONAFIDE_CLASS: usize = 0;
/// Logit column holding the spoof class.
pub const SPOOF_CLASS: usize = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentModel {
    /// E×D
    pub w_in: Array2<f64>,
    pub b_in: Array1<f64>,
    /// D×2
    pub w_out: Array2<f64>,
    pub b_out: Array1<f64>,
    pub sparsity_k: usize,
    #[serde(default)]
    pub selection: TopKSelection,
}

impl LatentModel {
    pub fn new(
        w_in: Array2<f64>,
        b_in: Array1<f64>,
        w_out: Array2<f64>,
        b_out: Array1<f64>,
        sparsity_k: usize,
    ) -> Result<Self> {
        let model = LatentModel {
            w_in,
            b_in,
            w_out,
            b_out,
            sparsity_k,
            selection: TopKSelection::Value,
        };
        model.validate()?;
        Ok(model)
    }

    /// All-zero parameters.
    pub fn zeros(dim_e: usize, dim_d: usize, sparsity_k: usize) -> Result<Self> {
        LatentModel::new(
            Array2::zeros((dim_e, dim_d)),
            Array1::zeros(dim_d),
            Array2::zeros((dim_d, 2)),
            Array1::zeros(2),
            sparsity_k,
        )
    }

    /// Glorot-uniform weights, zero biases, drawn from `seed`.
    pub fn init(dim_e: usize, dim_d: usize, sparsity_k: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut glorot = |rows: usize, cols: usize| {
            let limit = (6.0 / (rows + cols) as f64).sqrt();
            Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-limit..=limit))
        };
        let w_in = glorot(dim_e, dim_d);
        let w_out = glorot(dim_d, 2);
        LatentModel::new(w_in, Array1::zeros(dim_d), w_out, Array1::zeros(2), sparsity_k)
    }

    pub fn with_selection(mut self, selection: TopKSelection) -> Self {
        self.selection = selection;
        self
    }

    pub fn dim_e(&self) -> usize {
        self.w_in.nrows()
    }

    pub fn dim_d(&self) -> usize {
        self.w_in.ncols()
    }

    /// True when TopK keeps every latent unit.
    pub fn is_dense(&self) -> bool {
        self.sparsity_k == self.dim_d()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim_d();
        if d == 0 || self.dim_e() == 0 {
            return Err(Error::DimensionMismatch("model dimensions must be positive".into()));
        }
        if self.b_in.len() != d || self.w_out.dim() != (d, 2) || self.b_out.len() != 2 {
            return Err(Error::DimensionMismatch(format!(
                "inconsistent parameter shapes: w_in {:?}, b_in {}, w_out {:?}, b_out {}",
                self.w_in.dim(),
                self.b_in.len(),
                self.w_out.dim(),
                self.b_out.len()
            )));
        }
        if self.sparsity_k == 0 || self.sparsity_k > d {
            return Err(Error::KOutOfRange {
                k: self.sparsity_k,
                dim: d,
            });
        }
        let finite = self
            .w_in
            .iter()
            .chain(&self.b_in)
            .chain(&self.w_out)
            .chain(&self.b_out)
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidConfig("model parameters must be finite".into()));
        }
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        self.w_in.len() + self.b_in.len() + self.w_out.len() + self.b_out.len()
    }
}

/// Intermediate values of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    /// N×D latent after relu, before TopK.
    pub pre_latent: Array2<f64>,
    /// N×D latent after TopK.
    pub latent: Array2<f64>,
    pub kept_mask: Array2<bool>,
    /// N×2
    pub logits: Array2<f64>,
}

pub fn forward(model: &LatentModel, x: ArrayView2<'_, f64>) -> Result<ForwardTrace> {
    if x.ncols() != model.dim_e() {
        return Err(Error::DimensionMismatch(format!(
            "input has {} columns, model expects {}",
            x.ncols(),
            model.dim_e()
        )));
    }
    let mut pre_latent = x.dot(&model.w_in) + &model.b_in;
    pre_latent.mapv_inplace(|z| z.max(0.0));

    let (n, d) = pre_latent.dim();
    let mut latent = Array2::zeros((n, d));
    let mut kept_mask = Array2::from_elem((n, d), false);
    for i in 0..n {
        let row = pre_latent.row(i);
        let row = row.as_slice().expect("standard layout");
        let mask = topk_mask(row, model.sparsity_k, model.selection)?;
        for (j, keep) in mask.into_iter().enumerate() {
            if keep {
                latent[[i, j]] = row[j];
                kept_mask[[i, j]] = true;
            }
        }
    }
    let logits = latent.dot(&model.w_out) + &model.b_out;
    Ok(ForwardTrace {
        pre_latent,
        latent,
        kept_mask,
        logits,
    })
}

/// Parameter gradients plus the gradient with respect to the input.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub w_in: Array2<f64>,
    pub b_in: Array1<f64>,
    pub w_out: Array2<f64>,
    pub b_out: Array1<f64>,
    pub input: Array2<f64>,
}

impl Gradients {
    pub fn is_zero(&self) -> bool {
        self.w_in
            .iter()
            .chain(&self.b_in)
            .chain(&self.w_out)
            .chain(&self.b_out)
            .chain(&self.input)
            .all(|&g| g == 0.0)
    }
}

/// Reverse-mode pass through the head given the upstream `grad_logits`.
/// Relu's subgradient at 0 is taken as 0.
pub fn backward(
    model: &LatentModel,
    trace: &ForwardTrace,
    x: ArrayView2<'_, f64>,
    grad_logits: ArrayView2<'_, f64>,
) -> Result<Gradients> {
    let n = x.nrows();
    let d = model.dim_d();
    if trace.logits.dim() != (n, 2) || trace.latent.dim() != (n, d) || x.ncols() != model.dim_e() {
        return Err(Error::DimensionMismatch("trace does not match model and input".into()));
    }
    if grad_logits.dim() != (n, 2) {
        return Err(Error::DimensionMismatch(format!(
            "grad_logits has shape {:?}, expected ({n}, 2)",
            grad_logits.dim()
        )));
    }
    let w_out = trace.latent.t().dot(&grad_logits);
    let b_out = grad_logits.sum_axis(Axis(0));

    let mut grad_z = grad_logits.dot(&model.w_out.t());
    ndarray::Zip::from(&mut grad_z)
        .and(&trace.kept_mask)
        .and(&trace.pre_latent)
        .for_each(|g, &keep, &a| {
            if !keep || a <= 0.0 {
                *g = 0.0;
            }
        });
    let w_in = x.t().dot(&grad_z);
    let b_in = grad_z.sum_axis(Axis(0));
    let input = grad_z.dot(&model.w_in.t());
    Ok(Gradients {
        w_in,
        b_in,
        w_out,
        b_out,
        input,
    })
}

/// Fraction of exactly-zero entries in the post-TopK latent.
pub fn sparsity_ratio(trace: &ForwardTrace) -> f64 {
    let total = trace.latent.len();
    if total == 0 {
        return 0.0;
    }
    trace.latent.iter().filter(|&&v| v == 0.0).count() as f64 / total as f64
}

/// Row-wise log-softmax.
pub fn log_softmax(logits: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

/// Bonafide-class log-probability per row; higher means more bonafide.
pub fn bonafide_scores(logits: ArrayView2<'_, f64>) -> Vec<f64> {
    log_softmax(logits).column(BONAFIDE_CLASS).to_vec()
}

/// Weighted mean softmax cross-entropy and its gradient with respect to
/// the logits. `targets` holds class indices; `weights`, when given, one
/// weight per row.
pub fn cross_entropy(
    logits: ArrayView2<'_, f64>,
    targets: &[usize],
    weights: Option<&[f64]>,
) -> Result<(f64, Array2<f64>)> {
    let (n, c) = logits.dim();
    if targets.len() != n || weights.is_some_and(|w| w.len() != n) {
        return Err(Error::DimensionMismatch(format!(
            "{n} logit rows but {} targets",
            targets.len()
        )));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= c) {
        return Err(Error::DimensionMismatch(format!("target class {t} with {c} logits")));
    }
    let log_p = log_softmax(logits);
    let weight = |i: usize| weights.map_or(1.0, |w| w[i]);
    let total_weight: f64 = (0..n).map(weight).sum();
    let mut loss = 0.0;
    let mut grad = log_p.mapv(f64::exp);
    for (i, &t) in targets.iter().enumerate() {
        let w = weight(i) / total_weight;
        loss -= w * log_p[[i, t]];
        grad[[i, t]] -= 1.0;
        grad.row_mut(i).mapv_inplace(|g| g * w);
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_model_gives_even_odds() {
        let model = LatentModel::zeros(3, 4, 2).unwrap();
        let x = array![[1.0, -2.0, 0.5], [0.0, 3.0, 1.0]];
        let trace = forward(&model, x.view()).unwrap();
        assert!(trace.logits.iter().all(|&l| l == 0.0));
        for s in bonafide_scores(trace.logits.view()) {
            assert!((s.exp() - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn hand_sized_forward() {
        // E=2, D=3, k=1.
        let model = LatentModel::new(
            array![[1.0, 2.0, -1.0], [0.0, 1.0, 3.0]],
            array![0.0, -1.0, 1.0],
            array![[1.0, -1.0], [2.0, 0.0], [-1.0, 1.0]],
            array![0.5, -0.5],
            1,
        )
        .unwrap();
        let x = array![[2.0, 1.0]];
        // z = [2, 4+1-1, -2+3+1] = [2, 4, 2]; relu keeps all; top-1 is unit 1.
        // latent = [0, 4, 0]; logits = [4*2 + 0.5, 4*0 - 0.5] = [8.5, -0.5].
        let trace = forward(&model, x.view()).unwrap();
        assert_eq!(trace.pre_latent, array![[2.0, 4.0, 2.0]]);
        assert_eq!(trace.latent, array![[0.0, 4.0, 0.0]]);
        assert_eq!(trace.logits, array![[8.5, -0.5]]);
    }

    #[test]
    fn k_equal_d_matches_plain_mlp() {
        let model = LatentModel::init(4, 6, 6, 9).unwrap();
        let x = array![[0.3, -1.0, 2.0, 0.1], [1.5, 0.2, -0.7, 0.9]];
        let trace = forward(&model, x.view()).unwrap();
        let hidden = (x.dot(&model.w_in) + &model.b_in).mapv(|z| z.max(0.0));
        let logits = hidden.dot(&model.w_out) + &model.b_out;
        assert_eq!(trace.logits, logits);
        assert_eq!(trace.latent, trace.pre_latent);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let model = LatentModel::init(3, 5, 2, 1).unwrap();
        let x = array![[1.0, 2.0, 3.0]];
        let trace = forward(&model, x.view()).unwrap();
        let g = backward(&model, &trace, x.view(), Array2::zeros((1, 2)).view()).unwrap();
        assert!(g.is_zero());
    }

    #[test]
    fn dimension_mismatch_reported() {
        let model = LatentModel::zeros(3, 4, 2).unwrap();
        assert!(forward(&model, Array2::zeros((2, 5)).view()).is_err());
        let x = Array2::zeros((2, 3));
        let trace = forward(&model, x.view()).unwrap();
        assert!(backward(&model, &trace, x.view(), Array2::zeros((3, 2)).view()).is_err());
    }

    #[test]
    fn sparsity_counts_relu_zeros_too() {
        let model = LatentModel::new(
            array![[1.0, -1.0, -1.0, 2.0]],
            array![0.0, 0.0, 0.0, 0.0],
            Array2::zeros((4, 2)),
            Array1::zeros(2),
            3,
        )
        .unwrap();
        // relu gives [1, 0, 0, 2]; index 1 is kept by the tie rule but is zero.
        let trace = forward(&model, array![[1.0]].view()).unwrap();
        let zeros = trace.latent.iter().filter(|&&v| v == 0.0).count();
        assert_eq!(zeros, 2);
        assert_eq!(sparsity_ratio(&trace), 0.5);
        assert!(sparsity_ratio(&trace) > 1.0 - 3.0 / 4.0);
    }

    #[test]
    fn dense_positive_latent_has_zero_sparsity() {
        let model = LatentModel::new(
            array![[1.0, 2.0, 3.0]],
            array![0.1, 0.1, 0.1],
            Array2::zeros((3, 2)),
            Array1::zeros(2),
            3,
        )
        .unwrap();
        let trace = forward(&model, array![[1.0], [2.0]].view()).unwrap();
        assert_eq!(sparsity_ratio(&trace), 0.0);
    }

    #[test]
    fn cross_entropy_gradient_rows_sum_to_zero() {
        let logits = array![[1.0, -1.0], [0.2, 0.3], [5.0, 5.0]];
        let (loss, grad) = cross_entropy(logits.view(), &[0, 1, 1], Some(&[2.0, 1.0, 1.0])).unwrap();
        assert!(loss.is_finite() && loss > 0.0);
        for row in grad.rows() {
            assert!(row.sum().abs() < 1e-15);
        }
    }

    #[test]
    fn invalid_k_rejected() {
        assert!(matches!(
            LatentModel::zeros(2, 3, 4),
            Err(Error::KOutOfRange { k: 4, dim: 3 })
        ));
        assert!(LatentModel::zeros(2, 3, 0).is_err());
    }
}
