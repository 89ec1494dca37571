//! Sample labels, embedding containers and factor tables.
//!
//! Embeddings are stored as `f32` so that the binary and CSV formats
//! round-trip exactly; every numerical consumer widens to `f64`.

mod io;
mod synth;

use std::collections::{BTreeSet, HashMap, HashSet};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{read_embeddings, read_labels, write_embeddings, write_labels, EMBEDDING_MAGIC};
pub use synth::{generate_synthetic, SynthConfig, SyntheticDataset};

/// Name of the factor realized by every bonafide sample.
pub const BONAFIDE: &str = "bonafide";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleClass {
    Bonafide,
    Spoof,
}

impl SampleClass {
    pub fn as_str(self) -> &'static str {
        match self {
            SampleClass::Bonafide => "bonafide",
            SampleClass::Spoof => "spoof",
        }
    }
}

/// Ground-truth label of one sample. `attack_id` is present iff the sample
/// is spoofed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleLabel {
    pub sample_id: String,
    pub class: SampleClass,
    pub attack_id: Option<String>,
}

impl SampleLabel {
    pub fn bonafide(sample_id: impl Into<String>) -> Self {
        SampleLabel {
            sample_id: sample_id.into(),
            class: SampleClass::Bonafide,
            attack_id: None,
        }
    }

    pub fn spoof(sample_id: impl Into<String>, attack_id: impl Into<String>) -> Self {
        SampleLabel {
            sample_id: sample_id.into(),
            class: SampleClass::Spoof,
            attack_id: Some(attack_id.into()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.class, &self.attack_id) {
            (SampleClass::Bonafide, None) => Ok(()),
            (SampleClass::Spoof, Some(a)) if !a.is_empty() => Ok(()),
            (SampleClass::Bonafide, Some(a)) => Err(Error::InvalidLabel(format!(
                "bonafide sample {:?} carries attack id {a:?}",
                self.sample_id
            ))),
            (SampleClass::Spoof, _) => Err(Error::InvalidLabel(format!(
                "spoof sample {:?} has no attack id",
                self.sample_id
            ))),
        }
    }

    /// The factor this sample realizes: its attack id, or [`BONAFIDE`].
    pub fn factor_name(&self) -> &str {
        self.attack_id.as_deref().unwrap_or(BONAFIDE)
    }

    pub fn is_bonafide(&self) -> bool {
        self.class == SampleClass::Bonafide
    }
}

/// Validates a label list: per-label consistency and unique sample ids.
pub fn validate_labels(labels: &[SampleLabel]) -> Result<()> {
    let mut seen = HashSet::with_capacity(labels.len());
    for label in labels {
        label.validate()?;
        if !seen.insert(label.sample_id.as_str()) {
            return Err(Error::InvalidLabel(format!(
                "duplicate sample id {:?}",
                label.sample_id
            )));
        }
    }
    Ok(())
}

/// N×E embedding matrix with sample identifiers and, when known, labels.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    sample_ids: Vec<String>,
    matrix: Array2<f32>,
    labels: Option<Vec<SampleLabel>>,
}

impl EmbeddingSet {
    pub fn new(sample_ids: Vec<String>, matrix: Array2<f32>) -> Result<Self> {
        if sample_ids.len() != matrix.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "{} sample ids for a matrix with {} rows",
                sample_ids.len(),
                matrix.nrows()
            )));
        }
        if matrix.ncols() == 0 {
            return Err(Error::DimensionMismatch("embedding dimension is zero".into()));
        }
        if let Some(((row, column), _)) = matrix.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { row, column });
        }
        let mut seen = HashSet::with_capacity(sample_ids.len());
        for id in &sample_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::InvalidLabel(format!("duplicate sample id {id:?}")));
            }
        }
        Ok(EmbeddingSet {
            sample_ids,
            matrix,
            labels: None,
        })
    }

    /// Builds a labeled set; sample ids are taken from the labels.
    pub fn labeled(labels: Vec<SampleLabel>, matrix: Array2<f32>) -> Result<Self> {
        let ids = labels.iter().map(|l| l.sample_id.clone()).collect();
        EmbeddingSet::new(ids, matrix)?.with_labels(labels)
    }

    /// Attaches labels, matched to rows by sample id. Extra labels are
    /// ignored; a row without a label is an error.
    pub fn with_labels(mut self, labels: Vec<SampleLabel>) -> Result<Self> {
        validate_labels(&labels)?;
        let mut by_id: HashMap<String, SampleLabel> = labels.into_iter().map(|l| (l.sample_id.clone(), l)).collect();
        let ordered = self
            .sample_ids
            .iter()
            .map(|id| {
                by_id
                    .remove(id)
                    .ok_or_else(|| Error::InvalidLabel(format!("no label for sample {id:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        self.labels = Some(ordered);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_ids.is_empty()
    }

    pub fn dim_e(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn matrix(&self) -> &Array2<f32> {
        &self.matrix
    }

    pub fn matrix_f64(&self) -> Array2<f64> {
        self.matrix.mapv(f64::from)
    }

    pub fn labels(&self) -> Option<&[SampleLabel]> {
        self.labels.as_deref()
    }

    pub fn require_labels(&self) -> Result<&[SampleLabel]> {
        self.labels()
            .ok_or_else(|| Error::InvalidLabel("embedding set has no labels attached".into()))
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> EmbeddingSet {
        let matrix = self.matrix.select(ndarray::Axis(0), indices);
        EmbeddingSet {
            sample_ids: indices.iter().map(|&i| self.sample_ids[i].clone()).collect(),
            matrix,
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i].clone()).collect()),
        }
    }

    /// Splits into the first `head` rows and the remainder.
    pub fn split(&self, head: usize) -> (EmbeddingSet, EmbeddingSet) {
        let head = head.min(self.len());
        let first: Vec<usize> = (0..head).collect();
        let rest: Vec<usize> = (head..self.len()).collect();
        (self.select(&first), self.select(&rest))
    }
}

/// One-hot assignment of samples to mutually exclusive factors.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactorTable {
    factors: Vec<String>,
    /// Factor index of each retained row.
    assignment: Vec<usize>,
    /// Index of each retained row in the label list the table was built from.
    source_rows: Vec<usize>,
}

impl FactorTable {
    pub fn new(factors: Vec<String>, assignment: Vec<usize>, source_rows: Vec<usize>) -> Result<Self> {
        if factors.len() < 2 {
            return Err(Error::InvalidConfig(format!(
                "a factor table needs at least 2 factors, got {}",
                factors.len()
            )));
        }
        if assignment.len() != source_rows.len() {
            return Err(Error::DimensionMismatch(
                "assignment and source row lists differ in length".into(),
            ));
        }
        if let Some(&bad) = assignment.iter().find(|&&f| f >= factors.len()) {
            return Err(Error::DimensionMismatch(format!(
                "factor index {bad} out of range for {} factors",
                factors.len()
            )));
        }
        Ok(FactorTable {
            factors,
            assignment,
            source_rows,
        })
    }

    pub fn factors(&self) -> &[String] {
        &self.factors
    }

    pub fn n_factors(&self) -> usize {
        self.factors.len()
    }

    pub fn n_rows(&self) -> usize {
        self.assignment.len()
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn source_rows(&self) -> &[usize] {
        &self.source_rows
    }

    /// Binary indicator column for factor `f`.
    pub fn column(&self, f: usize) -> Vec<usize> {
        self.assignment.iter().map(|&a| usize::from(a == f)).collect()
    }

    /// The full N×F indicator matrix.
    pub fn indicator(&self) -> Array2<u8> {
        let mut m = Array2::zeros((self.n_rows(), self.n_factors()));
        for (i, &f) in self.assignment.iter().enumerate() {
            m[[i, f]] = 1;
        }
        m
    }

    pub fn column_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_factors()];
        for &f in &self.assignment {
            counts[f] += 1;
        }
        counts
    }
}

/// Factor names present in `labels`: attacks sorted by name, then
/// [`BONAFIDE`] if any bonafide sample exists.
pub fn observed_factors(labels: &[SampleLabel]) -> Vec<String> {
    let attacks: BTreeSet<&str> = labels.iter().filter_map(|l| l.attack_id.as_deref()).collect();
    let mut out: Vec<String> = attacks.into_iter().map(str::to_owned).collect();
    if labels.iter().any(SampleLabel::is_bonafide) {
        out.push(BONAFIDE.to_owned());
    }
    out
}

/// Restricts `labels` to samples whose factor is in `included_factors`,
/// preserving input order. Factor columns follow the order of
/// `included_factors` (duplicates dropped).
pub fn build_factor_table(labels: &[SampleLabel], included_factors: &[String]) -> Result<FactorTable> {
    if labels.is_empty() {
        return Err(Error::InvalidLabel("label list is empty".into()));
    }
    for label in labels {
        label.validate()?;
    }
    let observed: HashSet<&str> = labels.iter().map(SampleLabel::factor_name).collect();
    let mut factors: Vec<String> = Vec::new();
    for name in included_factors {
        if name != BONAFIDE && !observed.contains(name.as_str()) {
            return Err(Error::UnknownFactor(name.clone()));
        }
        if !factors.contains(name) {
            factors.push(name.clone());
        }
    }
    let index: HashMap<&str, usize> = factors.iter().enumerate().map(|(i, f)| (f.as_str(), i)).collect();
    let (mut assignment, mut source_rows) = (Vec::new(), Vec::new());
    for (row, label) in labels.iter().enumerate() {
        if let Some(&f) = index.get(label.factor_name()) {
            assignment.push(f);
            source_rows.push(row);
        }
    }
    FactorTable::new(factors, assignment, source_rows)
}
