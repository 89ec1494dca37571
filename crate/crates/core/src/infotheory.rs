//! Plug-in entropy and mutual information over discretized latents, and
//! the normalized-MI importance matrix
//! `M[d, f] = 2 * MI(d, f) / (H(d) + H(f))`.
//!
//! Natural logarithms throughout; the normalization makes the base
//! irrelevant for `M`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::FactorTable;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinningStrategy {
    Quantile,
    EqualWidth,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinningSpec {
    pub strategy: BinningStrategy,
    pub n_bins: usize,
    /// Reserve bin 0 for exact zeros; other values go to bins `1..=n_bins`.
    pub zero_bin: bool,
}

impl Default for BinningSpec {
    fn default() -> Self {
        BinningSpec {
            strategy: BinningStrategy::Quantile,
            n_bins: 20,
            zero_bin: true,
        }
    }
}

impl BinningSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_bins < 2 {
            return Err(Error::InvalidConfig(format!(
                "n_bins = {} must be at least 2",
                self.n_bins
            )));
        }
        Ok(())
    }
}

/// Maps each value to a bin index.
///
/// Bins are left-closed: a value lands in the bin of the largest edge it
/// reaches. Equal-width edges split `[min, max]` of the binned support into
/// `n_bins` intervals, the last one closed. Quantile edges are the support
/// values at ranks `floor(i * M / n_bins)`; repeated edges collapse, so
/// heavy ties yield fewer bins. An all-equal support maps to a single bin.
pub fn discretize(values: &[f64], spec: &BinningSpec) -> Vec<usize> {
    let offset = usize::from(spec.zero_bin);
    let support: Vec<f64> = values
        .iter()
        .copied()
        .filter(|&v| !(spec.zero_bin && v == 0.0))
        .collect();
    let edges = match spec.strategy {
        BinningStrategy::EqualWidth => equal_width_edges(&support, spec.n_bins),
        BinningStrategy::Quantile => quantile_edges(&support, spec.n_bins),
    };
    values
        .iter()
        .map(|&v| {
            if spec.zero_bin && v == 0.0 {
                0
            } else {
                offset + edges.partition_point(|&e| e <= v)
            }
        })
        .collect()
}

/// Interior edges `min + i * width` for `i = 1..n_bins`.
fn equal_width_edges(support: &[f64], n_bins: usize) -> Vec<f64> {
    let Some((min, max)) = min_max(support) else {
        return Vec::new();
    };
    if min == max {
        return Vec::new();
    }
    let width = (max - min) / n_bins as f64;
    (1..n_bins).map(|i| min + i as f64 * width).collect()
}

fn quantile_edges(support: &[f64], n_bins: usize) -> Vec<f64> {
    let mut sorted = support.to_vec();
    sorted.sort_by(f64::total_cmp);
    let Some(&min) = sorted.first() else {
        return Vec::new();
    };
    let m = sorted.len();
    let mut edges: Vec<f64> = (1..n_bins)
        .map(|i| sorted[i * m / n_bins])
        .filter(|&e| e > min)
        .collect();
    edges.dedup();
    edges
}

fn min_max(values: &[f64]) -> Option<(f64, f64)> {
    let first = *values.first()?;
    Some(
        values
            .iter()
            .fold((first, first), |(lo, hi), &v| (lo.min(v), hi.max(v))),
    )
}

fn counts(indices: &[usize]) -> BTreeMap<usize, usize> {
    let mut c = BTreeMap::new();
    for &i in indices {
        *c.entry(i).or_insert(0) += 1;
    }
    c
}

/// Plug-in Shannon entropy in nats. Empty input has entropy 0.
pub fn entropy(indices: &[usize]) -> f64 {
    let n = indices.len() as f64;
    -counts(indices)
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            p * p.ln()
        })
        .sum::<f64>()
}

/// Plug-in mutual information in nats between two discrete sequences,
/// `sum p(a,b) ln(p(a,b) / (p(a) p(b)))` over occupied joint cells.
///
/// Rounding can push the raw sum a few ulps outside `[0, min(H(a), H(b))]`;
/// the result is pinned to that interval.
pub fn mutual_information(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "sequences of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let n = a.len() as f64;
    let (ca, cb) = (counts(a), counts(b));
    let mut joint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_insert(0) += 1;
    }
    let mi: f64 = joint
        .iter()
        .map(|(&(x, y), &c)| {
            let pxy = c as f64 / n;
            let px = ca[&x] as f64 / n;
            let py = cb[&y] as f64 / n;
            pxy * (pxy / (px * py)).ln()
        })
        .sum();
    let bound = entropy(a).min(entropy(b));
    Ok(mi.clamp(0.0, bound))
}

/// `2 MI / (H(a) + H(b))`, defined as 0 when both entropies vanish.
pub fn normalized_mi(a: &[usize], b: &[usize]) -> Result<f64> {
    let mi = mutual_information(a, b)?;
    let denom = entropy(a) + entropy(b);
    Ok(if denom > 0.0 { (2.0 * mi / denom).min(1.0) } else { 0.0 })
}

/// D×F normalized mutual information between latent dimensions and factors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceMatrix {
    pub values: Array2<f64>,
    pub dim_names: Vec<String>,
    pub factor_names: Vec<String>,
    pub binning: BinningSpec,
}

impl ImportanceMatrix {
    /// Wraps raw values, checking shape and the `[0, 1]` range.
    pub fn from_values(values: Array2<f64>, factor_names: Vec<String>, binning: BinningSpec) -> Result<Self> {
        if values.ncols() != factor_names.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} columns for {} factor names",
                values.ncols(),
                factor_names.len()
            )));
        }
        if let Some(((d, f), v)) = values
            .indexed_iter()
            .find(|(_, v)| !(v.is_finite() && (0.0..=1.0).contains(*v)))
        {
            return Err(Error::InvalidConfig(format!(
                "importance entry [{d}, {f}] = {v} outside [0, 1]"
            )));
        }
        let dim_names = (0..values.nrows()).map(|d| d.to_string()).collect();
        Ok(ImportanceMatrix {
            values,
            dim_names,
            factor_names,
            binning,
        })
    }

    pub fn n_dims(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_factors(&self) -> usize {
        self.values.ncols()
    }

    /// CSV with one row per dimension and a header of factor names.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["dimension".to_owned()];
        header.extend(self.factor_names.iter().cloned());
        w.write_record(&header)?;
        for (name, row) in self.dim_names.iter().zip(self.values.rows()) {
            let mut rec = vec![name.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        #[derive(Serialize)]
        struct Out<'a> {
            binning: &'a BinningSpec,
            dim_names: &'a [String],
            factor_names: &'a [String],
            values: Vec<Vec<f64>>,
        }
        let out = Out {
            binning: &self.binning,
            dim_names: &self.dim_names,
            factor_names: &self.factor_names,
            values: self.values.rows().into_iter().map(|r| r.to_vec()).collect(),
        };
        fs::write(path, serde_json::to_vec_pretty(&out)?).map_err(|e| Error::io(path, e))
    }
}

/// Builds the importance matrix from `latents` (N×D) and a factor table
/// whose rows align with the latent rows.
pub fn nmi_matrix(latents: ArrayView2<'_, f64>, factors: &FactorTable, spec: &BinningSpec) -> Result<ImportanceMatrix> {
    spec.validate()?;
    if latents.nrows() != factors.n_rows() {
        return Err(Error::DimensionMismatch(format!(
            "{} latent rows for {} factor rows",
            latents.nrows(),
            factors.n_rows()
        )));
    }
    let factor_columns: Vec<Vec<usize>> = (0..factors.n_factors()).map(|f| factors.column(f)).collect();
    let rows: Vec<Vec<f64>> = (0..latents.ncols())
        .into_par_iter()
        .map(|d| {
            let column = latents.column(d).to_vec();
            let bins = discretize(&column, spec);
            factor_columns
                .iter()
                .map(|fc| normalized_mi(&bins, fc))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let mut values = Array2::zeros((latents.ncols(), factors.n_factors()));
    for (d, row) in rows.into_iter().enumerate() {
        for (f, v) in row.into_iter().enumerate() {
            values[[d, f]] = v;
        }
    }
    ImportanceMatrix::from_values(values, factors.factors().to_vec(), *spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    const LN2: f64 = std::f64::consts::LN_2;

    fn spec(strategy: BinningStrategy, n_bins: usize, zero_bin: bool) -> BinningSpec {
        BinningSpec {
            strategy,
            n_bins,
            zero_bin,
        }
    }

    #[test]
    fn all_zeros_with_zero_bin() {
        assert!(discretize(&[0.0; 7], &BinningSpec::default()).iter().all(|&b| b == 0));
    }

    #[test]
    fn equal_width_quartiles_of_one_to_hundred() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        let bins = discretize(&v, &spec(BinningStrategy::EqualWidth, 4, false));
        // Edges are 1 + 24.75 i: 25.75, 50.5, 75.25.
        for (x, b) in v.iter().zip(&bins) {
            let want = match *x as u32 {
                1..=25 => 0,
                26..=50 => 1,
                51..=75 => 2,
                _ => 3,
            };
            assert_eq!(*b, want, "value {x}");
        }
    }

    #[test]
    fn sparse_vector_zero_bin_holds_zero_count() {
        let mut v = vec![0.0; 95];
        v.extend((1..=5).map(f64::from));
        let bins = discretize(&v, &BinningSpec::default());
        assert_eq!(bins.iter().filter(|&&b| b == 0).count(), 95);
        assert!(bins[95..].iter().all(|&b| b >= 1));
    }

    #[test]
    fn quantile_ties_collapse() {
        let v = [1.0, 1.0, 1.0, 1.0, 2.0, 3.0];
        let bins = discretize(&v, &spec(BinningStrategy::Quantile, 3, false));
        // Only one edge (2.0) survives above the minimum.
        assert_eq!(bins, [0, 0, 0, 0, 1, 1]);
        let distinct: std::collections::BTreeSet<_> = bins.into_iter().collect();
        assert!(distinct.len() <= 3);
        assert_eq!(
            discretize(&[4.0; 5], &spec(BinningStrategy::Quantile, 3, false)),
            [0; 5]
        );
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy(&[3; 10]), 0.0);
        let fair: Vec<usize> = (0..100).map(|i| i % 2).collect();
        assert!((entropy(&fair) - LN2).abs() < 1e-12);
        let mut c = vec![0; 50];
        c.extend([1; 25]);
        c.extend([2; 25]);
        assert!((entropy(&c) - 1.5 * LN2).abs() < 1e-12);
    }

    #[test]
    fn mi_examples() {
        let f: Vec<usize> = (0..10).map(|i| usize::from(i < 3)).collect();
        assert_eq!(mutual_information(&[0; 10], &f).unwrap(), 0.0);
        assert!((mutual_information(&f, &f).unwrap() - entropy(&f)).abs() < 1e-12);
        assert!(mutual_information(&[0, 1], &[0]).is_err());

        // Joint counts (0,0):40 (0,1):10 (1,0):10 (1,1):40.
        let mut a = Vec::new();
        let mut b = Vec::new();
        for (x, y, c) in [(0, 0, 40), (0, 1, 10), (1, 0, 10), (1, 1, 40)] {
            a.extend(std::iter::repeat_n(x, c));
            b.extend(std::iter::repeat_n(y, c));
        }
        let expected = 2.0 * 0.4 * (0.4f64 / 0.25).ln() + 2.0 * 0.1 * (0.1f64 / 0.25).ln();
        assert!((mutual_information(&a, &b).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn nmi_matrix_hand_example() {
        // Two factors, four samples; factor 0 on rows 0 and 1.
        let table = FactorTable::new(vec!["A".into(), "B".into()], vec![0, 0, 1, 1], vec![0, 1, 2, 3]).unwrap();
        // dim 0 copies the factor; dim 1 is constant; dim 2 splits {0,2} vs {1,3}.
        let latents = array![[1.0, 5.0, 1.0], [1.0, 5.0, 2.0], [2.0, 5.0, 1.0], [2.0, 5.0, 2.0]];
        let m = nmi_matrix(latents.view(), &table, &spec(BinningStrategy::Quantile, 2, false)).unwrap();
        assert!((m.values[[0, 0]] - 1.0).abs() < 1e-12);
        assert!((m.values[[0, 1]] - 1.0).abs() < 1e-12);
        assert_eq!(m.values.row(1).to_vec(), [0.0, 0.0]);
        assert!(m.values[[2, 0]].abs() < 1e-12);
    }

    #[test]
    fn nmi_matrix_rejects_row_mismatch() {
        let table = FactorTable::new(vec!["A".into(), "B".into()], vec![0, 1], vec![0, 1]).unwrap();
        assert!(nmi_matrix(Array2::zeros((3, 2)).view(), &table, &BinningSpec::default()).is_err());
    }

    proptest! {
        #[test]
        fn mi_symmetric_and_bounded(pairs in prop::collection::vec((0usize..5, 0usize..3), 1..80)) {
            let (a, b): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            let ab = mutual_information(&a, &b).unwrap();
            let ba = mutual_information(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!(ab >= 0.0);
            prop_assert!(ab <= entropy(&a).min(entropy(&b)));
            let n = normalized_mi(&a, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&n));
        }

        #[test]
        fn quantile_bins_invariant_under_increasing_maps(
            values in prop::collection::vec(-50.0f64..50.0, 2..60),
            n_bins in 2usize..8,
        ) {
            let s = spec(BinningStrategy::Quantile, n_bins, false);
            let mapped: Vec<f64> = values.iter().map(|v| (v / 10.0).exp() + 1.0).collect();
            prop_assert_eq!(discretize(&values, &s), discretize(&mapped, &s));
        }

        #[test]
        fn distinct_bins_at_most_n_plus_one(
            values in prop::collection::vec(prop_oneof![Just(0.0), -5.0f64..5.0], 1..60),
            n_bins in 2usize..10,
            equal_width in any::<bool>(),
        ) {
            let strategy = if equal_width { BinningStrategy::EqualWidth } else { BinningStrategy::Quantile };
            let bins = discretize(&values, &spec(strategy, n_bins, true));
            let distinct: std::collections::BTreeSet<_> = bins.iter().collect();
            prop_assert!(distinct.len() <= n_bins + 1);
            prop_assert!(bins.iter().all(|&b| b <= n_bins));
        }
    }
}
