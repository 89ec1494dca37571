//! Completeness, modularity and the nMI survival curve of an importance
//! matrix, plus averaging over seeds.
//!
//! Completeness of factor `f` normalizes column `f` over dimensions,
//! `q_d = M[d, f] / sum_d M[d, f]`, and returns `1 + sum_d q_d log_D q_d`.
//! Modularity of dimension `d` normalizes row `d` over factors,
//! `r_f = M[d, f] / sum_f M[d, f]`, and returns `1 + sum_f r_f log_F r_f`.
//! Both are 1 when the mass sits on a single entry and 0 when it is spread
//! uniformly. An all-zero column or row has no defined value.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::infotheory::ImportanceMatrix;

/// `1 + sum p log_n p` for the distribution proportional to `weights`,
/// or `None` when every weight is zero.
fn concentration<'a>(weights: impl Iterator<Item = &'a f64> + Clone, n: usize) -> Option<f64> {
    let total: f64 = weights.clone().sum();
    if total <= 0.0 {
        return None;
    }
    if n == 1 {
        return Some(1.0);
    }
    let ln_n = (n as f64).ln();
    let sum_p_log_p: f64 = weights
        .filter(|&&w| w > 0.0)
        .map(|&w| {
            let p = w / total;
            p * p.ln()
        })
        .sum();
    Some(1.0 + sum_p_log_p / ln_n)
}

pub fn completeness(m: &ImportanceMatrix, factor: usize) -> Result<f64> {
    if factor >= m.n_factors() {
        return Err(Error::DimensionMismatch(format!(
            "factor {factor} out of range for {} factors",
            m.n_factors()
        )));
    }
    concentration(m.values.column(factor).into_iter(), m.n_dims()).ok_or_else(|| Error::NoInformation {
        what: format!("factor {:?}", m.factor_names[factor]),
    })
}

pub fn modularity(m: &ImportanceMatrix, dim: usize) -> Result<f64> {
    if dim >= m.n_dims() {
        return Err(Error::DimensionMismatch(format!(
            "dimension {dim} out of range for {} dimensions",
            m.n_dims()
        )));
    }
    concentration(m.values.row(dim).into_iter(), m.n_factors()).ok_or_else(|| Error::NoInformation {
        what: format!("dimension {dim}"),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurvivalPoint {
    pub threshold: f64,
    /// Fraction of matrix entries strictly above `threshold`.
    pub fraction_above: f64,
}

/// Fraction of entries strictly above each threshold. Thresholds are
/// expected in ascending order, which makes the fractions nonincreasing.
pub fn survival_curve(m: &ImportanceMatrix, thresholds: &[f64]) -> Vec<SurvivalPoint> {
    let total = m.values.len();
    thresholds
        .iter()
        .map(|&t| {
            let above = m.values.iter().filter(|&&v| v > t).count();
            SurvivalPoint {
                threshold: t,
                fraction_above: if total == 0 { 0.0 } else { above as f64 / total as f64 },
            }
        })
        .collect()
}

/// Thresholds `0.00, 0.01, ..., 1.00`.
pub fn default_survival_thresholds() -> Vec<f64> {
    (0..=100).map(|i| i as f64 / 100.0).collect()
}

/// Per-factor completeness, per-dimension modularity and the survival
/// curve of one or more importance matrices. `None` marks a factor or
/// dimension without information.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisentanglementReport {
    pub factor_names: Vec<String>,
    pub completeness: Vec<Option<f64>>,
    pub modularity: Vec<Option<f64>>,
    pub survival: Vec<SurvivalPoint>,
    /// Number of reports averaged into this one.
    pub n_reports: usize,
    /// Per factor, how many averaged reports had no completeness value.
    pub completeness_excluded: Vec<usize>,
    /// Per dimension, how many averaged reports had no modularity value.
    pub modularity_excluded: Vec<usize>,
}

impl DisentanglementReport {
    pub fn from_matrix(m: &ImportanceMatrix, thresholds: &[f64]) -> Self {
        let completeness: Vec<Option<f64>> = (0..m.n_factors()).map(|f| completeness(m, f).ok()).collect();
        let modularity: Vec<Option<f64>> = (0..m.n_dims()).map(|d| modularity(m, d).ok()).collect();
        DisentanglementReport {
            factor_names: m.factor_names.clone(),
            completeness_excluded: completeness.iter().map(|c| usize::from(c.is_none())).collect(),
            modularity_excluded: modularity.iter().map(|c| usize::from(c.is_none())).collect(),
            completeness,
            modularity,
            survival: survival_curve(m, thresholds),
            n_reports: 1,
        }
    }

    pub fn completeness_of(&self, factor: &str) -> Option<f64> {
        let i = self.factor_names.iter().position(|f| f == factor)?;
        self.completeness[i]
    }

    /// Mean over factors with a defined completeness.
    pub fn mean_completeness(&self) -> Option<f64> {
        mean_defined(&self.completeness)
    }

    /// Mean over dimensions with a defined modularity.
    pub fn mean_modularity(&self) -> Option<f64> {
        mean_defined(&self.modularity)
    }

    /// Survival fraction at `threshold`, if it is on the curve.
    pub fn survival_at(&self, threshold: f64) -> Option<f64> {
        self.survival
            .iter()
            .find(|p| p.threshold == threshold)
            .map(|p| p.fraction_above)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    /// `factor,completeness` rows; `NA` for undefined values.
    pub fn write_completeness_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["factor", "completeness"])?;
        for (f, c) in self.factor_names.iter().zip(&self.completeness) {
            w.write_record([f.as_str(), &fmt_opt(*c)])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// `dimension,modularity` rows; `NA` for undefined values.
    pub fn write_modularity_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["dimension", "modularity"])?;
        for (d, m) in self.modularity.iter().enumerate() {
            w.write_record([d.to_string(), fmt_opt(*m)])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_survival_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["threshold", "fraction_above"])?;
        for p in &self.survival {
            w.write_record([p.threshold.to_string(), p.fraction_above.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub(crate) fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_owned(), |v| v.to_string())
}

fn mean_defined(values: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    }
}

/// Pointwise arithmetic mean of reports from the same configuration.
/// Undefined entries are left out of each mean and counted in the
/// `*_excluded` fields.
pub fn aggregate_over_seeds(reports: &[DisentanglementReport]) -> Result<DisentanglementReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::InvalidConfig("no reports to aggregate".into()))?;
    for r in &reports[1..] {
        if r.factor_names != first.factor_names {
            return Err(Error::DimensionMismatch(format!(
                "factor sets differ: {:?} vs {:?}",
                first.factor_names, r.factor_names
            )));
        }
        if r.modularity.len() != first.modularity.len() {
            return Err(Error::DimensionMismatch(format!(
                "latent widths differ: {} vs {}",
                first.modularity.len(),
                r.modularity.len()
            )));
        }
        let same_thresholds = r.survival.len() == first.survival.len()
            && r.survival
                .iter()
                .zip(&first.survival)
                .all(|(a, b)| a.threshold == b.threshold);
        if !same_thresholds {
            return Err(Error::DimensionMismatch("survival thresholds differ".into()));
        }
    }

    let average = |pick: &dyn Fn(&DisentanglementReport) -> &[Option<f64>],
                   excluded: &dyn Fn(&DisentanglementReport) -> &[usize],
                   len: usize| {
        (0..len)
            .map(|i| {
                let defined: Vec<f64> = reports.iter().filter_map(|r| pick(r)[i]).collect();
                let mean = if defined.is_empty() {
                    None
                } else {
                    Some(defined.iter().sum::<f64>() / defined.len() as f64)
                };
                (mean, reports.iter().map(|r| excluded(r)[i]).sum::<usize>())
            })
            .unzip::<_, _, Vec<_>, Vec<_>>()
    };
    let (completeness, completeness_excluded) = average(
        &|r| &r.completeness,
        &|r| &r.completeness_excluded,
        first.completeness.len(),
    );
    let (modularity, modularity_excluded) =
        average(&|r| &r.modularity, &|r| &r.modularity_excluded, first.modularity.len());
    let survival = first
        .survival
        .iter()
        .enumerate()
        .map(|(i, p)| SurvivalPoint {
            threshold: p.threshold,
            fraction_above: reports.iter().map(|r| r.survival[i].fraction_above).sum::<f64>() / reports.len() as f64,
        })
        .collect();
    Ok(DisentanglementReport {
        factor_names: first.factor_names.clone(),
        completeness,
        modularity,
        survival,
        n_reports: reports.iter().map(|r| r.n_reports).sum(),
        completeness_excluded,
        modularity_excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::infotheory::BinningSpec;
    use ndarray::{array, Array2};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn matrix(values: Array2<f64>) -> ImportanceMatrix {
        let names = (0..values.ncols()).map(|f| format!("F{f}")).collect();
        ImportanceMatrix::from_values(values, names, BinningSpec::default()).unwrap()
    }

    #[test]
    fn identity_is_perfect() {
        let m = matrix(Array2::eye(5));
        for i in 0..5 {
            assert_eq!(completeness(&m, i).unwrap(), 1.0);
            assert_eq!(modularity(&m, i).unwrap(), 1.0);
        }
    }

    #[test]
    fn uniform_is_zero() {
        for n in [2, 3, 4, 7] {
            let m = matrix(Array2::from_elem((n, n), 0.3));
            assert!(completeness(&m, 0).unwrap().abs() < 1e-12);
            assert!(modularity(&m, n - 1).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn hand_computed_column_and_row() {
        // q = [0.75, 0.25]: 1 - H2(q) = 1 - 0.811278 = 0.188722.
        let m = matrix(array![[0.3, 0.0], [0.1, 0.0]]);
        assert!((completeness(&m, 0).unwrap() - 0.1887).abs() < 1e-4);
        // r = [0.4, 0.2, 0.2, 0.2]: 1 - H4(r) = 1 - 0.960964 = 0.039036.
        let m = matrix(array![[0.4, 0.2, 0.2, 0.2]]);
        assert!((modularity(&m, 0).unwrap() - 0.0390).abs() < 1e-4);
    }

    #[test]
    fn all_zero_is_no_information() {
        let m = matrix(array![[0.0, 0.5], [0.0, 0.1]]);
        assert!(matches!(completeness(&m, 0), Err(Error::NoInformation { .. })));
        let m = matrix(array![[0.0, 0.0], [0.2, 0.1]]);
        assert!(matches!(modularity(&m, 0), Err(Error::NoInformation { .. })));
        let report = DisentanglementReport::from_matrix(&m, &[0.0]);
        assert_eq!(report.modularity[0], None);
        assert_eq!(report.modularity_excluded, [1, 0]);
    }

    #[test]
    fn survival_examples() {
        let m = matrix(array![[0.01, 0.05], [0.10, 0.20]]);
        let curve = survival_curve(&m, &[-0.1, 0.05, 0.20]);
        assert_eq!(curve[0].fraction_above, 1.0);
        assert_eq!(curve[1].fraction_above, 0.5);
        assert_eq!(curve[2].fraction_above, 0.0);
    }

    #[test]
    fn aggregate_examples() {
        let m = matrix(array![[0.3, 0.0], [0.1, 0.2]]);
        let single = DisentanglementReport::from_matrix(&m, &[0.0, 0.1]);
        assert_eq!(aggregate_over_seeds(std::slice::from_ref(&single)).unwrap(), single);

        let mut a = single.clone();
        let mut b = single.clone();
        a.factor_names = vec!["A09".into(), "bonafide".into()];
        b.factor_names = a.factor_names.clone();
        a.completeness[0] = Some(0.1);
        b.completeness[0] = Some(0.3);
        let avg = aggregate_over_seeds(&[a.clone(), b]).unwrap();
        assert!((avg.completeness_of("A09").unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(avg.n_reports, 2);

        let mut c = a.clone();
        c.factor_names[0] = "A10".into();
        assert!(aggregate_over_seeds(&[a, c]).is_err());
    }

    #[test]
    fn aggregate_excludes_undefined() {
        let m = matrix(array![[0.3, 0.0], [0.1, 0.2]]);
        let mut a = DisentanglementReport::from_matrix(&m, &[0.0]);
        let b = a.clone();
        a.completeness[1] = None;
        a.completeness_excluded[1] = 1;
        let avg = aggregate_over_seeds(&[a, b.clone()]).unwrap();
        assert_eq!(avg.completeness[1], b.completeness[1]);
        assert_eq!(avg.completeness_excluded, [0, 1]);
    }

    #[test]
    fn aggregate_matches_summation_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let reports: Vec<DisentanglementReport> = (0..4)
            .map(|_| {
                let values = Array2::from_shape_simple_fn((6, 3), || rng.random::<f64>());
                DisentanglementReport::from_matrix(&matrix(values), &default_survival_thresholds())
            })
            .collect();
        let avg = aggregate_over_seeds(&reports).unwrap();
        for f in 0..3 {
            let mut sum = 0.0;
            for r in &reports {
                sum += r.completeness[f].unwrap();
            }
            assert!((avg.completeness[f].unwrap() - sum / 4.0).abs() < 1e-12);
        }
        for d in 0..6 {
            let mut sum = 0.0;
            for r in &reports {
                sum += r.modularity[d].unwrap();
            }
            assert!((avg.modularity[d].unwrap() - sum / 4.0).abs() < 1e-12);
        }
        for (i, p) in avg.survival.iter().enumerate() {
            let mut sum = 0.0;
            for r in &reports {
                sum += r.survival[i].fraction_above;
            }
            assert!((p.fraction_above - sum / 4.0).abs() < 1e-12);
        }
    }

    fn arb_matrix() -> impl Strategy<Value = Array2<f64>> {
        (1usize..8, 2usize..6).prop_flat_map(|(d, f)| {
            prop::collection::vec(prop_oneof![Just(0.0), 0.001f64..1.0], d * f)
                .prop_map(move |v| Array2::from_shape_vec((d, f), v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn metrics_within_unit_interval(values in arb_matrix()) {
            let m = matrix(values);
            for f in 0..m.n_factors() {
                if let Ok(c) = completeness(&m, f) {
                    prop_assert!((-1e-12..=1.0 + 1e-12).contains(&c));
                }
            }
            for d in 0..m.n_dims() {
                if let Ok(v) = modularity(&m, d) {
                    prop_assert!((-1e-12..=1.0 + 1e-12).contains(&v));
                }
            }
        }

        #[test]
        fn scale_invariance(values in arb_matrix(), scale in 0.01f64..0.99) {
            let m = matrix(values);
            let mut col_only = m.values.clone();
            col_only.column_mut(1).mapv_inplace(|v| v * scale);
            let c = matrix(col_only);
            if let Ok(a) = completeness(&m, 1) {
                prop_assert!((a - completeness(&c, 1).unwrap()).abs() < 1e-12);
            }
            let mut row_only = m.values.clone();
            row_only.row_mut(0).mapv_inplace(|v| v * scale);
            let r = matrix(row_only);
            if let Ok(a) = modularity(&m, 0) {
                prop_assert!((a - modularity(&r, 0).unwrap()).abs() < 1e-12);
            }
        }

        #[test]
        fn permuting_dimensions(values in arb_matrix(), seed in any::<u64>()) {
            let m = matrix(values.clone());
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut perm: Vec<usize> = (0..values.nrows()).collect();
            for i in (1..perm.len()).rev() {
                perm.swap(i, rng.random_range(0..=i));
            }
            let p = matrix(values.select(ndarray::Axis(0), &perm));
            for f in 0..m.n_factors() {
                match (completeness(&m, f), completeness(&p, f)) {
                    (Ok(a), Ok(b)) => prop_assert!((a - b).abs() < 1e-12),
                    (Err(_), Err(_)) => {}
                    _ => prop_assert!(false, "definedness changed under permutation"),
                }
            }
            for (new_d, &old_d) in perm.iter().enumerate() {
                prop_assert_eq!(modularity(&p, new_d).ok(), modularity(&m, old_d).ok());
            }
        }

        #[test]
        fn single_nonzero_is_one(d in 1usize..8, f in 2usize..6, at_d in 0usize..8, at_f in 0usize..6, v in 0.01f64..1.0) {
            let mut values = Array2::zeros((d, f));
            values[[at_d % d, at_f % f]] = v;
            let m = matrix(values);
            prop_assert_eq!(completeness(&m, at_f % f).unwrap(), 1.0);
            prop_assert_eq!(modularity(&m, at_d % d).unwrap(), 1.0);
        }

        #[test]
        fn survival_nonincreasing_and_starts_at_nonzero_fraction(values in arb_matrix()) {
            let m = matrix(values);
            let mut thresholds = vec![-f64::MIN_POSITIVE];
            thresholds.extend(default_survival_thresholds());
            let curve = survival_curve(&m, &thresholds);
            for w in curve.windows(2) {
                prop_assert!(w[1].fraction_above <= w[0].fraction_above);
            }
            let nonzero = m.values.iter().filter(|&&v| v != 0.0).count() as f64 / m.values.len() as f64;
            prop_assert_eq!(curve[0].fraction_above, 1.0);
            prop_assert_eq!(curve[1].fraction_above, nonzero);
        }
    }
}
