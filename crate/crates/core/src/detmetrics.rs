//! Detection metrics on bonafide-polarity scores: EER, normalized minimum
//! DCF, per-attack EER and the attack-retention rule.
//!
//! Scores are oriented so that higher means more bonafide. For a threshold
//! `t`, bonafide samples scoring below `t` are misses (false rejections) and
//! spoof samples scoring at or above `t` are false alarms. Thresholds range
//! over the observed scores plus the `-inf` / `+inf` sentinels, since both
//! rates only change at observed values.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{SampleClass, SampleLabel};
use crate::error::{Error, Result};

/// Attacks whose EER exceeds this are dropped from disentanglement analysis.
pub const DEFAULT_RETENTION_THRESHOLD: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub sample_id: String,
    pub score: f64,
    pub class: SampleClass,
    pub attack_id: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoreSet {
    entries: Vec<ScoreEntry>,
}

impl ScoreSet {
    pub fn new(entries: Vec<ScoreEntry>) -> Result<Self> {
        for e in &entries {
            if !e.score.is_finite() {
                return Err(Error::InvalidLabel(format!("score of {:?} is not finite", e.sample_id)));
            }
            SampleLabel {
                sample_id: e.sample_id.clone(),
                class: e.class,
                attack_id: e.attack_id.clone(),
            }
            .validate()?;
        }
        Ok(ScoreSet { entries })
    }

    /// Pairs each label with its score.
    pub fn from_labels(labels: &[SampleLabel], scores: &[f64]) -> Result<Self> {
        if labels.len() != scores.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for {} scores",
                labels.len(),
                scores.len()
            )));
        }
        ScoreSet::new(
            labels
                .iter()
                .zip(scores)
                .map(|(l, &score)| ScoreEntry {
                    sample_id: l.sample_id.clone(),
                    score,
                    class: l.class,
                    attack_id: l.attack_id.clone(),
                })
                .collect(),
        )
    }

    pub fn entries(&self) -> &[ScoreEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn class_scores(&self, class: SampleClass) -> Vec<f64> {
        self.entries
            .iter()
            .filter(|e| e.class == class)
            .map(|e| e.score)
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DcfParams {
    pub c_miss: f64,
    pub c_fa: f64,
    pub p_target: f64,
}

impl Default for DcfParams {
    fn default() -> Self {
        DcfParams {
            c_miss: 1.0,
            c_fa: 10.0,
            p_target: 0.05,
        }
    }
}

impl DcfParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.c_miss.is_finite()
            && self.c_miss > 0.0
            && self.c_fa.is_finite()
            && self.c_fa > 0.0
            && self.p_target > 0.0
            && self.p_target < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "DCF parameters need positive costs and p_target in (0, 1), got {self:?}"
            )))
        }
    }

    /// Weighted cost of one operating point, unnormalized.
    pub fn cost(&self, frr: f64, far: f64) -> f64 {
        (self.c_miss * self.p_target) * frr + (self.c_fa * (1.0 - self.p_target)) * far
    }

    /// Cost of the best decision that ignores the scores.
    pub fn default_cost(&self) -> f64 {
        (self.c_miss * self.p_target).min(self.c_fa * (1.0 - self.p_target))
    }
}

/// One point of the error-rate sweep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OperatingPoint {
    pub threshold: f64,
    /// Fraction of bonafide scoring below the threshold.
    pub frr: f64,
    /// Fraction of spoof scoring at or above the threshold.
    pub far: f64,
}

/// Error rates at every candidate threshold, ascending.
pub fn error_rate_curve(scores: &ScoreSet) -> Result<Vec<OperatingPoint>> {
    let mut bona = scores.class_scores(SampleClass::Bonafide);
    let mut spoof = scores.class_scores(SampleClass::Spoof);
    if bona.is_empty() {
        return Err(Error::MissingClass("no bonafide scores".into()));
    }
    if spoof.is_empty() {
        return Err(Error::MissingClass("no spoof scores".into()));
    }
    bona.sort_by(f64::total_cmp);
    spoof.sort_by(f64::total_cmp);
    let mut thresholds: Vec<f64> = bona.iter().chain(&spoof).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();

    let (nb, ns) = (bona.len(), spoof.len());
    let point = |threshold: f64, below_b: usize, below_s: usize| OperatingPoint {
        threshold,
        frr: below_b as f64 / nb as f64,
        far: (ns - below_s) as f64 / ns as f64,
    };
    let mut curve = Vec::with_capacity(thresholds.len() + 2);
    curve.push(point(f64::NEG_INFINITY, 0, 0));
    let (mut ib, mut is) = (0, 0);
    for &t in &thresholds {
        while ib < nb && bona[ib] < t {
            ib += 1;
        }
        while is < ns && spoof[is] < t {
            is += 1;
        }
        curve.push(point(t, ib, is));
    }
    curve.push(point(f64::INFINITY, nb, ns));
    Ok(curve)
}

/// Equal error rate: the midpoint of FRR and FAR at the threshold where
/// they are closest (lowest such threshold on ties). Equals the common
/// value wherever the two rates coincide exactly.
pub fn eer(scores: &ScoreSet) -> Result<f64> {
    let curve = error_rate_curve(scores)?;
    Ok(eer_from_curve(&curve))
}

fn eer_from_curve(curve: &[OperatingPoint]) -> f64 {
    let mut best = curve[0];
    for p in &curve[1..] {
        if (p.frr - p.far).abs() < (best.frr - best.far).abs() {
            best = *p;
        }
    }
    (best.frr + best.far) / 2.0
}

/// Minimum over thresholds of the detection cost, normalized by the cost
/// of the best score-independent decision. Always within `[0, 1]`.
pub fn min_dcf(scores: &ScoreSet, params: &DcfParams) -> Result<f64> {
    params.validate()?;
    let curve = error_rate_curve(scores)?;
    Ok(min_dcf_from_curve(&curve, params))
}

fn min_dcf_from_curve(curve: &[OperatingPoint], params: &DcfParams) -> f64 {
    let min = curve
        .iter()
        .map(|p| params.cost(p.frr, p.far))
        .fold(f64::INFINITY, f64::min);
    min / params.default_cost()
}

/// EER of all bonafide scores against each attack's spoof scores.
pub fn per_attack_eer(scores: &ScoreSet) -> Result<BTreeMap<String, f64>> {
    let bona: Vec<&ScoreEntry> = scores
        .entries
        .iter()
        .filter(|e| e.class == SampleClass::Bonafide)
        .collect();
    if bona.is_empty() {
        return Err(Error::MissingClass("no bonafide scores".into()));
    }
    let mut by_attack: BTreeMap<&str, Vec<&ScoreEntry>> = BTreeMap::new();
    for e in &scores.entries {
        if let Some(a) = e.attack_id.as_deref() {
            by_attack.entry(a).or_default().push(e);
        }
    }
    by_attack
        .into_iter()
        .map(|(attack, spoofs)| {
            let subset = ScoreSet {
                entries: bona.iter().chain(&spoofs).map(|&e| e.clone()).collect(),
            };
            Ok((attack.to_owned(), eer(&subset)?))
        })
        .collect()
}

/// Attacks whose EER is at most `threshold`, sorted by name.
pub fn retained_attacks(per_attack: &BTreeMap<String, f64>, threshold: f64) -> Vec<String> {
    per_attack
        .iter()
        .filter(|(_, &e)| e <= threshold)
        .map(|(a, _)| a.clone())
        .collect()
}

/// Global and per-attack detection metrics for one score file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionSummary {
    pub eer: f64,
    pub min_dcf: f64,
    pub dcf_params: DcfParams,
    pub per_attack_eer: BTreeMap<String, f64>,
    pub retention_threshold: f64,
    pub retained_attacks: Vec<String>,
}

pub fn summarize(scores: &ScoreSet, params: &DcfParams, retention_threshold: f64) -> Result<DetectionSummary> {
    let per_attack = per_attack_eer(scores)?;
    Ok(DetectionSummary {
        eer: eer(scores)?,
        min_dcf: min_dcf(scores, params)?,
        dcf_params: *params,
        retained_attacks: retained_attacks(&per_attack, retention_threshold),
        per_attack_eer: per_attack,
        retention_threshold,
    })
}

const SCORE_POLARITY_COMMENT: &str = "# score = log P(bonafide | embedding), natural log; higher means more bonafide";

pub fn write_scores(scores: &ScoreSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    writeln!(file, "{SCORE_POLARITY_COMMENT}").map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["sample_id", "score", "class", "attack_id"])?;
    for e in &scores.entries {
        w.write_record([
            e.sample_id.as_str(),
            &e.score.to_string(),
            e.class.as_str(),
            e.attack_id.as_deref().unwrap_or(""),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<ScoreSet> {
    let path = path.as_ref();
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let header = r.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["sample_id", "score", "class", "attack_id"] {
        return Err(Error::malformed(
            path,
            "score header must be sample_id,score,class,attack_id",
        ));
    }
    let entries = r
        .deserialize::<ScoreEntry>()
        .map(|rec| {
            let mut e = rec?;
            e.attack_id = e.attack_id.filter(|a| !a.is_empty());
            Ok(e)
        })
        .collect::<Result<Vec<_>>>()?;
    ScoreSet::new(entries)
}
