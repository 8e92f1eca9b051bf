//! Bot labeling from clusterings, the retweet-rate baseline and the binary
//! metric suite. Bots are the positive class throughout.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::cluster::ClusterLabeling;
use crate::error::{Error, Result};
use crate::ingest::UserSeries;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Bot,
    Human,
}

impl Label {
    pub fn flipped(self) -> Self {
        match self {
            Label::Bot => Label::Human,
            Label::Human => Label::Bot,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Bot => "bot",
            Label::Human => "human",
        })
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bot" | "1" => Ok(Label::Bot),
            "human" | "0" => Ok(Label::Human),
            other => Err(Error::Format(format!("unknown label '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Clustered,
    Noise,
    Baseline,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Clustered => "clustered",
            Provenance::Noise => "noise",
            Provenance::Baseline => "baseline",
        })
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "clustered" => Ok(Provenance::Clustered),
            "noise" => Ok(Provenance::Noise),
            "baseline" => Ok(Provenance::Baseline),
            other => Err(Error::Format(format!("unknown provenance '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectionResult {
    pub labels: BTreeMap<String, (Label, Provenance)>,
}

impl DetectionResult {
    pub fn predictions(&self) -> BTreeMap<String, Label> {
        self.labels.iter().map(|(k, (l, _))| (k.clone(), *l)).collect()
    }

    pub fn n_bots(&self) -> usize {
        self.labels.values().filter(|(l, _)| *l == Label::Bot).count()
    }
}

/// Clustered accounts are bots, noise accounts are humans.
pub fn label_from_clusters(labeling: &ClusterLabeling) -> DetectionResult {
    let labels = labeling
        .assignments
        .iter()
        .map(|(user, cluster)| {
            let entry = match cluster {
                Some(_) => (Label::Bot, Provenance::Clustered),
                None => (Label::Human, Provenance::Noise),
            };
            (user.clone(), entry)
        })
        .collect();
    DetectionResult { labels }
}

/// Quantile with linear interpolation between closest ranks
/// (`h = (n - 1) q`), the common "type 7" definition.
pub fn quantile_linear(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Accounts whose retweets per day strictly exceed the third quartile.
pub fn baseline_from_rates(rates: &BTreeMap<String, f64>) -> Result<DetectionResult> {
    if rates.len() < 4 {
        return Err(Error::Undefined(format!(
            "third quartile needs at least 4 accounts, got {}",
            rates.len()
        )));
    }
    let values: Vec<f64> = rates.values().copied().collect();
    let q3 = quantile_linear(&values, 0.75);
    let labels = rates
        .iter()
        .map(|(user, &r)| {
            let label = if r > q3 { Label::Bot } else { Label::Human };
            (user.clone(), (label, Provenance::Baseline))
        })
        .collect();
    Ok(DetectionResult { labels })
}

pub fn baseline_retweet_rate(series: &BTreeMap<String, UserSeries>) -> Result<DetectionResult> {
    let rates = series
        .iter()
        .map(|(u, s)| (u.clone(), s.rate_per_day()))
        .collect();
    baseline_from_rates(&rates)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    pub f1: f64,
    pub mcc: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    /// Metrics whose denominator was zero and were reported as 0.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub undefined: Vec<String>,
}

impl MetricsReport {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        let mut undefined = Vec::new();
        let mut ratio = |name: &str, num: f64, den: f64| {
            if den == 0.0 {
                undefined.push(name.to_string());
                0.0
            } else {
                num / den
            }
        };
        let (tpf, fpf, fnf, tnf) = (tp as f64, fp as f64, fn_ as f64, tn as f64);
        let n = tpf + fpf + fnf + tnf;
        let precision = ratio("precision", tpf, tpf + fpf);
        let recall = ratio("recall", tpf, tpf + fnf);
        let accuracy = ratio("accuracy", tpf + tnf, n);
        let f1 = ratio("f1", 2.0 * precision * recall, precision + recall);
        let mcc_den = ((tpf + fpf) * (tpf + fnf) * (tnf + fpf) * (tnf + fnf)).sqrt();
        let mcc = ratio("mcc", tpf * tnf - fpf * fnf, mcc_den);
        if !undefined.is_empty() {
            warn!("zero denominator for {}; reported as 0", undefined.join(", "));
        }
        Self {
            precision,
            recall,
            accuracy,
            f1,
            mcc,
            tp,
            fp,
            fn_,
            tn,
            undefined,
        }
    }
}

/// F1 as the harmonic mean of a given precision and recall.
pub fn f1_from(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn compute_metrics(
    pred: &BTreeMap<String, Label>,
    truth: &BTreeMap<String, Label>,
) -> Result<MetricsReport> {
    if pred.len() != truth.len() || pred.keys().zip(truth.keys()).any(|(a, b)| a != b) {
        let missing: Vec<_> = truth.keys().filter(|k| !pred.contains_key(*k)).take(5).collect();
        let extra: Vec<_> = pred.keys().filter(|k| !truth.contains_key(*k)).take(5).collect();
        return Err(Error::KeyMismatch(format!(
            "missing from prediction {missing:?}, absent from truth {extra:?}"
        )));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (user, p) in pred {
        match (p, truth[user]) {
            (Label::Bot, Label::Bot) => tp += 1,
            (Label::Bot, Label::Human) => fp += 1,
            (Label::Human, Label::Bot) => fn_ += 1,
            (Label::Human, Label::Human) => tn += 1,
        }
    }
    Ok(MetricsReport::from_counts(tp, fp, fn_, tn))
}

/// Restricts `truth` to the predicted accounts. Accounts dropped by the
/// activity filter never receive a prediction, so extra truth rows are
/// expected; a prediction without a truth row is an error.
pub fn align_truth(
    pred: &BTreeMap<String, Label>,
    truth: &BTreeMap<String, Label>,
) -> Result<BTreeMap<String, Label>> {
    let missing: Vec<_> = pred.keys().filter(|k| !truth.contains_key(*k)).take(5).collect();
    if !missing.is_empty() {
        return Err(Error::KeyMismatch(format!("no truth label for {missing:?}")));
    }
    Ok(pred.keys().map(|k| (k.clone(), truth[k])).collect())
}

/// Adjusted Rand index between two partitions given as per-point labels.
/// Noise may be passed as its own label value.
pub fn adjusted_rand_index<A: Ord + Clone, B: Ord + Clone>(a: &[A], b: &[B]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let comb2 = |x: f64| x * (x - 1.0) / 2.0;
    let mut table: BTreeMap<(A, B), f64> = BTreeMap::new();
    let mut rows: BTreeMap<A, f64> = BTreeMap::new();
    let mut cols: BTreeMap<B, f64> = BTreeMap::new();
    for (x, y) in a.iter().zip(b) {
        *table.entry((x.clone(), y.clone())).or_default() += 1.0;
        *rows.entry(x.clone()).or_default() += 1.0;
        *cols.entry(y.clone()).or_default() += 1.0;
    }
    let index: f64 = table.values().map(|&c| comb2(c)).sum();
    let sum_a: f64 = rows.values().map(|&c| comb2(c)).sum();
    let sum_b: f64 = cols.values().map(|&c| comb2(c)).sum();
    let expected = sum_a * sum_b / comb2(n);
    let max = 0.5 * (sum_a + sum_b);
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(v: &[(&str, Label)]) -> BTreeMap<String, Label> {
        v.iter().map(|(k, l)| (k.to_string(), *l)).collect()
    }

    #[test]
    fn hand_confusion_matrix() {
        let m = MetricsReport::from_counts(3, 1, 2, 4);
        assert!((m.precision - 0.75).abs() < 1e-12);
        assert!((m.recall - 0.6).abs() < 1e-12);
        assert!((m.accuracy - 0.7).abs() < 1e-12);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-12);
        // (12 - 2) / sqrt(4 * 5 * 5 * 6)
        assert!((m.mcc - 10.0 / 600f64.sqrt()).abs() < 1e-12);
        assert!((m.mcc - 0.4082).abs() < 1e-4);
        assert!(m.undefined.is_empty());
    }

    #[test]
    fn published_precision_recall_pair() {
        assert!((f1_from(0.9304, 0.8146) - 0.8687).abs() < 1e-3);
    }

    #[test]
    fn perfect_prediction() {
        let t = labels(&[("a", Label::Bot), ("b", Label::Human), ("c", Label::Bot)]);
        let m = compute_metrics(&t, &t).unwrap();
        for v in [m.precision, m.recall, m.accuracy, m.f1, m.mcc] {
            assert_eq!(v, 1.0);
        }
    }

    #[test]
    fn zero_denominators_flagged() {
        let t = labels(&[("a", Label::Bot), ("b", Label::Human)]);
        let p = labels(&[("a", Label::Human), ("b", Label::Human)]);
        let m = compute_metrics(&p, &t).unwrap();
        assert_eq!(m.precision, 0.0);
        assert_eq!(m.mcc, 0.0);
        assert!(m.undefined.contains(&"precision".to_string()));
        assert!(m.undefined.contains(&"mcc".to_string()));
    }

    #[test]
    fn key_mismatch_errors() {
        let t = labels(&[("a", Label::Bot)]);
        let p = labels(&[("b", Label::Bot)]);
        assert!(matches!(compute_metrics(&p, &t), Err(Error::KeyMismatch(_))));
    }

    #[test]
    fn flipping_predictions_negates_mcc() {
        let t = labels(&[
            ("a", Label::Bot),
            ("b", Label::Human),
            ("c", Label::Bot),
            ("d", Label::Human),
            ("e", Label::Human),
        ]);
        let p = labels(&[
            ("a", Label::Bot),
            ("b", Label::Bot),
            ("c", Label::Human),
            ("d", Label::Human),
            ("e", Label::Human),
        ]);
        let flipped: BTreeMap<_, _> = p.iter().map(|(k, l)| (k.clone(), l.flipped())).collect();
        let m1 = compute_metrics(&p, &t).unwrap();
        let m2 = compute_metrics(&flipped, &t).unwrap();
        assert!((m1.mcc + m2.mcc).abs() < 1e-12);
        let all_human: BTreeMap<_, _> = t.keys().map(|k| (k.clone(), Label::Human)).collect();
        assert!((compute_metrics(&all_human, &t).unwrap().accuracy - 0.6).abs() < 1e-12);
    }

    #[test]
    fn baseline_quartile() {
        let rates: BTreeMap<String, f64> =
            (1..=100).map(|i| (format!("u{i:03}"), i as f64)).collect();
        let values: Vec<f64> = rates.values().copied().collect();
        assert!((quantile_linear(&values, 0.75) - 75.25).abs() < 1e-12);
        let res = baseline_from_rates(&rates).unwrap();
        let bots: Vec<_> = res
            .labels
            .iter()
            .filter(|(_, (l, _))| *l == Label::Bot)
            .map(|(u, _)| u.clone())
            .collect();
        let expected: Vec<_> = (76..=100).map(|i| format!("u{i:03}")).collect();
        assert_eq!(bots, expected);

        let flat: BTreeMap<String, f64> = (0..8).map(|i| (format!("u{i}"), 3.0)).collect();
        assert_eq!(baseline_from_rates(&flat).unwrap().n_bots(), 0);

        let few: BTreeMap<String, f64> = (0..3).map(|i| (format!("u{i}"), 3.0)).collect();
        assert!(baseline_from_rates(&few).is_err());
    }

    #[test]
    fn cluster_labels_map_to_bots() {
        let mut assignments = BTreeMap::new();
        for i in 0..20 {
            assignments.insert(format!("u{i:02}"), if i < 12 { Some(0) } else { None });
        }
        let labeling = ClusterLabeling {
            assignments,
            stability: vec![1.0],
        };
        let res = label_from_clusters(&labeling);
        assert_eq!(res.n_bots(), 12);
        let none = ClusterLabeling {
            assignments: res.labels.keys().map(|k| (k.clone(), None)).collect(),
            stability: vec![],
        };
        assert_eq!(label_from_clusters(&none).n_bots(), 0);
    }

    #[test]
    fn ari_extremes() {
        let a = [0, 0, 1, 1, 2, 2];
        let renamed = [5, 5, 3, 3, 9, 9];
        assert!((adjusted_rand_index(&a, &renamed) - 1.0).abs() < 1e-12);
        let b = [0, 1, 0, 1, 0, 1];
        assert!(adjusted_rand_index(&a, &b) < 0.1);
    }
}
