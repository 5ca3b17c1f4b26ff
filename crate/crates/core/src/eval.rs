//! Precision/recall bookkeeping, ranking metrics and the max-tags × reliability sweep.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compiler::{compile_tags, CompilerPolicy, Rule, TagList};
use crate::corpus::{Citation, LabelVocabulary};
use crate::error::{Error, Result};
use crate::scorer::{LabelMetrics, ScoreVector, ScorerDescriptor};

/// Reference labels of one citation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gold {
    pub id: String,
    pub labels: BTreeSet<String>,
}

impl From<&Citation> for Gold {
    fn from(c: &Citation) -> Self {
        Gold {
            id: c.id.clone(),
            labels: c.labels.clone(),
        }
    }
}

pub fn gold_of(corpus: &[Citation]) -> Vec<Gold> {
    corpus.iter().map(Gold::from).collect()
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Precision, recall and F1 from raw counts; empty denominators give 0.
pub fn prf(tp: u64, fp: u64, fn_: u64) -> LabelMetrics {
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    LabelMetrics {
        precision,
        recall,
        f1: harmonic(precision, recall),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl Counts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    fn add(&mut self, o: &Counts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.tn += o.tn;
    }
}

/// Per-label contingency counts, labels kept in evaluation order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub labels: Vec<String>,
    pub counts: Vec<Counts>,
    pub citations: u64,
}

impl ConfusionCounts {
    pub fn get(&self, label: &str) -> Option<&Counts> {
        self.labels.iter().position(|l| l == label).map(|i| &self.counts[i])
    }

    pub fn summed(&self) -> Counts {
        let mut total = Counts::default();
        for c in &self.counts {
            total.add(c);
        }
        total
    }
}

/// Tallies predictions against gold over `labels`. Records pair up by position and must
/// carry the same id; a label outside `labels` on either side is an error.
pub fn confusion_counts(predicted: &[TagList], gold: &[Gold], labels: &[String]) -> Result<ConfusionCounts> {
    if predicted.len() != gold.len() {
        return Err(Error::Alignment(format!(
            "{} predictions vs {} gold records",
            predicted.len(),
            gold.len()
        )));
    }
    let index: BTreeMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let mut counts = vec![Counts::default(); labels.len()];
    let mut pred_hit = vec![false; labels.len()];
    let mut gold_hit = vec![false; labels.len()];
    for (p, g) in predicted.iter().zip(gold) {
        if p.citation_id != g.id {
            return Err(Error::Alignment(format!(
                "prediction `{}` lines up with gold `{}`",
                p.citation_id, g.id
            )));
        }
        pred_hit.fill(false);
        gold_hit.fill(false);
        for (set, hits) in [(p.tags.iter().collect::<Vec<_>>(), &mut pred_hit), (g.labels.iter().collect(), &mut gold_hit)] {
            for l in set {
                let &i = index.get(l.as_str()).ok_or_else(|| Error::UnknownLabel {
                    citation: g.id.clone(),
                    label: l.clone(),
                })?;
                hits[i] = true;
            }
        }
        for (i, c) in counts.iter_mut().enumerate() {
            match (pred_hit[i], gold_hit[i]) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
    }
    Ok(ConfusionCounts {
        labels: labels.to_vec(),
        counts,
        citations: gold.len() as u64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelReport {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_label: Vec<LabelReport>,
    #[serde(rename = "macro")]
    pub macro_avg: Averages,
    pub micro: Averages,
    pub cumulative_accuracy: f64,
}

/// Unweighted means of precision, recall and F1 over the given rows.
pub fn macro_average(rows: &[LabelMetrics]) -> Averages {
    let n = rows.len() as f64;
    if rows.is_empty() {
        return Averages { precision: 0.0, recall: 0.0, f1: 0.0 };
    }
    Averages {
        precision: rows.iter().map(|m| m.precision).sum::<f64>() / n,
        recall: rows.iter().map(|m| m.recall).sum::<f64>() / n,
        f1: rows.iter().map(|m| m.f1).sum::<f64>() / n,
    }
}

/// Macro means skip labels without gold positives; micro figures come from summed counts.
pub fn metric_report(counts: &ConfusionCounts) -> MetricReport {
    let per_label: Vec<LabelReport> = counts
        .labels
        .iter()
        .zip(&counts.counts)
        .map(|(label, c)| {
            let m = prf(c.tp, c.fp, c.fn_);
            LabelReport {
                label: label.clone(),
                precision: m.precision,
                recall: m.recall,
                f1: m.f1,
                support: c.tp + c.fn_,
            }
        })
        .collect();
    let supported: Vec<LabelMetrics> = per_label
        .iter()
        .filter(|r| r.support > 0)
        .map(|r| LabelMetrics { precision: r.precision, recall: r.recall, f1: r.f1 })
        .collect();
    let total = counts.summed();
    let micro = prf(total.tp, total.fp, total.fn_);
    MetricReport {
        per_label,
        macro_avg: macro_average(&supported),
        micro: Averages { precision: micro.precision, recall: micro.recall, f1: micro.f1 },
        cumulative_accuracy: ratio(total.tp + total.tn, total.total()),
    }
}

impl MetricReport {
    pub fn to_text(&self) -> String {
        let width = self.per_label.iter().map(|r| r.label.len()).chain([13]).max().unwrap_or(13);
        let mut s = String::new();
        let _ = writeln!(s, "{:<width$}  {:>9}  {:>9}  {:>9}  {:>9}", "label", "precision", "recall", "f1", "support");
        for r in &self.per_label {
            let _ = writeln!(
                s,
                "{:<width$}  {:>9.4}  {:>9.4}  {:>9.4}  {:>9}",
                r.label, r.precision, r.recall, r.f1, r.support
            );
        }
        for (name, a) in [("macro", &self.macro_avg), ("micro", &self.micro)] {
            let _ = writeln!(s, "{:<width$}  {:>9.4}  {:>9.4}  {:>9.4}", name, a.precision, a.recall, a.f1);
        }
        let _ = writeln!(s, "{:<width$}  {:>9.4}", "cum. accuracy", self.cumulative_accuracy);
        s
    }
}

fn check_ranking_input(scores: &[f64], gold: &[bool]) -> Result<(u64, u64)> {
    if scores.len() != gold.len() {
        return Err(Error::Alignment(format!("{} scores vs {} gold flags", scores.len(), gold.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::UndefinedMetric("score is NaN".into()));
    }
    let pos = gold.iter().filter(|&&g| g).count() as u64;
    Ok((pos, gold.len() as u64 - pos))
}

/// Sorted (score, positives, negatives) groups of tied scores, highest score first.
fn tie_groups(scores: &[f64], gold: &[bool]) -> Vec<(u64, u64)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut groups: Vec<(u64, u64)> = Vec::new();
    let mut prev: Option<f64> = None;
    for i in order {
        if prev != Some(scores[i]) {
            groups.push((0, 0));
            prev = Some(scores[i]);
        }
        let g = groups.last_mut().expect("group pushed");
        if gold[i] {
            g.0 += 1;
        } else {
            g.1 += 1;
        }
    }
    groups
}

/// Probability that a random positive outscores a random negative, ties counting ½.
pub fn auc_roc(scores: &[f64], gold: &[bool]) -> Result<f64> {
    let (pos, neg) = check_ranking_input(scores, gold)?;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("AUC-ROC needs both positives and negatives".into()));
    }
    // twice the number of correctly ordered pairs, kept in integers until the end
    let mut doubled: u128 = 0;
    let mut neg_below = neg as u128;
    for (p, n) in tie_groups(scores, gold) {
        neg_below -= n as u128;
        doubled += 2 * p as u128 * neg_below + p as u128 * n as u128;
    }
    Ok(doubled as f64 / (2.0 * pos as f64 * neg as f64))
}

/// Step-wise average precision: each block of tied scores contributes its recall gain
/// times the precision after the block.
pub fn auc_pr(scores: &[f64], gold: &[bool]) -> Result<f64> {
    let (pos, _) = check_ranking_input(scores, gold)?;
    if pos == 0 {
        return Err(Error::UndefinedMetric("AUC-PR needs at least one positive".into()));
    }
    let (mut tp, mut seen) = (0u64, 0u64);
    let mut ap = 0.0;
    for (p, n) in tie_groups(scores, gold) {
        tp += p;
        seen += p + n;
        if p > 0 {
            ap += (p as f64 / pos as f64) * (tp as f64 / seen as f64);
        }
    }
    Ok(ap)
}

/// Per-label ranking metrics for scored citations; `None` where a metric is undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub label: String,
    pub auc_roc: Option<f64>,
    pub auc_pr: Option<f64>,
}

pub fn ranking_report(scores: &[ScoreVector], gold: &[Gold]) -> Result<Vec<RankingReport>> {
    if scores.len() != gold.len() {
        return Err(Error::Alignment(format!("{} score vectors vs {} gold records", scores.len(), gold.len())));
    }
    let labels: BTreeSet<&String> = scores.iter().flat_map(|s| s.scores.keys()).collect();
    let mut out = Vec::new();
    for label in labels {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (s, g) in scores.iter().zip(gold) {
            if s.citation_id != g.id {
                return Err(Error::Alignment(format!("score vector `{}` lines up with gold `{}`", s.citation_id, g.id)));
            }
            if let Some(&p) = s.scores.get(label) {
                xs.push(p);
                ys.push(g.labels.contains(label));
            }
        }
        out.push(RankingReport {
            label: label.clone(),
            auc_roc: auc_roc(&xs, &ys).ok(),
            auc_pr: auc_pr(&xs, &ys).ok(),
        });
    }
    Ok(out)
}

pub const SWEEP_DEFINITION: &str = "cumulative accuracy/precision/recall and micro-F1 are micro-averaged over \
per-label decisions (citation x evaluated label): accuracy = sum(tp+tn)/sum(all), precision = sum(tp)/sum(tp+fp), \
recall = sum(tp)/sum(tp+fn); classes = scorer labels whose validation recall meets the threshold";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub max_tags: Vec<usize>,
    pub reliability: Vec<f64>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid {
            max_tags: (1..=6).collect(),
            reliability: vec![0.5, 0.6, 0.7, 0.8, 0.9],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub max_tags: usize,
    pub threshold: f64,
    pub num_classes: usize,
    pub cumulative_accuracy: f64,
    pub cumulative_precision: f64,
    pub cumulative_recall: f64,
    pub micro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub definition: String,
    pub labels: Vec<String>,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    /// Best micro-F1 first; ties keep grid order.
    pub fn sort_by_micro_f1(&mut self) {
        self.rows.sort_by(|a, b| b.micro_f1.total_cmp(&a.micro_f1));
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("# {}\n", self.definition);
        let _ = writeln!(
            s,
            "{:>8}  {:>11}  {:>7}  {:>10}  {:>10}  {:>10}  {:>8}",
            "max_tags", "p_threshold", "classes", "cum_acc", "cum_prec", "cum_recall", "micro_f1"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:>8}  {:>11.1}  {:>7}  {:>10.4}  {:>10.4}  {:>10.4}  {:>8.4}",
                r.max_tags,
                r.threshold,
                r.num_classes,
                r.cumulative_accuracy,
                r.cumulative_precision,
                r.cumulative_recall,
                r.micro_f1
            );
        }
        s
    }
}

/// Labels a sweep can emit: every scorer label, the base label when fallback is on, and
/// IMPLIES targets. Returned in prevalence order.
pub fn evaluated_labels(descriptors: &[ScorerDescriptor], policy: &CompilerPolicy, vocab: &LabelVocabulary) -> Vec<String> {
    let mut set: BTreeSet<&str> = descriptors.iter().flat_map(|d| d.vocabulary.iter().map(String::as_str)).collect();
    if policy.base_label_fallback {
        set.insert(vocab.base_label());
    }
    for rule in &policy.rules {
        if let Rule::Implies { b, .. } = rule {
            set.insert(b);
        }
    }
    let mut labels: Vec<String> = set.into_iter().map(str::to_string).collect();
    labels.sort_by_key(|l| vocab.rank(l).unwrap_or(usize::MAX));
    labels
}

/// Compiles the same precomputed scores under every grid cell and scores the result.
/// Gold labels outside the evaluated set are ignored.
pub fn evaluate_run(
    gold: &[Gold],
    scores: &[ScoreVector],
    descriptors: &[ScorerDescriptor],
    base_policy: &CompilerPolicy,
    vocab: &LabelVocabulary,
    grid: &SweepGrid,
) -> Result<SweepTable> {
    let labels = evaluated_labels(descriptors, base_policy, vocab);
    let keep: BTreeSet<&String> = labels.iter().collect();
    let gold: Vec<Gold> = gold
        .iter()
        .map(|g| Gold {
            id: g.id.clone(),
            labels: g.labels.iter().filter(|l| keep.contains(l)).cloned().collect(),
        })
        .collect();
    let scorer_labels: BTreeSet<&String> = descriptors.iter().flat_map(|d| &d.vocabulary).collect();

    let cells: Vec<(usize, f64)> = grid
        .max_tags
        .iter()
        .flat_map(|&m| grid.reliability.iter().map(move |&t| (m, t)))
        .collect();
    let rows = cells
        .par_iter()
        .map(|&(max_tags, threshold)| {
            let policy = CompilerPolicy {
                max_tags,
                reliability_min_recall: Some(threshold),
                ..base_policy.clone()
            };
            let predicted = scores
                .iter()
                .map(|s| compile_tags(s, &policy, vocab, Some(descriptors)))
                .collect::<Result<Vec<_>>>()?;
            let total = confusion_counts(&predicted, &gold, &labels)?.summed();
            let micro = prf(total.tp, total.fp, total.fn_);
            let num_classes = scorer_labels
                .iter()
                .filter(|l| descriptors.iter().find_map(|d| d.recall(l)).is_none_or(|r| r >= threshold))
                .count();
            Ok(SweepRow {
                max_tags,
                threshold,
                num_classes,
                cumulative_accuracy: ratio(total.tp + total.tn, total.total()),
                cumulative_precision: micro.precision,
                cumulative_recall: micro.recall,
                micro_f1: micro.f1,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepTable {
        definition: SWEEP_DEFINITION.to_string(),
        labels,
        rows,
    })
}
