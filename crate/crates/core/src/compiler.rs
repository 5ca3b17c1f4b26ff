//! Turns per-label probabilities into a final tag list.
//!
//! Order of operations for one citation:
//! 1. reliability filter (labels whose scorer recalled too little on validation data)
//! 2. probability threshold
//! 3. co-occurrence rules, in policy order, then a closing pass over `EXCLUDES` rules
//! 4. sort by corpus prevalence and keep the first `max_tags`
//! 5. fall back to the base label when nothing survived

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::LabelVocabulary;
use crate::error::{Error, Result};
use crate::eval::{prf, Gold};
use crate::scorer::{ScoreVector, ScorerDescriptor};

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_MAX_TAGS: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub enum ThresholdMode {
    Fixed(f64),
    /// Per-label cut-offs; labels without an entry use `default`.
    PerLabel {
        thresholds: BTreeMap<String, f64>,
        default: f64,
    },
}

impl ThresholdMode {
    pub fn threshold_for(&self, label: &str) -> f64 {
        match self {
            ThresholdMode::Fixed(t) => *t,
            ThresholdMode::PerLabel { thresholds, default } => {
                thresholds.get(label).copied().unwrap_or(*default)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Keep {
    A,
    B,
    HigherScore,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "UPPERCASE")]
pub enum Rule {
    /// `a` and `b` never appear together; `keep` decides which one stays.
    Excludes { a: String, b: String, keep: Keep },
    /// Whenever `a` is emitted, `b` is emitted too.
    Implies { a: String, b: String },
}

impl Rule {
    fn labels(&self) -> (&str, &str) {
        match self {
            Rule::Excludes { a, b, .. } | Rule::Implies { a, b } => (a, b),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolicyFile", into = "PolicyFile")]
pub struct CompilerPolicy {
    pub threshold_mode: ThresholdMode,
    pub reliability_min_recall: Option<f64>,
    pub max_tags: usize,
    pub rules: Vec<Rule>,
    pub base_label_fallback: bool,
}

impl Default for CompilerPolicy {
    fn default() -> Self {
        CompilerPolicy {
            threshold_mode: ThresholdMode::Fixed(DEFAULT_THRESHOLD),
            reliability_min_recall: None,
            max_tags: DEFAULT_MAX_TAGS,
            rules: Vec::new(),
            base_label_fallback: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ModeName {
    Fixed,
    PerLabel,
}

/// On-disk policy layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct PolicyFile {
    #[serde(default = "fixed_mode")]
    threshold_mode: ModeName,
    /// The fixed cut-off, or the default for labels missing from `thresholds`.
    #[serde(default = "default_threshold")]
    threshold: f64,
    #[serde(default)]
    thresholds: BTreeMap<String, f64>,
    #[serde(default)]
    reliability_min_recall: Option<f64>,
    #[serde(default = "default_max_tags")]
    max_tags: usize,
    #[serde(default)]
    rules: Vec<Rule>,
    #[serde(default = "yes")]
    base_label_fallback: bool,
}

fn fixed_mode() -> ModeName {
    ModeName::Fixed
}
fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}
fn default_max_tags() -> usize {
    DEFAULT_MAX_TAGS
}
fn yes() -> bool {
    true
}

impl TryFrom<PolicyFile> for CompilerPolicy {
    type Error = Error;

    fn try_from(f: PolicyFile) -> Result<Self> {
        let threshold_mode = match f.threshold_mode {
            ModeName::Fixed => ThresholdMode::Fixed(f.threshold),
            ModeName::PerLabel => ThresholdMode::PerLabel {
                thresholds: f.thresholds,
                default: f.threshold,
            },
        };
        let policy = CompilerPolicy {
            threshold_mode,
            reliability_min_recall: f.reliability_min_recall,
            max_tags: f.max_tags,
            rules: f.rules,
            base_label_fallback: f.base_label_fallback,
        };
        policy.check_values()?;
        Ok(policy)
    }
}

impl From<CompilerPolicy> for PolicyFile {
    fn from(p: CompilerPolicy) -> Self {
        let (threshold_mode, threshold, thresholds) = match p.threshold_mode {
            ThresholdMode::Fixed(t) => (ModeName::Fixed, t, BTreeMap::new()),
            ThresholdMode::PerLabel { thresholds, default } => (ModeName::PerLabel, default, thresholds),
        };
        PolicyFile {
            threshold_mode,
            threshold,
            thresholds,
            reliability_min_recall: p.reliability_min_recall,
            max_tags: p.max_tags,
            rules: p.rules,
            base_label_fallback: p.base_label_fallback,
        }
    }
}

fn unit(x: f64) -> bool {
    (0.0..=1.0).contains(&x)
}

impl CompilerPolicy {
    pub fn fixed(threshold: f64, max_tags: usize) -> Self {
        CompilerPolicy {
            threshold_mode: ThresholdMode::Fixed(threshold),
            max_tags,
            ..Default::default()
        }
    }

    fn check_values(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Policy(msg));
        match &self.threshold_mode {
            ThresholdMode::Fixed(t) if !unit(*t) => return bad(format!("threshold {t} outside [0, 1]")),
            ThresholdMode::PerLabel { thresholds, default } => {
                if !unit(*default) {
                    return bad(format!("default threshold {default} outside [0, 1]"));
                }
                if let Some((l, t)) = thresholds.iter().find(|(_, t)| !unit(**t)) {
                    return bad(format!("threshold {t} for `{l}` outside [0, 1]"));
                }
            }
            _ => {}
        }
        if let Some(r) = self.reliability_min_recall {
            if !unit(r) {
                return bad(format!("reliability_min_recall {r} outside [0, 1]"));
            }
        }
        if self.max_tags == 0 {
            return bad("max_tags must be at least 1".into());
        }
        for rule in &self.rules {
            let (a, b) = rule.labels();
            if a == b {
                return bad(format!("rule {rule:?} relates `{a}` to itself"));
            }
        }
        Ok(())
    }

    /// Full validation, including that every rule and threshold label is in `vocab`.
    pub fn validate(&self, vocab: &LabelVocabulary) -> Result<()> {
        self.check_values()?;
        for rule in &self.rules {
            let (a, b) = rule.labels();
            for l in [a, b] {
                if !vocab.contains(l) {
                    return Err(Error::Policy(format!("rule references unknown label `{l}`")));
                }
            }
        }
        if let ThresholdMode::PerLabel { thresholds, .. } = &self.threshold_mode {
            if let Some(l) = thresholds.keys().find(|l| !vocab.contains(l)) {
                return Err(Error::Policy(format!("threshold for unknown label `{l}`")));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str, vocab: &LabelVocabulary) -> Result<Self> {
        let policy: CompilerPolicy =
            serde_json::from_str(text).map_err(|e| Error::Policy(e.to_string()))?;
        policy.validate(vocab)?;
        Ok(policy)
    }

    pub fn load(path: &Path, vocab: &LabelVocabulary) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, vocab)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("policy serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TagSource {
    Score,
    Rule,
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagProvenance {
    pub label: String,
    pub source: TagSource,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub actions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagList {
    #[serde(rename = "id")]
    pub citation_id: String,
    pub tags: Vec<String>,
    pub provenance: Vec<TagProvenance>,
}

impl TagList {
    pub fn label_set(&self) -> BTreeSet<String> {
        self.tags.iter().cloned().collect()
    }
}

/// Validation recall of `label` from whichever descriptor covers it.
fn recall_of(descriptors: &[ScorerDescriptor], label: &str) -> Option<f64> {
    descriptors.iter().find_map(|d| d.recall(label))
}

fn apply_excludes(
    survivors: &mut BTreeMap<String, TagProvenance>,
    scores: &BTreeMap<String, f64>,
    index: usize,
    a: &str,
    b: &str,
    keep: Keep,
) {
    if !(survivors.contains_key(a) && survivors.contains_key(b)) {
        return;
    }
    let score = |l: &str| scores.get(l).copied().unwrap_or(0.0);
    let (kept, dropped) = match keep {
        Keep::A => (a, b),
        Keep::B => (b, a),
        Keep::HigherScore if score(b) > score(a) => (b, a),
        Keep::HigherScore => (a, b),
    };
    survivors.remove(dropped);
    if let Some(p) = survivors.get_mut(kept) {
        p.actions.push(format!("rule {index}: excludes {dropped}"));
    }
}

pub fn compile_tags(
    scores: &ScoreVector,
    policy: &CompilerPolicy,
    vocab: &LabelVocabulary,
    descriptors: Option<&[ScorerDescriptor]>,
) -> Result<TagList> {
    if let Some(l) = scores.scores.keys().find(|l| !vocab.contains(l)) {
        return Err(Error::UnknownLabel {
            citation: scores.citation_id.clone(),
            label: l.clone(),
        });
    }

    let mut survivors: BTreeMap<String, TagProvenance> = BTreeMap::new();
    for (label, &score) in &scores.scores {
        if let (Some(min), Some(ds)) = (policy.reliability_min_recall, descriptors) {
            if recall_of(ds, label).is_some_and(|r| r < min) {
                continue;
            }
        }
        let threshold = policy.threshold_mode.threshold_for(label);
        if score >= threshold {
            survivors.insert(
                label.clone(),
                TagProvenance {
                    label: label.clone(),
                    source: TagSource::Score,
                    score: Some(score),
                    threshold: Some(threshold),
                    actions: Vec::new(),
                },
            );
        }
    }

    for (index, rule) in policy.rules.iter().enumerate() {
        match rule {
            Rule::Excludes { a, b, keep } => {
                apply_excludes(&mut survivors, &scores.scores, index, a, b, *keep)
            }
            Rule::Implies { a, b } => {
                if survivors.contains_key(a) && !survivors.contains_key(b) {
                    survivors.insert(
                        b.clone(),
                        TagProvenance {
                            label: b.clone(),
                            source: TagSource::Rule,
                            score: scores.scores.get(b).copied(),
                            threshold: None,
                            actions: vec![format!("rule {index}: implied by {a}")],
                        },
                    );
                }
            }
        }
    }
    // An IMPLIES rule late in the list can re-create a pair an earlier EXCLUDES split.
    for (index, rule) in policy.rules.iter().enumerate() {
        if let Rule::Excludes { a, b, keep } = rule {
            apply_excludes(&mut survivors, &scores.scores, index, a, b, *keep);
        }
    }

    let mut kept: Vec<TagProvenance> = survivors.into_values().collect();
    kept.sort_by_key(|p| vocab.rank(&p.label).unwrap_or(usize::MAX));
    kept.truncate(policy.max_tags);

    if kept.is_empty() && policy.base_label_fallback {
        let base = vocab.base_label().to_string();
        kept.push(TagProvenance {
            score: scores.scores.get(&base).copied(),
            label: base,
            source: TagSource::Fallback,
            threshold: None,
            actions: Vec::new(),
        });
    }

    Ok(TagList {
        citation_id: scores.citation_id.clone(),
        tags: kept.iter().map(|p| p.label.clone()).collect(),
        provenance: kept,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TuningObjective {
    MaxF1,
    /// Highest precision among cut-offs whose recall is at least the given value.
    RecallAtLeast(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdTuning {
    pub thresholds: BTreeMap<String, f64>,
    /// Labels with no positive example in the evaluation data.
    pub omitted: Vec<String>,
}

impl ThresholdTuning {
    pub fn into_mode(self, default: f64) -> ThresholdMode {
        ThresholdMode::PerLabel {
            thresholds: self.thresholds,
            default,
        }
    }
}

/// Picks a per-label cut-off from every observed score plus 0 and 1. Predictions are
/// `score >= threshold`; ties in the objective go to the lowest threshold.
pub fn tune_thresholds(
    scores: &[ScoreVector],
    gold: &[Gold],
    objective: TuningObjective,
) -> Result<ThresholdTuning> {
    if scores.len() != gold.len() {
        return Err(Error::Alignment(format!(
            "{} score vectors vs {} gold records",
            scores.len(),
            gold.len()
        )));
    }
    if let Some((s, g)) = scores.iter().zip(gold).find(|(s, g)| s.citation_id != g.id) {
        return Err(Error::Alignment(format!(
            "score vector `{}` lines up with gold `{}`",
            s.citation_id, g.id
        )));
    }
    let labels: BTreeSet<&String> = scores.iter().flat_map(|s| s.scores.keys()).collect();

    let mut tuning = ThresholdTuning {
        thresholds: BTreeMap::new(),
        omitted: Vec::new(),
    };
    for label in labels {
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for (s, g) in scores.iter().zip(gold) {
            if let Some(&p) = s.scores.get(label) {
                if g.labels.contains(label) {
                    pos.push(p);
                } else {
                    neg.push(p);
                }
            }
        }
        if pos.is_empty() {
            log::warn!("no positive example of `{label}`; leaving its threshold unset");
            tuning.omitted.push(label.clone());
            continue;
        }
        pos.sort_by(f64::total_cmp);
        neg.sort_by(f64::total_cmp);
        let mut candidates: Vec<f64> = pos.iter().chain(&neg).copied().chain([0.0, 1.0]).collect();
        candidates.sort_by(f64::total_cmp);
        candidates.dedup();

        // number of entries >= t in an ascending slice
        let at_or_above = |sorted: &[f64], t: f64| sorted.len() - sorted.partition_point(|&x| x < t);
        let mut best: Option<(f64, f64)> = None;
        for &t in &candidates {
            let tp = at_or_above(&pos, t) as u64;
            let fp = at_or_above(&neg, t) as u64;
            let m = prf(tp, fp, pos.len() as u64 - tp);
            let value = match objective {
                TuningObjective::MaxF1 => m.f1,
                TuningObjective::RecallAtLeast(r) if m.recall >= r => m.precision,
                TuningObjective::RecallAtLeast(_) => continue,
            };
            if best.is_none_or(|(_, v)| value > v) {
                best = Some((t, value));
            }
        }
        if let Some((t, _)) = best {
            tuning.thresholds.insert(label.clone(), t);
        }
    }
    Ok(tuning)
}
