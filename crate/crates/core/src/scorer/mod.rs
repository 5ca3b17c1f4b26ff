//! The classification boundary. Anything that turns [`ModelInput`]s into per-label
//! probabilities implements [`Scorer`]: the hashed linear reference model, stub scorers
//! used for benchmarking, out-of-process sidecars, and ensembles of binary scorers.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::input::ModelInput;

pub mod reference;
pub mod remote;
pub mod stub;

pub use reference::{train_reference_scorer, ClassWeights, LinearScorer, TrainConfig, TrainTarget, TrainingExample};
pub use remote::RemoteScorer;
pub use stub::StubScorer;

/// 64-bit FNV-1a; stable across platforms and releases, unlike `DefaultHasher`.
pub(crate) fn fnv1a(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for &b in *part {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub citation_id: String,
    pub scores: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ScorerKind {
    Monolithic,
    Binary { label: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerDescriptor {
    #[serde(default)]
    pub name: String,
    #[serde(flatten)]
    pub kind: ScorerKind,
    pub vocabulary: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation_metrics: Option<BTreeMap<String, LabelMetrics>>,
}

impl ScorerDescriptor {
    pub fn monolithic(name: impl Into<String>, vocabulary: Vec<String>) -> Self {
        ScorerDescriptor {
            name: name.into(),
            kind: ScorerKind::Monolithic,
            vocabulary,
            validation_metrics: None,
        }
    }

    pub fn binary(name: impl Into<String>, label: impl Into<String>) -> Self {
        let label = label.into();
        ScorerDescriptor {
            name: name.into(),
            kind: ScorerKind::Binary {
                label: label.clone(),
            },
            vocabulary: vec![label],
            validation_metrics: None,
        }
    }

    pub fn with_metrics(mut self, metrics: BTreeMap<String, LabelMetrics>) -> Self {
        self.validation_metrics = Some(metrics);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if let ScorerKind::Binary { label } = &self.kind {
            if self.vocabulary.len() != 1 || &self.vocabulary[0] != label {
                return Err(Error::Config(format!(
                    "binary scorer `{}` must have exactly the vocabulary [{label}]",
                    self.name
                )));
            }
        }
        let distinct: BTreeSet<&String> = self.vocabulary.iter().collect();
        if distinct.len() != self.vocabulary.len() {
            return Err(Error::Config(format!("scorer `{}` repeats a label", self.name)));
        }
        Ok(())
    }

    pub fn recall(&self, label: &str) -> Option<f64> {
        self.validation_metrics
            .as_ref()
            .and_then(|m| m.get(label))
            .map(|m| m.recall)
    }
}

/// Scores a batch of inputs. Output order matches input order, and a trained scorer
/// returns the same vectors for the same inputs every time.
pub trait Scorer: Send + Sync {
    fn descriptor(&self) -> &ScorerDescriptor;

    fn score_batch(&self, inputs: &[ModelInput]) -> Result<Vec<ScoreVector>>;
}

/// Checks a scorer's output against its contract.
pub fn check_scores(descriptor: &ScorerDescriptor, inputs: &[ModelInput], out: &[ScoreVector]) -> Result<()> {
    if out.len() != inputs.len() {
        return Err(Error::Backend(format!(
            "scorer `{}` returned {} vectors for {} inputs",
            descriptor.name,
            out.len(),
            inputs.len()
        )));
    }
    for (input, sv) in inputs.iter().zip(out) {
        if sv.citation_id != input.id {
            return Err(Error::Backend(format!(
                "scorer `{}` answered `{}` for `{}`",
                descriptor.name, sv.citation_id, input.id
            )));
        }
        if sv.scores.len() != descriptor.vocabulary.len()
            || descriptor.vocabulary.iter().any(|l| !sv.scores.contains_key(l))
        {
            return Err(Error::Backend(format!(
                "scorer `{}` returned labels that differ from its vocabulary",
                descriptor.name
            )));
        }
        if let Some((l, p)) = sv.scores.iter().find(|(_, p)| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Backend(format!(
                "scorer `{}` gave `{l}` the out-of-range score {p}",
                descriptor.name
            )));
        }
    }
    Ok(())
}

/// Binary scorers run one after another, their single-label outputs merged per input.
pub struct Ensemble {
    members: Vec<Arc<dyn Scorer>>,
    descriptor: ScorerDescriptor,
}

impl Ensemble {
    pub fn new(members: Vec<Arc<dyn Scorer>>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        let mut vocabulary = Vec::new();
        let mut metrics = BTreeMap::new();
        for m in &members {
            let d = m.descriptor();
            let label = match &d.kind {
                ScorerKind::Binary { label } => label,
                ScorerKind::Monolithic => {
                    return Err(Error::Config(format!(
                        "ensemble member `{}` is not a binary scorer",
                        d.name
                    )))
                }
            };
            if !seen.insert(label.clone()) {
                return Err(Error::Config(format!(
                    "label `{label}` is covered by more than one ensemble member"
                )));
            }
            vocabulary.push(label.clone());
            if let Some(m) = d.validation_metrics.as_ref().and_then(|m| m.get(label)) {
                metrics.insert(label.clone(), *m);
            }
        }
        let mut descriptor = ScorerDescriptor::monolithic(format!("ensemble-{}", members.len()), vocabulary);
        if !metrics.is_empty() {
            descriptor.validation_metrics = Some(metrics);
        }
        Ok(Ensemble {
            members,
            descriptor,
        })
    }

    pub fn members(&self) -> &[Arc<dyn Scorer>] {
        &self.members
    }

    /// Scores and also reports the time spent in each member.
    pub fn score_batch_timed(&self, inputs: &[ModelInput]) -> Result<(Vec<ScoreVector>, Vec<Duration>)> {
        let mut merged: Vec<ScoreVector> = inputs
            .iter()
            .map(|i| ScoreVector {
                citation_id: i.id.clone(),
                scores: BTreeMap::new(),
            })
            .collect();
        let mut timings = Vec::with_capacity(self.members.len());
        for member in &self.members {
            let start = Instant::now();
            let out = member.score_batch(inputs)?;
            timings.push(start.elapsed());
            check_scores(member.descriptor(), inputs, &out)?;
            for (acc, sv) in merged.iter_mut().zip(out) {
                acc.scores.extend(sv.scores);
            }
        }
        Ok((merged, timings))
    }
}

impl Scorer for Ensemble {
    fn descriptor(&self) -> &ScorerDescriptor {
        &self.descriptor
    }

    fn score_batch(&self, inputs: &[ModelInput]) -> Result<Vec<ScoreVector>> {
        self.score_batch_timed(inputs).map(|(out, _)| out)
    }
}

pub fn ensemble_score(scorers: &[Arc<dyn Scorer>], inputs: &[ModelInput]) -> Result<Vec<ScoreVector>> {
    Ensemble::new(scorers.to_vec())?.score_batch(inputs)
}
