//! Hashed bag-of-tokens logistic regression, one weight vector per label.
//!
//! Serialized layout (all integers little-endian):
//!
//! ```text
//! b"PTSC" | version: u32 | header_len: u32 | header JSON | weight_count: u64 | weights: f64 * n
//! ```
//!
//! The header carries the scorer descriptor, the hash dimension and the per-epoch loss.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{fnv1a, LabelMetrics, ScoreVector, Scorer, ScorerDescriptor, ScorerKind};
use crate::error::{Error, Result};
use crate::input::{ModelInput, ABSTRACT_SEPARATOR, TITLE_SEPARATOR};

pub const MAGIC: &[u8; 4] = b"PTSC";
pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_HASH_DIM: usize = 1 << 18;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ClassWeights {
    /// Every example counts once.
    #[default]
    Uniform,
    /// Positives and negatives of each label carry equal total weight.
    Balanced,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub hash_dim: usize,
    pub class_weights: ClassWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            learning_rate: 0.5,
            hash_dim: DEFAULT_HASH_DIM,
            class_weights: ClassWeights::Balanced,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TrainTarget {
    Monolithic(Vec<String>),
    Binary(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub input: ModelInput,
    pub labels: BTreeSet<String>,
}

/// Sparse feature vector: hashed token presence scaled to unit length.
fn features(text: &str, hash_dim: usize) -> Vec<(usize, f64)> {
    let cleaned = text
        .replace(TITLE_SEPARATOR, " ")
        .replace(ABSTRACT_SEPARATOR, " ")
        .to_ascii_lowercase();
    let mut idx: Vec<usize> = cleaned
        .split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| (fnv1a(&[t.as_bytes()]) % hash_dim as u64) as usize)
        .collect();
    idx.sort_unstable();
    idx.dedup();
    let value = if idx.is_empty() { 0.0 } else { 1.0 / (idx.len() as f64).sqrt() };
    idx.into_iter().map(|i| (i, value)).collect()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Log loss written through softplus so it stays finite for large |z|.
fn log_loss(z: f64, y: f64) -> f64 {
    let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
    softplus - y * z
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    descriptor: ScorerDescriptor,
    hash_dim: usize,
    #[serde(default)]
    loss_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearScorer {
    descriptor: ScorerDescriptor,
    hash_dim: usize,
    /// `vocabulary.len()` rows of `hash_dim` weights followed by one bias.
    weights: Vec<f64>,
    loss_history: Vec<f64>,
}

impl LinearScorer {
    fn row(&self, label: usize) -> &[f64] {
        let stride = self.hash_dim + 1;
        &self.weights[label * stride..(label + 1) * stride]
    }

    fn margin(row: &[f64], x: &[(usize, f64)]) -> f64 {
        let bias = row[row.len() - 1];
        x.iter().fold(bias, |acc, &(i, v)| acc + row[i] * v)
    }

    pub fn hash_dim(&self) -> usize {
        self.hash_dim
    }

    /// Mean training loss after each epoch.
    pub fn loss_history(&self) -> &[f64] {
        &self.loss_history
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&Header {
            descriptor: self.descriptor.clone(),
            hash_dim: self.hash_dim,
            loss_history: self.loss_history.clone(),
        })
        .expect("header serializes");
        let mut out = Vec::with_capacity(24 + header.len() + 8 * self.weights.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.weights.len() as u64).to_le_bytes());
        for w in &self.weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::ModelFormat(msg.to_string());
        let mut rest = bytes;
        let mut take = |n: usize| -> Result<&[u8]> {
            if rest.len() < n {
                return Err(bad("truncated file"));
            }
            let (head, tail) = rest.split_at(n);
            rest = tail;
            Ok(head)
        };
        if take(4)? != MAGIC {
            return Err(bad("not a scorer file (bad magic)"));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::ModelFormat(format!("unsupported format version {version}")));
        }
        let header_len = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
        let header: Header = serde_json::from_slice(take(header_len)?)
            .map_err(|e| Error::ModelFormat(format!("bad header: {e}")))?;
        header.descriptor.validate()?;
        let count = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")) as usize;
        let expected = header.descriptor.vocabulary.len() * (header.hash_dim + 1);
        if header.hash_dim == 0 || count != expected {
            return Err(Error::ModelFormat(format!(
                "expected {expected} weights, file declares {count}"
            )));
        }
        let raw = take(count.checked_mul(8).ok_or_else(|| bad("weight count overflows"))?)?;
        if !rest.is_empty() {
            return Err(bad("trailing bytes after weights"));
        }
        let weights: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(bad("non-finite weight"));
        }
        Ok(LinearScorer {
            descriptor: header.descriptor,
            hash_dim: header.hash_dim,
            weights,
            loss_history: header.loss_history,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

impl Scorer for LinearScorer {
    fn descriptor(&self) -> &ScorerDescriptor {
        &self.descriptor
    }

    fn score_batch(&self, inputs: &[ModelInput]) -> Result<Vec<ScoreVector>> {
        Ok(inputs
            .iter()
            .map(|input| {
                let x = features(&input.text, self.hash_dim);
                ScoreVector {
                    citation_id: input.id.clone(),
                    scores: self
                        .descriptor
                        .vocabulary
                        .iter()
                        .enumerate()
                        .map(|(k, l)| (l.clone(), sigmoid(Self::margin(self.row(k), &x))))
                        .collect(),
                }
            })
            .collect())
    }
}

/// Per-label precision/recall/F1 at the 0.5 cut-off.
fn validation_metrics(scorer: &LinearScorer, eval: &[TrainingExample]) -> Result<BTreeMap<String, LabelMetrics>> {
    let inputs: Vec<ModelInput> = eval.iter().map(|e| e.input.clone()).collect();
    let scores = scorer.score_batch(&inputs)?;
    Ok(scorer
        .descriptor
        .vocabulary
        .iter()
        .map(|label| {
            let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
            for (ex, sv) in eval.iter().zip(&scores) {
                let predicted = sv.scores[label] >= 0.5;
                match (predicted, ex.labels.contains(label)) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    (false, false) => {}
                }
            }
            let m = crate::eval::prf(tp, fp, fn_);
            (label.clone(), m)
        })
        .collect())
}

/// Trains the reference scorer with seeded SGD. When `eval` is given, the returned
/// descriptor carries validation precision/recall/F1 per label.
pub fn train_reference_scorer(
    dataset: &[TrainingExample],
    target: &TrainTarget,
    config: &TrainConfig,
    seed: u64,
    eval: Option<&[TrainingExample]>,
) -> Result<LinearScorer> {
    if dataset.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    if config.hash_dim == 0 || config.epochs == 0 {
        return Err(Error::Config("hash_dim and epochs must be positive".into()));
    }
    if !(config.learning_rate.is_finite() && config.learning_rate > 0.0) {
        return Err(Error::Config("learning rate must be positive".into()));
    }
    let descriptor = match target {
        TrainTarget::Monolithic(labels) => ScorerDescriptor::monolithic("reference", labels.clone()),
        TrainTarget::Binary(label) => ScorerDescriptor::binary(format!("reference:{label}"), label.clone()),
    };
    descriptor.validate()?;
    if descriptor.vocabulary.is_empty() {
        return Err(Error::Training("no labels to train".into()));
    }

    let n = dataset.len();
    let targets: Vec<Vec<f64>> = dataset
        .iter()
        .map(|ex| {
            descriptor
                .vocabulary
                .iter()
                .map(|l| if ex.labels.contains(l) { 1.0 } else { 0.0 })
                .collect()
        })
        .collect();
    let positives: Vec<usize> = (0..descriptor.vocabulary.len())
        .map(|k| targets.iter().filter(|y| y[k] == 1.0).count())
        .collect();
    if let ScorerKind::Binary { label } = &descriptor.kind {
        if positives[0] == 0 || positives[0] == n {
            return Err(Error::Training(format!(
                "binary dataset for `{label}` contains a single class"
            )));
        }
    }
    let class_weight: Vec<[f64; 2]> = positives
        .iter()
        .map(|&p| match config.class_weights {
            ClassWeights::Balanced if p > 0 && p < n => {
                [n as f64 / (2.0 * (n - p) as f64), n as f64 / (2.0 * p as f64)]
            }
            _ => [1.0, 1.0],
        })
        .collect();

    let xs: Vec<Vec<(usize, f64)>> = dataset
        .iter()
        .map(|ex| features(&ex.input.text, config.hash_dim))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stride = config.hash_dim + 1;
    let weights: Vec<f64> = (0..descriptor.vocabulary.len() * stride)
        .map(|_| rng.random_range(-0.01..0.01))
        .collect();
    let mut model = LinearScorer {
        descriptor,
        hash_dim: config.hash_dim,
        weights,
        loss_history: Vec::with_capacity(config.epochs),
    };

    let labels = model.descriptor.vocabulary.len();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        // decaying step keeps late epochs from undoing earlier progress
        let step = config.learning_rate / epoch as f64;
        for &i in &order {
            for k in 0..labels {
                let row = &mut model.weights[k * stride..(k + 1) * stride];
                let y = targets[i][k];
                let z = LinearScorer::margin(row, &xs[i]);
                let g = (sigmoid(z) - y) * class_weight[k][y as usize] * step;
                for &(j, v) in &xs[i] {
                    row[j] -= g * v;
                }
                row[stride - 1] -= g;
            }
        }

        let mut total = 0.0;
        for (x, y) in xs.iter().zip(&targets) {
            for k in 0..labels {
                let z = LinearScorer::margin(model.row(k), x);
                total += class_weight[k][y[k] as usize] * log_loss(z, y[k]);
            }
        }
        let loss = total / (n * labels) as f64;
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch, loss });
        }
        model.loss_history.push(loss);
    }

    if let Some(eval) = eval.filter(|e| !e.is_empty()) {
        let metrics = validation_metrics(&model, eval)?;
        model.descriptor.validation_metrics = Some(metrics);
    }
    Ok(model)
}
