//! Deterministic stand-in scorers with a controllable per-input cost.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;
use std::time::{Duration, Instant};

use super::{fnv1a, ScoreVector, Scorer, ScorerDescriptor};
use crate::error::Result;
use crate::input::ModelInput;

type ScoreFn = dyn Fn(&ModelInput, &str) -> f64 + Send + Sync;

#[derive(Clone)]
enum Mode {
    Fixed(BTreeMap<String, f64>),
    Hashed,
    Func(Arc<ScoreFn>),
}

#[derive(Clone)]
pub struct StubScorer {
    descriptor: ScorerDescriptor,
    mode: Mode,
    cost: Duration,
}

impl fmt::Debug for StubScorer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StubScorer")
            .field("descriptor", &self.descriptor)
            .field("cost", &self.cost)
            .finish_non_exhaustive()
    }
}

/// Pseudo-random but reproducible score in [0, 1) for a (label, text) pair.
pub fn hashed_score(label: &str, text: &str) -> f64 {
    let h = fnv1a(&[label.as_bytes(), &[0x1f], text.as_bytes()]);
    (h >> 11) as f64 / (1u64 << 53) as f64
}

impl StubScorer {
    /// Returns the same scores for every input. Labels missing from `scores` get 0.
    pub fn fixed(descriptor: ScorerDescriptor, scores: BTreeMap<String, f64>) -> Self {
        StubScorer {
            descriptor,
            mode: Mode::Fixed(scores),
            cost: Duration::ZERO,
        }
    }

    pub fn hashed(descriptor: ScorerDescriptor) -> Self {
        StubScorer {
            descriptor,
            mode: Mode::Hashed,
            cost: Duration::ZERO,
        }
    }

    /// Scores with an arbitrary pure function of the input and label; results are clamped to [0, 1].
    pub fn from_fn(
        descriptor: ScorerDescriptor,
        f: impl Fn(&ModelInput, &str) -> f64 + Send + Sync + 'static,
    ) -> Self {
        StubScorer {
            descriptor,
            mode: Mode::Func(Arc::new(f)),
            cost: Duration::ZERO,
        }
    }

    /// Busy-waits this long per input, independent of vocabulary size.
    pub fn with_cost(mut self, cost: Duration) -> Self {
        self.cost = cost;
        self
    }

    fn score_one(&self, input: &ModelInput, label: &str) -> f64 {
        match &self.mode {
            Mode::Fixed(map) => map.get(label).copied().unwrap_or(0.0),
            Mode::Hashed => hashed_score(label, &input.text),
            Mode::Func(f) => f(input, label).clamp(0.0, 1.0),
        }
    }
}

fn spin_for(d: Duration) {
    if d.is_zero() {
        return;
    }
    let start = Instant::now();
    while start.elapsed() < d {
        std::hint::spin_loop();
    }
}

impl Scorer for StubScorer {
    fn descriptor(&self) -> &ScorerDescriptor {
        &self.descriptor
    }

    fn score_batch(&self, inputs: &[ModelInput]) -> Result<Vec<ScoreVector>> {
        Ok(inputs
            .iter()
            .map(|input| {
                spin_for(self.cost);
                ScoreVector {
                    citation_id: input.id.clone(),
                    scores: self
                        .descriptor
                        .vocabulary
                        .iter()
                        .map(|l| (l.clone(), self.score_one(input, l)))
                        .collect(),
                }
            })
            .collect())
    }
}
