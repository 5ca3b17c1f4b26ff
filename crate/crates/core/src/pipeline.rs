//! End-to-end orchestration: configuration, batch tagging and the throughput benchmark.

use std::io::{BufRead, Write};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compiler::{compile_tags, CompilerPolicy, TagList};
use crate::corpus::{parse_citation_record, Citation, LabelVocabulary, VocabEntry};
use crate::error::{Error, Result};
use crate::input::{assemble_input, ModelInput, WhitespaceTokenizer, DEFAULT_TOKEN_BUDGET};
use crate::scorer::{Ensemble, LinearScorer, RemoteScorer, ScoreVector, Scorer, ScorerDescriptor, StubScorer};
use crate::text::{normalize_text, SymbolMap};

/// Environment variable consulted when no scorer source is configured.
pub const SIDECAR_ENV: &str = "PT_SIDECAR_ADDR";
pub const DEFAULT_BATCH_SIZE: usize = 256;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    /// One scorer covering every label in a single pass.
    #[default]
    Monolithic,
    /// One binary scorer per label, run one after another.
    Ensemble,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub corpus: Option<PathBuf>,
    pub vocabulary: Option<PathBuf>,
    pub policy: Option<PathBuf>,
    /// Reference-model files: one for monolithic, one per label for an ensemble.
    pub scorers: Vec<PathBuf>,
    /// `tcp:host:port`, or `exec:program arg...` to start a sidecar on stdio.
    pub sidecar: Option<String>,
    pub architecture: Architecture,
    pub token_budget: usize,
    pub seed: u64,
    pub workers: usize,
    pub batch_size: usize,
    /// Extra symbol substitutions, applied before the built-in ones.
    pub symbol_map: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            corpus: None,
            vocabulary: None,
            policy: None,
            scorers: Vec::new(),
            sidecar: None,
            architecture: Architecture::Monolithic,
            token_budget: DEFAULT_TOKEN_BUDGET,
            seed: 0,
            workers: 1,
            batch_size: DEFAULT_BATCH_SIZE,
            symbol_map: None,
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("pipeline config: {e}")))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.token_budget == 0 {
            return Err(Error::Config("token_budget must be at least 1".into()));
        }
        match self.architecture {
            Architecture::Monolithic if self.scorers.len() > 1 => Err(Error::Config(
                "a monolithic pipeline takes exactly one scorer file".into(),
            )),
            Architecture::Monolithic if !self.scorers.is_empty() && self.sidecar.is_some() => Err(Error::Config(
                "configure either a scorer file or a sidecar, not both".into(),
            )),
            Architecture::Ensemble if self.sidecar.is_some() => {
                Err(Error::Config("an ensemble is built from scorer files, not a sidecar".into()))
            }
            Architecture::Ensemble if self.scorers.is_empty() => {
                Err(Error::Config("an ensemble needs at least one binary scorer file".into()))
            }
            _ => Ok(()),
        }
    }

    /// The configured sidecar, falling back to the environment when no scorer file is set.
    pub fn sidecar_address(&self) -> Option<String> {
        self.sidecar.clone().or_else(|| {
            if self.scorers.is_empty() && self.architecture == Architecture::Monolithic {
                std::env::var(SIDECAR_ENV).ok().filter(|s| !s.is_empty())
            } else {
                None
            }
        })
    }

    pub fn symbol_map(&self) -> Result<SymbolMap> {
        let mut map = match &self.symbol_map {
            Some(path) => SymbolMap::load(path)?,
            None => return Ok(SymbolMap::default()),
        };
        map.extend(SymbolMap::default());
        Ok(map)
    }
}

/// Loads a reference model; an unreadable file counts as a backend failure.
pub fn load_model(path: &std::path::Path) -> Result<LinearScorer> {
    LinearScorer::load(path).map_err(|e| match e {
        Error::Io { path, source } => Error::Backend(format!("cannot read scorer {}: {source}", path.display())),
        other => other,
    })
}

pub fn connect_sidecar(address: &str) -> Result<RemoteScorer> {
    if let Some(cmd) = address.strip_prefix("exec:") {
        let mut parts = cmd.split_whitespace().map(str::to_string);
        let program = parts.next().ok_or_else(|| Error::Config("empty sidecar command".into()))?;
        RemoteScorer::spawn(&program, &parts.collect::<Vec<_>>())
    } else {
        RemoteScorer::connect(address)
    }
}

/// Loads the scorer named by the configuration.
pub fn load_scorer(config: &PipelineConfig) -> Result<Arc<dyn Scorer>> {
    config.validate()?;
    match config.architecture {
        Architecture::Monolithic => {
            if let Some(addr) = config.sidecar_address() {
                return Ok(Arc::new(connect_sidecar(&addr)?));
            }
            let path = config
                .scorers
                .first()
                .ok_or_else(|| Error::Config(format!("no scorer file, sidecar or {SIDECAR_ENV} configured")))?;
            Ok(Arc::new(load_model(path)?))
        }
        Architecture::Ensemble => {
            let members = config
                .scorers
                .iter()
                .map(|p| load_model(p).map(|s| Arc::new(s) as Arc<dyn Scorer>))
                .collect::<Result<Vec<_>>>()?;
            Ok(Arc::new(Ensemble::new(members)?))
        }
    }
}

pub fn normalize_citation(c: &Citation, map: &SymbolMap) -> Citation {
    Citation {
        title: normalize_text(&c.title, map),
        abstract_text: normalize_text(&c.abstract_text, map),
        ..c.clone()
    }
}

/// One output line: a tag list, or a marker for a record that could not be tagged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TagOutcome {
    Tagged(TagList),
    Failed {
        id: Option<String>,
        line: usize,
        error: String,
    },
}

impl TagOutcome {
    pub fn is_error(&self) -> bool {
        matches!(self, TagOutcome::Failed { .. })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct TagSummary {
    pub records: usize,
    pub failed: usize,
}

/// Everything needed to tag citations; immutable once built and shared across workers.
pub struct Tagger {
    pub vocab: LabelVocabulary,
    pub policy: CompilerPolicy,
    pub scorer: Arc<dyn Scorer>,
    pub symbol_map: SymbolMap,
    pub token_budget: usize,
    pub batch_size: usize,
    tokenizer: WhitespaceTokenizer,
}

impl Tagger {
    pub fn new(vocab: LabelVocabulary, policy: CompilerPolicy, scorer: Arc<dyn Scorer>) -> Result<Self> {
        policy.validate(&vocab)?;
        if let Some(l) = scorer.descriptor().vocabulary.iter().find(|l| !vocab.contains(l)) {
            return Err(Error::Config(format!("scorer label `{l}` is not in the vocabulary")));
        }
        Ok(Tagger {
            vocab,
            policy,
            scorer,
            symbol_map: SymbolMap::default(),
            token_budget: DEFAULT_TOKEN_BUDGET,
            batch_size: DEFAULT_BATCH_SIZE,
            tokenizer: WhitespaceTokenizer,
        })
    }

    pub fn with_symbol_map(mut self, map: SymbolMap) -> Self {
        self.symbol_map = map;
        self
    }

    pub fn with_token_budget(mut self, budget: usize) -> Self {
        self.token_budget = budget;
        self
    }

    pub fn with_batch_size(mut self, size: usize) -> Self {
        self.batch_size = size.max(1);
        self
    }

    pub fn from_config(config: &PipelineConfig) -> Result<Self> {
        config.validate()?;
        let vocab_path = config
            .vocabulary
            .as_ref()
            .ok_or_else(|| Error::Config("no vocabulary configured".into()))?;
        let vocab = LabelVocabulary::load(vocab_path)?;
        let policy = match &config.policy {
            Some(p) => CompilerPolicy::load(p, &vocab)?,
            None => CompilerPolicy::default(),
        };
        let scorer = load_scorer(config)?;
        Ok(Tagger::new(vocab, policy, scorer)?
            .with_symbol_map(config.symbol_map()?)
            .with_token_budget(config.token_budget)
            .with_batch_size(config.batch_size))
    }

    fn descriptors(&self) -> Vec<ScorerDescriptor> {
        vec![self.scorer.descriptor().clone()]
    }

    pub fn prepare(&self, citation: &Citation) -> Result<ModelInput> {
        assemble_input(&normalize_citation(citation, &self.symbol_map), &self.tokenizer, self.token_budget)
    }

    /// Scores a batch; when the batch as a whole fails, falls back to one call per input
    /// so a single bad record does not sink its neighbours.
    fn score_each(&self, inputs: &[ModelInput]) -> Vec<Result<ScoreVector>> {
        match self.scorer.score_batch(inputs) {
            Ok(out) => out.into_iter().map(Ok).collect(),
            Err(_) if inputs.len() > 1 => inputs
                .iter()
                .map(|i| {
                    self.scorer
                        .score_batch(std::slice::from_ref(i))
                        .and_then(|mut v| v.pop().ok_or_else(|| Error::Backend("scorer returned nothing".into())))
                })
                .collect(),
            Err(e) => vec![Err(e)],
        }
    }

    fn tag_batch(&self, batch: &[(usize, Result<Citation>)]) -> Vec<TagOutcome> {
        let prepared: Vec<Result<ModelInput>> = batch
            .iter()
            .map(|(_, rec)| match rec {
                Ok(c) => self.prepare(c),
                Err(e) => Err(Error::Backend(e.to_string())),
            })
            .collect();
        let inputs: Vec<ModelInput> = prepared.iter().filter_map(|p| p.as_ref().ok().cloned()).collect();
        let mut scored = self.score_each(&inputs).into_iter();
        let descriptors = self.descriptors();
        batch
            .iter()
            .zip(prepared)
            .map(|((line, rec), prep)| {
                let id = rec.as_ref().ok().map(|c| c.id.clone());
                let result = match (rec, prep) {
                    (Err(e), _) => Err(e.to_string()),
                    (_, Err(e)) => Err(e.to_string()),
                    (Ok(_), Ok(_)) => scored
                        .next()
                        .expect("one score per prepared input")
                        .and_then(|sv| compile_tags(&sv, &self.policy, &self.vocab, Some(&descriptors)))
                        .map_err(|e| e.to_string()),
                };
                match result {
                    Ok(tags) => TagOutcome::Tagged(tags),
                    Err(error) => {
                        match &id {
                            Some(id) => log::warn!("`{id}` (line {line}): {error}"),
                            None => log::warn!("{error}"),
                        }
                        TagOutcome::Failed { id, line: *line, error }
                    }
                }
            })
            .collect()
    }

    /// Tags parsed-or-failed records in fixed-size batches on `workers` threads. Output
    /// order is input order and does not depend on the worker count.
    pub fn tag_records(&self, records: Vec<(usize, Result<Citation>)>, workers: usize) -> Result<Vec<TagOutcome>> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
        let batches: Vec<Vec<TagOutcome>> =
            pool.install(|| records.par_chunks(self.batch_size).map(|b| self.tag_batch(b)).collect());
        Ok(batches.into_iter().flatten().collect())
    }

    pub fn tag_corpus(&self, corpus: &[Citation], workers: usize) -> Result<Vec<TagOutcome>> {
        let records = corpus.iter().enumerate().map(|(i, c)| (i + 1, Ok(c.clone()))).collect();
        self.tag_records(records, workers)
    }

    /// Scores a whole corpus, failing on the first bad record.
    pub fn score_corpus(&self, corpus: &[Citation]) -> Result<Vec<ScoreVector>> {
        let inputs = corpus
            .par_iter()
            .map(|c| self.prepare(c))
            .collect::<Result<Vec<_>>>()?;
        let chunks: Vec<Vec<ScoreVector>> = inputs
            .par_chunks(self.batch_size)
            .map(|b| self.scorer.score_batch(b))
            .collect::<Result<_>>()?;
        Ok(chunks.into_iter().flatten().collect())
    }
}

/// Reads citations line by line, keeping malformed lines as per-record failures.
pub fn read_records(input: impl BufRead) -> Result<Vec<(usize, Result<Citation>)>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<input>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push((i + 1, parse_citation_record(&line, i + 1)));
    }
    Ok(out)
}

pub fn write_outcomes(mut out: impl Write, outcomes: &[TagOutcome]) -> Result<()> {
    let io = |e| Error::io("<output>", e);
    for o in outcomes {
        serde_json::to_writer(&mut out, o)?;
        out.write_all(b"\n").map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Reads a citation JSONL stream, tags it and writes one JSON line per record.
pub fn run_tagging(tagger: &Tagger, input: impl BufRead, output: impl Write, workers: usize) -> Result<TagSummary> {
    let outcomes = tagger.tag_records(read_records(input)?, workers)?;
    write_outcomes(output, &outcomes)?;
    Ok(TagSummary {
        records: outcomes.len(),
        failed: outcomes.iter().filter(|o| o.is_error()).count(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub name: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub architecture: Architecture,
    pub citations: usize,
    pub workers: usize,
    pub seconds: f64,
    pub citations_per_second: f64,
    pub stages: Vec<Timing>,
    /// Time inside each ensemble member, summed over batches. Empty for one-pass scorers.
    pub per_scorer: Vec<Timing>,
}

impl BenchReport {
    pub fn stage(&self, name: &str) -> Option<f64> {
        self.stages.iter().find(|t| t.name == name).map(|t| t.seconds)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{:?}: {} citations in {:.3}s ({:.1}/s, {} workers)\n",
            self.architecture, self.citations, self.seconds, self.citations_per_second, self.workers
        );
        for t in self.stages.iter().chain(&self.per_scorer) {
            s.push_str(&format!("  {:<24} {:>10.4}s\n", t.name, t.seconds));
        }
        s
    }
}

/// Times each stage over the whole corpus in turn so the stage times add up to the total.
pub fn bench(tagger: &Tagger, ensemble: Option<&Ensemble>, corpus: &[Citation], workers: usize) -> Result<BenchReport> {
    if corpus.is_empty() {
        return Err(Error::EmptyBenchmark);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let size = tagger.batch_size;
    pool.install(|| {
        let total = Instant::now();
        let mut stages = Vec::new();
        let mut lap = |name: &str, start: Instant| {
            stages.push(Timing {
                name: name.into(),
                seconds: start.elapsed().as_secs_f64(),
            })
        };

        let t = Instant::now();
        let normalized: Vec<Citation> = corpus.par_iter().map(|c| normalize_citation(c, &tagger.symbol_map)).collect();
        lap("normalize", t);

        let t = Instant::now();
        let inputs = normalized
            .par_iter()
            .map(|c| assemble_input(c, &tagger.tokenizer, tagger.token_budget))
            .collect::<Result<Vec<_>>>()?;
        lap("assemble", t);

        let t = Instant::now();
        let mut member_time: Vec<Duration> = Vec::new();
        let scores: Vec<ScoreVector> = match ensemble {
            Some(e) => {
                let parts = inputs
                    .par_chunks(size)
                    .map(|b| e.score_batch_timed(b))
                    .collect::<Result<Vec<_>>>()?;
                member_time = vec![Duration::ZERO; e.members().len()];
                let mut all = Vec::with_capacity(inputs.len());
                for (out, times) in parts {
                    all.extend(out);
                    for (acc, d) in member_time.iter_mut().zip(times) {
                        *acc += d;
                    }
                }
                all
            }
            None => inputs
                .par_chunks(size)
                .map(|b| tagger.scorer.score_batch(b))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .flatten()
                .collect(),
        };
        lap("score", t);

        let t = Instant::now();
        let descriptors = tagger.descriptors();
        let tags = scores
            .par_iter()
            .map(|s| compile_tags(s, &tagger.policy, &tagger.vocab, Some(&descriptors)))
            .collect::<Result<Vec<_>>>()?;
        lap("compile", t);
        debug_assert_eq!(tags.len(), corpus.len());

        let seconds = total.elapsed().as_secs_f64();
        let per_scorer = match ensemble {
            Some(e) => e
                .members()
                .iter()
                .zip(member_time)
                .map(|(m, d)| Timing {
                    name: m.descriptor().name.clone(),
                    seconds: d.as_secs_f64(),
                })
                .collect(),
            None => Vec::new(),
        };
        Ok(BenchReport {
            architecture: if ensemble.is_some() { Architecture::Ensemble } else { Architecture::Monolithic },
            citations: corpus.len(),
            workers,
            seconds,
            citations_per_second: corpus.len() as f64 / seconds,
            stages,
            per_scorer,
        })
    })
}

const PT_NAMES: [&str; 16] = [
    "Journal Article",
    "Research Support, Non-U.S. Gov't",
    "Review",
    "Research Support, N.I.H., Extramural",
    "Case Reports",
    "Comparative Study",
    "Randomized Controlled Trial",
    "Research Support, U.S. Gov't, Non-P.H.S.",
    "Letter",
    "Multicenter Study",
    "Systematic Review",
    "Observational Study",
    "Editorial",
    "Meta-Analysis",
    "Evaluation Study",
    "Clinical Trial",
];

/// A vocabulary of `k` labels with made-up, strictly decreasing counts.
pub fn synthetic_vocabulary(k: usize) -> LabelVocabulary {
    let entries = (0..k.max(1))
        .map(|i| VocabEntry {
            label: PT_NAMES.get(i).map(|s| s.to_string()).unwrap_or_else(|| format!("Type {i}")),
            count: 1_000_000 / (i as u64 + 1),
        })
        .collect();
    LabelVocabulary::new(entries, Vec::new(), PT_NAMES[0]).expect("synthetic vocabulary is valid")
}

const WORDS: [&str; 24] = [
    "patients", "study", "trial", "randomized", "cohort", "review", "clinical", "outcome",
    "analysis", "treatment", "risk", "case", "report", "methods", "results", "effect",
    "therapy", "group", "data", "control", "survey", "model", "response", "dose",
];

/// `n` unlabeled citations with title and abstract text drawn from a fixed word list.
pub fn synthetic_corpus(n: usize, seed: u64) -> Vec<Citation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut words = |len: usize| -> String {
        (0..len).map(|_| *WORDS.choose(&mut rng).expect("non-empty")).collect::<Vec<_>>().join(" ")
    };
    (0..n)
        .map(|i| {
            let title = words(8);
            let abstract_text = words(120);
            Citation::new(format!("syn-{i}"), format!("J{}", i % 97), title, abstract_text)
        })
        .collect()
}

/// Hashed stub scorers over `vocab`: one monolithic scorer, or an ensemble of binaries,
/// each spending `cost` per input.
pub fn stub_scorers(vocab: &LabelVocabulary, architecture: Architecture, cost: Duration) -> Result<(Arc<dyn Scorer>, Option<Arc<Ensemble>>)> {
    let labels: Vec<String> = vocab.labels().map(str::to_string).collect();
    match architecture {
        Architecture::Monolithic => {
            let s = StubScorer::hashed(ScorerDescriptor::monolithic("stub", labels)).with_cost(cost);
            Ok((Arc::new(s), None))
        }
        Architecture::Ensemble => {
            let members = labels
                .iter()
                .map(|l| Arc::new(StubScorer::hashed(ScorerDescriptor::binary(format!("stub:{l}"), l)).with_cost(cost)) as Arc<dyn Scorer>)
                .collect();
            let e = Arc::new(Ensemble::new(members)?);
            Ok((e.clone(), Some(e)))
        }
    }
}
