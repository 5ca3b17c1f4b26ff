use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ptagger::compiler::{tune_thresholds, CompilerPolicy, ThresholdMode, TuningObjective};
use ptagger::corpus::{
    compute_corpus_stats, compute_label_correlations, normalize_corpus, parse_corpus, write_corpus, Citation,
    LabelVocabulary, DEFAULT_BASE_LABEL,
};
use ptagger::error::{Error, Result};
use ptagger::eval::{confusion_counts, evaluate_run, gold_of, metric_report, ranking_report, SweepGrid};
use ptagger::partition::{build_binary_dataset, stratified_split, verify_stratification, DEFAULT_RATIOS, PARTITION_NAMES};
use ptagger::pipeline::{
    bench, normalize_citation, run_tagging, stub_scorers, synthetic_corpus, synthetic_vocabulary, Architecture,
    PipelineConfig, TagOutcome, Tagger,
};
use ptagger::scorer::{train_reference_scorer, ClassWeights, TrainConfig, TrainTarget, TrainingExample};
use ptagger::input::{assemble_input, WhitespaceTokenizer};

#[derive(Parser)]
#[command(name = "ptagger", version, about = "Publication-type tagging for bibliographic citations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Clean titles and abstracts, and drop excluded labels when a vocabulary is given.
    Normalize(NormalizeArgs),
    /// Per-label counts and the tags-per-citation histogram.
    Stats(CorpusArgs),
    /// Phi correlation between every pair of vocabulary labels.
    Correlate(CorpusArgs),
    /// Stratified train/eval/test split.
    Split(SplitArgs),
    /// Balanced positive/negative id lists, one file per label.
    BinaryDatasets(BinaryArgs),
    /// Train the hashed linear reference scorer.
    TrainRef(TrainArgs),
    /// Choose per-label thresholds on labelled data and write a policy.
    TuneThresholds(TuneArgs),
    /// Tag a citation file.
    Tag(TagArgs),
    /// Precision/recall/F1 and ranking metrics against gold labels.
    Evaluate(EvalArgs),
    /// Max-tags by reliability-threshold grid.
    Sweep(SweepArgs),
    /// Throughput of the tagging pipeline on synthetic citations and stub scorers.
    Bench(BenchArgs),
}

#[derive(Args)]
struct Io {
    /// Input JSONL (standard input when omitted).
    #[arg(short, long)]
    input: Option<PathBuf>,
    /// Output file (standard output when omitted).
    #[arg(short, long)]
    output: Option<PathBuf>,
}

/// Flags mirroring the pipeline configuration; they override values from `--config`.
#[derive(Args, Default)]
struct PipelineArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    vocabulary: Option<PathBuf>,
    #[arg(long)]
    policy: Option<PathBuf>,
    /// Scorer file; repeat for every ensemble member.
    #[arg(long = "scorer")]
    scorers: Vec<PathBuf>,
    #[arg(long)]
    sidecar: Option<String>,
    #[arg(long, value_enum)]
    architecture: Option<Architecture>,
    #[arg(long)]
    token_budget: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    symbol_map: Option<PathBuf>,
}

impl PipelineArgs {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut c = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if self.vocabulary.is_some() {
            c.vocabulary = self.vocabulary.clone();
        }
        if self.policy.is_some() {
            c.policy = self.policy.clone();
        }
        if !self.scorers.is_empty() {
            c.scorers = self.scorers.clone();
        }
        if self.sidecar.is_some() {
            c.sidecar = self.sidecar.clone();
        }
        if let Some(a) = self.architecture {
            c.architecture = a;
        }
        if let Some(v) = self.token_budget {
            c.token_budget = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.workers {
            c.workers = v;
        }
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        if self.symbol_map.is_some() {
            c.symbol_map = self.symbol_map.clone();
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct NormalizeArgs {
    #[command(flatten)]
    io: Io,
    #[arg(long)]
    vocabulary: Option<PathBuf>,
    #[arg(long)]
    symbol_map: Option<PathBuf>,
}

#[derive(Args)]
struct CorpusArgs {
    #[command(flatten)]
    io: Io,
    /// Label vocabulary; derived from the corpus when omitted.
    #[arg(long)]
    vocabulary: Option<PathBuf>,
    /// Labels to leave out of a derived vocabulary.
    #[arg(long = "exclude")]
    excluded: Vec<String>,
    #[arg(long, default_value = DEFAULT_BASE_LABEL)]
    base_label: String,
    /// Also write the derived vocabulary here.
    #[arg(long)]
    write_vocabulary: Option<PathBuf>,
}

#[derive(Args)]
struct SplitArgs {
    #[command(flatten)]
    io: Io,
    #[arg(long)]
    vocabulary: Option<PathBuf>,
    /// Train, eval and test shares, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_RATIOS)]
    ratios: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Allowed train-share deviation, in percentage points, before a label is reported.
    #[arg(long, default_value_t = 3.0)]
    tolerance: f64,
    /// Write train.jsonl, eval.jsonl and test.jsonl into this directory.
    #[arg(long)]
    parts_dir: Option<PathBuf>,
}

#[derive(Args)]
struct BinaryArgs {
    #[arg(short, long)]
    input: Option<PathBuf>,
    #[arg(long)]
    vocabulary: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    min_size: usize,
    #[arg(long)]
    output_dir: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Training citations.
    #[arg(long)]
    train: PathBuf,
    /// Held-out citations for validation metrics.
    #[arg(long)]
    eval: Option<PathBuf>,
    #[arg(long)]
    vocabulary: PathBuf,
    #[arg(long, value_enum, default_value_t = Architecture::Monolithic)]
    architecture: Architecture,
    /// Train a single binary scorer for this label.
    #[arg(long)]
    label: Option<String>,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 0.5)]
    learning_rate: f64,
    #[arg(long, default_value_t = ptagger::scorer::reference::DEFAULT_HASH_DIM)]
    hash_dim: usize,
    #[arg(long, value_enum, default_value_t = Weights::Balanced)]
    class_weights: Weights,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = ptagger::input::DEFAULT_TOKEN_BUDGET)]
    token_budget: usize,
    /// Model file, or a directory of per-label files for an ensemble.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Weights {
    Uniform,
    Balanced,
}

#[derive(Args)]
struct TuneArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[command(flatten)]
    io: Io,
    /// `max-f1` or `recall:<min>`.
    #[arg(long, default_value = "max-f1")]
    objective: String,
}

#[derive(Args)]
struct TagArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[command(flatten)]
    io: Io,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[command(flatten)]
    io: Io,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[command(flatten)]
    io: Io,
    #[arg(long)]
    json: bool,
    /// List rows best micro-F1 first.
    #[arg(long)]
    sort: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(short = 'n', long, default_value_t = 20_000)]
    citations: usize,
    #[arg(long, value_enum, default_value_t = Architecture::Monolithic)]
    architecture: Architecture,
    /// Number of labels, and of ensemble members.
    #[arg(long, default_value_t = 11)]
    classifiers: usize,
    /// Simulated scoring cost per citation per scorer, in microseconds.
    #[arg(long, default_value_t = 0)]
    stub_cost_us: u64,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    json: bool,
}

fn open_input(path: Option<&Path>) -> Result<Box<dyn BufRead>> {
    Ok(match path {
        Some(p) => Box::new(BufReader::new(File::open(p).map_err(|e| Error::io(p, e))?)),
        None => Box::new(BufReader::new(io::stdin())),
    })
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| Error::io(p, e))?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn read_input(io: &Io) -> Result<Vec<Citation>> {
    parse_corpus(open_input(io.input.as_deref())?)
}

fn emit(io: &Io, text: &str) -> Result<()> {
    let mut out = open_output(io.output.as_deref())?;
    let target = io.output.clone().unwrap_or_else(|| "<stdout>".into());
    out.write_all(text.as_bytes()).and_then(|_| out.flush()).map_err(|e| Error::io(target, e))
}

fn emit_json(io: &Io, value: &impl serde::Serialize) -> Result<()> {
    emit(io, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn vocabulary_for(args: &CorpusArgs, corpus: &[Citation]) -> Result<LabelVocabulary> {
    let vocab = match &args.vocabulary {
        Some(p) => LabelVocabulary::load(p)?,
        None => LabelVocabulary::from_corpus(corpus, args.excluded.clone(), args.base_label.clone())?,
    };
    if let Some(p) = &args.write_vocabulary {
        write_file(p, &vocab.to_json())?;
    }
    Ok(vocab)
}

fn training_examples(corpus: &[Citation], budget: usize) -> Result<Vec<TrainingExample>> {
    let map = Default::default();
    corpus
        .iter()
        .map(|c| {
            Ok(TrainingExample {
                input: assemble_input(&normalize_citation(c, &map), &WhitespaceTokenizer, budget)?,
                labels: c.labels.clone(),
            })
        })
        .collect()
}

fn labelled_input(io: &Io, vocab: &LabelVocabulary) -> Result<Vec<Citation>> {
    Ok(normalize_corpus(&read_input(io)?, vocab))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Normalize(a) => {
            let map = match &a.symbol_map {
                Some(p) => {
                    let mut m = ptagger::text::SymbolMap::load(p)?;
                    m.extend(Default::default());
                    m
                }
                None => Default::default(),
            };
            let mut corpus: Vec<Citation> = read_input(&a.io)?.iter().map(|c| normalize_citation(c, &map)).collect();
            if let Some(p) = &a.vocabulary {
                corpus = normalize_corpus(&corpus, &LabelVocabulary::load(p)?);
            }
            let mut buf = Vec::new();
            write_corpus(&mut buf, &corpus).map_err(|e| Error::io("<buffer>", e))?;
            emit(&a.io, &String::from_utf8_lossy(&buf))
        }
        Command::Stats(a) => {
            let corpus = read_input(&a.io)?;
            let vocab = vocabulary_for(&a, &corpus)?;
            emit_json(&a.io, &compute_corpus_stats(&normalize_corpus(&corpus, &vocab), &vocab)?)
        }
        Command::Correlate(a) => {
            let corpus = read_input(&a.io)?;
            let vocab = vocabulary_for(&a, &corpus)?;
            emit_json(&a.io, &compute_label_correlations(&normalize_corpus(&corpus, &vocab), &vocab)?)
        }
        Command::Split(a) => {
            let corpus = read_input(&a.io)?;
            let vocab = match &a.vocabulary {
                Some(p) => LabelVocabulary::load(p)?,
                None => LabelVocabulary::from_corpus(&corpus, Vec::new(), DEFAULT_BASE_LABEL)?,
            };
            let corpus = normalize_corpus(&corpus, &vocab);
            let ratios: [f64; 3] = a
                .ratios
                .as_slice()
                .try_into()
                .map_err(|_| Error::Config(format!("--ratios needs three values, got {}", a.ratios.len())))?;
            let partition = stratified_split(&corpus, ratios, a.seed)?;
            for d in verify_stratification(&partition, &corpus, &vocab, a.tolerance)? {
                log::warn!(
                    "`{}` has {:.2}% in train (target {:.2}%, off by {:.2} points)",
                    d.label, d.actual_pct, d.target_pct, d.deviation
                );
            }
            if let Some(dir) = &a.parts_dir {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                let where_is = partition.assignment()?;
                for (part, name) in PARTITION_NAMES.iter().enumerate() {
                    let members: Vec<Citation> =
                        corpus.iter().filter(|c| where_is[c.id.as_str()] == part).cloned().collect();
                    let path = dir.join(format!("{name}.jsonl"));
                    let mut f = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
                    write_corpus(&mut f, &members).and_then(|_| f.flush()).map_err(|e| Error::io(&path, e))?;
                }
            }
            emit_json(&a.io, &partition)
        }
        Command::BinaryDatasets(a) => {
            let vocab = LabelVocabulary::load(&a.vocabulary)?;
            let corpus = normalize_corpus(&parse_corpus(open_input(a.input.as_deref())?)?, &vocab);
            std::fs::create_dir_all(&a.output_dir).map_err(|e| Error::io(&a.output_dir, e))?;
            for (i, label) in vocab.labels().enumerate() {
                match build_binary_dataset(&corpus, label, a.seed, a.min_size) {
                    Ok(ds) => {
                        let path = a.output_dir.join(format!("{i:03}.json"));
                        write_file(&path, &serde_json::to_string_pretty(&ds)?)?;
                    }
                    Err(e @ Error::InsufficientData { .. }) => log::warn!("skipping: {e}"),
                    Err(e) => return Err(e),
                }
            }
            Ok(())
        }
        Command::TrainRef(a) => {
            let vocab = LabelVocabulary::load(&a.vocabulary)?;
            let train = training_examples(&normalize_corpus(&ptagger::corpus::read_corpus(&a.train)?, &vocab), a.token_budget)?;
            let eval = match &a.eval {
                Some(p) => Some(training_examples(&normalize_corpus(&ptagger::corpus::read_corpus(p)?, &vocab), a.token_budget)?),
                None => None,
            };
            let config = TrainConfig {
                epochs: a.epochs,
                learning_rate: a.learning_rate,
                hash_dim: a.hash_dim,
                class_weights: match a.class_weights {
                    Weights::Uniform => ClassWeights::Uniform,
                    Weights::Balanced => ClassWeights::Balanced,
                },
            };
            let labels: Vec<String> = vocab.labels().map(str::to_string).collect();
            let train_one = |target: TrainTarget| train_reference_scorer(&train, &target, &config, a.seed, eval.as_deref());
            if let Some(label) = a.label {
                return train_one(TrainTarget::Binary(label))?.save(&a.output);
            }
            match a.architecture {
                Architecture::Monolithic => train_one(TrainTarget::Monolithic(labels))?.save(&a.output),
                Architecture::Ensemble => {
                    std::fs::create_dir_all(&a.output).map_err(|e| Error::io(&a.output, e))?;
                    for (i, label) in labels.into_iter().enumerate() {
                        match train_one(TrainTarget::Binary(label)) {
                            Ok(s) => s.save(&a.output.join(format!("{i:03}.ptsc")))?,
                            Err(e @ Error::Training(_)) => log::warn!("skipping: {e}"),
                            Err(e) => return Err(e),
                        }
                    }
                    Ok(())
                }
            }
        }
        Command::TuneThresholds(a) => {
            let objective = match a.objective.as_str() {
                "max-f1" => TuningObjective::MaxF1,
                other => match other.strip_prefix("recall:").and_then(|r| r.parse::<f64>().ok()) {
                    Some(r) if (0.0..=1.0).contains(&r) => TuningObjective::RecallAtLeast(r),
                    _ => return Err(Error::Config(format!("unknown objective `{other}`"))),
                },
            };
            let tagger = Tagger::from_config(&a.pipeline.resolve()?)?;
            let corpus = labelled_input(&a.io, &tagger.vocab)?;
            let scores = tagger.score_corpus(&corpus)?;
            let tuned = tune_thresholds(&scores, &gold_of(&corpus), objective)?;
            let default = tagger.policy.threshold_mode.threshold_for("");
            let policy = CompilerPolicy {
                threshold_mode: ThresholdMode::PerLabel {
                    thresholds: tuned.thresholds,
                    default,
                },
                ..tagger.policy.clone()
            };
            emit(&a.io, &(policy.to_json() + "\n"))
        }
        Command::Tag(a) => {
            let config = a.pipeline.resolve()?;
            let tagger = Tagger::from_config(&config)?;
            let input = a.io.input.clone().or(config.corpus.clone());
            let summary = run_tagging(
                &tagger,
                open_input(input.as_deref())?,
                open_output(a.io.output.as_deref())?,
                config.workers,
            )?;
            if summary.failed > 0 {
                log::warn!("{} of {} records could not be tagged", summary.failed, summary.records);
            }
            Ok(())
        }
        Command::Evaluate(a) => {
            let config = a.pipeline.resolve()?;
            let tagger = Tagger::from_config(&config)?;
            let corpus = labelled_input(&a.io, &tagger.vocab)?;
            let outcomes = tagger.tag_corpus(&corpus, config.workers)?;
            let predicted = outcomes
                .into_iter()
                .map(|o| match o {
                    TagOutcome::Tagged(t) => Ok(t),
                    TagOutcome::Failed { line, error, .. } => Err(Error::Backend(format!("record {line}: {error}"))),
                })
                .collect::<Result<Vec<_>>>()?;
            let labels: Vec<String> = tagger.vocab.labels().map(str::to_string).collect();
            let report = metric_report(&confusion_counts(&predicted, &gold_of(&corpus), &labels)?);
            let ranking = ranking_report(&tagger.score_corpus(&corpus)?, &gold_of(&corpus))?;
            if a.json {
                let mut v = BTreeMap::new();
                v.insert("metrics", serde_json::to_value(&report)?);
                v.insert("ranking", serde_json::to_value(&ranking)?);
                emit_json(&a.io, &v)
            } else {
                let mut text = report.to_text();
                text.push_str(&format!("\n{:<40}  {:>7}  {:>7}\n", "label", "auc_roc", "auc_pr"));
                let fmt = |x: Option<f64>| x.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
                for r in &ranking {
                    text.push_str(&format!("{:<40}  {:>7}  {:>7}\n", r.label, fmt(r.auc_roc), fmt(r.auc_pr)));
                }
                emit(&a.io, &text)
            }
        }
        Command::Sweep(a) => {
            let tagger = Tagger::from_config(&a.pipeline.resolve()?)?;
            let corpus = labelled_input(&a.io, &tagger.vocab)?;
            let scores = tagger.score_corpus(&corpus)?;
            let descriptors = [tagger.scorer.descriptor().clone()];
            let mut table = evaluate_run(&gold_of(&corpus), &scores, &descriptors, &tagger.policy, &tagger.vocab, &SweepGrid::default())?;
            if a.sort {
                table.sort_by_micro_f1();
            }
            if a.json {
                emit_json(&a.io, &table)
            } else {
                emit(&a.io, &table.to_text())
            }
        }
        Command::Bench(a) => {
            let vocab = synthetic_vocabulary(a.classifiers);
            let (scorer, ensemble) = stub_scorers(&vocab, a.architecture, Duration::from_micros(a.stub_cost_us))?;
            let tagger = Tagger::new(vocab, CompilerPolicy::default(), scorer)?;
            let report = bench(&tagger, ensemble.as_deref(), &synthetic_corpus(a.citations, a.seed), a.workers)?;
            let io = Io { input: None, output: None };
            if a.json {
                emit_json(&io, &report)
            } else {
                emit(&io, &report.to_text())
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
