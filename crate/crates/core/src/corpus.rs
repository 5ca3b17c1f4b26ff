//! Citation records, the label vocabulary, and corpus-level statistics.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

pub const DEFAULT_BASE_LABEL: &str = "Journal Article";

/// One bibliographic record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Citation {
    pub id: String,
    pub journal_id: String,
    pub title: String,
    #[serde(default, rename = "abstract")]
    pub abstract_text: String,
    #[serde(default)]
    pub labels: BTreeSet<String>,
}

impl Citation {
    pub fn new(
        id: impl Into<String>,
        journal_id: impl Into<String>,
        title: impl Into<String>,
        abstract_text: impl Into<String>,
    ) -> Self {
        Citation {
            id: id.into(),
            journal_id: journal_id.into(),
            title: title.into(),
            abstract_text: abstract_text.into(),
            labels: BTreeSet::new(),
        }
    }

    pub fn with_labels<I, S>(mut self, labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.labels = labels.into_iter().map(Into::into).collect();
        self
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("citation serializes")
    }
}

fn required_str(obj: &Map<String, Value>, field: &str, line: usize) -> Result<String> {
    match obj.get(field) {
        Some(Value::String(s)) if !s.trim().is_empty() => Ok(s.clone()),
        _ => Err(Error::Schema {
            line,
            field: field.to_string(),
        }),
    }
}

/// Parses one corpus line. `line_no` is 1-based and only used for error messages.
pub fn parse_citation_record(line: &str, line_no: usize) -> Result<Citation> {
    let value: Value = serde_json::from_str(line).map_err(|e| Error::Parse {
        line: line_no,
        message: e.to_string(),
    })?;
    let obj = value.as_object().ok_or_else(|| Error::Parse {
        line: line_no,
        message: "expected a JSON object".into(),
    })?;

    let id = required_str(obj, "id", line_no)?;
    let journal_id = required_str(obj, "journal_id", line_no)?;
    let title = required_str(obj, "title", line_no)?;
    let abstract_text = match obj.get("abstract") {
        None | Some(Value::Null) => String::new(),
        Some(Value::String(s)) => s.clone(),
        Some(_) => {
            return Err(Error::Schema {
                line: line_no,
                field: "abstract".into(),
            })
        }
    };
    let labels = match obj.get("labels") {
        None | Some(Value::Null) => BTreeSet::new(),
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| {
                v.as_str().map(str::to_string).ok_or_else(|| Error::Schema {
                    line: line_no,
                    field: "labels".into(),
                })
            })
            .collect::<Result<_>>()?,
        Some(_) => {
            return Err(Error::Schema {
                line: line_no,
                field: "labels".into(),
            })
        }
    };

    Ok(Citation {
        id,
        journal_id,
        title,
        abstract_text,
        labels,
    })
}

/// Reads a whole JSONL corpus, skipping blank lines and rejecting duplicate ids.
pub fn parse_corpus<R: BufRead>(reader: R) -> Result<Vec<Citation>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let citation = parse_citation_record(&line, idx + 1)?;
        if !seen.insert(citation.id.clone()) {
            return Err(Error::DuplicateId(citation.id));
        }
        out.push(citation);
    }
    Ok(out)
}

pub fn read_corpus(path: &Path) -> Result<Vec<Citation>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(BufReader::new(file))
}

pub fn write_corpus<W: Write>(mut writer: W, corpus: &[Citation]) -> std::io::Result<()> {
    for c in corpus {
        writeln!(writer, "{}", c.to_json_line())?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabEntry {
    pub label: String,
    pub count: u64,
}

#[derive(Debug, Deserialize, Serialize)]
struct VocabFile {
    entries: Vec<VocabEntry>,
    #[serde(default)]
    excluded: Vec<String>,
    #[serde(default = "default_base_label")]
    base_label: String,
}

fn default_base_label() -> String {
    DEFAULT_BASE_LABEL.to_string()
}

/// In-scope labels ordered by corpus prevalence, plus the excluded set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVocabulary {
    entries: Vec<VocabEntry>,
    excluded: BTreeSet<String>,
    base_label: String,
    rank: HashMap<String, usize>,
}

impl LabelVocabulary {
    /// Sorts entries by count descending (ties lexicographic) and validates the invariants.
    pub fn new(
        mut entries: Vec<VocabEntry>,
        excluded: impl IntoIterator<Item = String>,
        base_label: impl Into<String>,
    ) -> Result<Self> {
        let base_label = base_label.into();
        let excluded: BTreeSet<String> = excluded.into_iter().collect();
        entries.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.label.cmp(&b.label)));

        let mut rank = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if e.label.is_empty() {
                return Err(Error::Config("vocabulary contains an empty label".into()));
            }
            if rank.insert(e.label.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary label `{}`", e.label)));
            }
            if excluded.contains(&e.label) {
                return Err(Error::Config(format!(
                    "label `{}` is both in scope and excluded",
                    e.label
                )));
            }
        }
        if !rank.contains_key(&base_label) {
            return Err(Error::Config(format!(
                "base label `{base_label}` is not in the vocabulary"
            )));
        }
        Ok(LabelVocabulary {
            entries,
            excluded,
            base_label,
            rank,
        })
    }

    /// Builds a vocabulary from the label counts observed in `corpus`, minus `excluded`.
    pub fn from_corpus(
        corpus: &[Citation],
        excluded: impl IntoIterator<Item = String>,
        base_label: impl Into<String>,
    ) -> Result<Self> {
        let excluded: BTreeSet<String> = excluded.into_iter().collect();
        let base_label = base_label.into();
        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        counts.insert(base_label.clone(), 0);
        for c in corpus {
            for l in &c.labels {
                if !excluded.contains(l) {
                    *counts.entry(l.clone()).or_default() += 1;
                }
            }
        }
        let entries = counts
            .into_iter()
            .map(|(label, count)| VocabEntry { label, count })
            .collect();
        Self::new(entries, excluded, base_label)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: VocabFile = serde_json::from_str(text)?;
        Self::new(file.entries, file.excluded, file.base_label)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let file = VocabFile {
            entries: self.entries.clone(),
            excluded: self.excluded.iter().cloned().collect(),
            base_label: self.base_label.clone(),
        };
        serde_json::to_string_pretty(&file).expect("vocabulary serializes")
    }

    pub fn entries(&self) -> &[VocabEntry] {
        &self.entries
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.label.as_str())
    }

    pub fn excluded(&self) -> &BTreeSet<String> {
        &self.excluded
    }

    pub fn base_label(&self) -> &str {
        &self.base_label
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, label: &str) -> bool {
        self.rank.contains_key(label)
    }

    /// Position in prevalence order; 0 is the most prevalent label.
    pub fn rank(&self, label: &str) -> Option<usize> {
        self.rank.get(label).copied()
    }

    pub fn count(&self, label: &str) -> Option<u64> {
        self.rank(label).map(|i| self.entries[i].count)
    }

    fn check_labels(&self, citation: &Citation) -> Result<()> {
        match citation.labels.iter().find(|l| !self.contains(l)) {
            Some(label) => Err(Error::UnknownLabel {
                citation: citation.id.clone(),
                label: label.clone(),
            }),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub per_label_count: BTreeMap<String, u64>,
    pub tags_per_citation_histogram: BTreeMap<usize, u64>,
    pub total_citations: u64,
}

impl CorpusStats {
    /// Adds the counts of another shard.
    pub fn merge(&mut self, other: &CorpusStats) {
        for (label, n) in &other.per_label_count {
            *self.per_label_count.entry(label.clone()).or_default() += n;
        }
        for (k, n) in &other.tags_per_citation_histogram {
            *self.tags_per_citation_histogram.entry(*k).or_default() += n;
        }
        self.total_citations += other.total_citations;
    }
}

pub fn compute_corpus_stats(corpus: &[Citation], vocab: &LabelVocabulary) -> Result<CorpusStats> {
    let mut stats = CorpusStats {
        per_label_count: vocab.labels().map(|l| (l.to_string(), 0)).collect(),
        ..Default::default()
    };
    for c in corpus {
        vocab.check_labels(c)?;
        for l in &c.labels {
            *stats.per_label_count.get_mut(l).expect("checked above") += 1;
        }
        *stats
            .tags_per_citation_histogram
            .entry(c.labels.len())
            .or_default() += 1;
        stats.total_citations += 1;
    }
    Ok(stats)
}

/// Phi coefficients between label indicators, in vocabulary order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl CorrelationMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.labels.iter().position(|l| l == a)?;
        let j = self.labels.iter().position(|l| l == b)?;
        Some(self.values[i][j])
    }
}

pub fn compute_label_correlations(
    corpus: &[Citation],
    vocab: &LabelVocabulary,
) -> Result<CorrelationMatrix> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let k = vocab.len();
    let n = corpus.len() as u64;
    let mut single = vec![0u64; k];
    let mut joint = vec![0u64; k * k];
    let mut idx = Vec::new();
    for c in corpus {
        vocab.check_labels(c)?;
        idx.clear();
        idx.extend(c.labels.iter().filter_map(|l| vocab.rank(l)));
        for &i in &idx {
            single[i] += 1;
            for &j in &idx {
                joint[i * k + j] += 1;
            }
        }
    }

    let mut values = vec![vec![0.0; k]; k];
    for i in 0..k {
        let var_i = single[i] * (n - single[i]);
        if var_i == 0 {
            continue;
        }
        values[i][i] = 1.0;
        for j in (i + 1)..k {
            let var_j = single[j] * (n - single[j]);
            if var_j == 0 {
                continue;
            }
            let num = (n as i128 * joint[i * k + j] as i128) - (single[i] as i128 * single[j] as i128);
            let phi = (num as f64 / ((var_i as f64) * (var_j as f64)).sqrt()).clamp(-1.0, 1.0);
            values[i][j] = phi;
            values[j][i] = phi;
        }
    }
    Ok(CorrelationMatrix {
        labels: vocab.labels().map(str::to_string).collect(),
        values,
    })
}

/// Drops excluded labels, then drops the base label wherever a more specific label remains.
pub fn normalize_corpus(corpus: &[Citation], vocab: &LabelVocabulary) -> Vec<Citation> {
    corpus
        .iter()
        .map(|c| {
            let mut c = c.clone();
            c.labels.retain(|l| !vocab.excluded().contains(l));
            if c.labels.len() > 1 {
                c.labels.remove(vocab.base_label());
            }
            c
        })
        .collect()
}
