//! Multi-label stratified train/eval/test splitting and balanced binary datasets.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Citation, LabelVocabulary};
use crate::error::{Error, Result};

pub const DEFAULT_RATIOS: [f64; 3] = [0.9, 0.05, 0.05];
pub const PARTITION_NAMES: [&str; 3] = ["train", "eval", "test"];

const TIE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub train: Vec<String>,
    pub eval: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
    pub ratios: [f64; 3],
    /// Percentage of each label's examples in (train, eval, test).
    #[serde(default)]
    pub per_label_shares: BTreeMap<String, [f64; 3]>,
}

impl Partition {
    pub fn parts(&self) -> [&[String]; 3] {
        [&self.train, &self.eval, &self.test]
    }

    /// Index (0 train, 1 eval, 2 test) of every id.
    pub fn assignment(&self) -> Result<HashMap<&str, usize>> {
        let mut map = HashMap::new();
        for (j, part) in self.parts().into_iter().enumerate() {
            for id in part {
                if map.insert(id.as_str(), j).is_some() {
                    return Err(Error::Integrity(format!("id `{id}` assigned twice")));
                }
            }
        }
        Ok(map)
    }
}

fn validate_ratios(ratios: [f64; 3]) -> Result<()> {
    if ratios.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(Error::Config(format!("split ratios must be positive, got {ratios:?}")));
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios must sum to 1, got {sum}")));
    }
    Ok(())
}

/// Partition with the largest `primary`, then largest `secondary`, then a random one.
fn pick(primary: [f64; 3], secondary: [f64; 3], rng: &mut ChaCha8Rng) -> usize {
    let best = |vals: [f64; 3], among: &[usize]| -> Vec<usize> {
        let max = among.iter().map(|&j| vals[j]).fold(f64::NEG_INFINITY, f64::max);
        among
            .iter()
            .copied()
            .filter(|&j| vals[j] >= max - TIE_EPS)
            .collect()
    };
    let tied = best(primary, &[0, 1, 2]);
    let tied = if tied.len() > 1 { best(secondary, &tied) } else { tied };
    if tied.len() == 1 {
        tied[0]
    } else {
        tied[rng.random_range(0..tied.len())]
    }
}

fn label_shares(corpus: &[Citation], assignment: &[usize]) -> BTreeMap<String, [f64; 3]> {
    let mut counts: BTreeMap<String, [u64; 3]> = BTreeMap::new();
    for (c, &j) in corpus.iter().zip(assignment) {
        for l in &c.labels {
            counts.entry(l.clone()).or_default()[j] += 1;
        }
    }
    counts
        .into_iter()
        .map(|(l, n)| {
            let total = (n[0] + n[1] + n[2]) as f64;
            (l, n.map(|k| 100.0 * k as f64 / total))
        })
        .collect()
}

struct SplitState {
    example_labels: Vec<Vec<usize>>,
    remaining: Vec<usize>,
    demand: Vec<[f64; 3]>,
    capacity: [f64; 3],
    assignment: Vec<Option<usize>>,
}

impl SplitState {
    fn place(&mut self, i: usize, j: usize) {
        self.assignment[i] = Some(j);
        for &l in &self.example_labels[i] {
            self.demand[l][j] -= 1.0;
            self.remaining[l] -= 1;
        }
        self.capacity[j] -= 1.0;
    }

    /// Label with the fewest unassigned examples; ties go to the smaller index.
    fn rarest_label(&self) -> Option<usize> {
        (0..self.remaining.len())
            .filter(|&l| self.remaining[l] > 0)
            .min_by_key(|&l| (self.remaining[l], l))
    }
}

/// Iterative stratification: labels are processed rarest first, and each of a label's
/// unassigned examples goes to the partition still wanting the most of that label.
pub fn stratified_split(corpus: &[Citation], ratios: [f64; 3], seed: u64) -> Result<Partition> {
    validate_ratios(ratios)?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let labels: Vec<&str> = corpus
        .iter()
        .flat_map(|c| c.labels.iter().map(String::as_str))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let label_idx: HashMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (*l, i)).collect();
    let example_labels: Vec<Vec<usize>> = corpus
        .iter()
        .map(|c| c.labels.iter().map(|l| label_idx[l.as_str()]).collect())
        .collect();
    let mut examples_of = vec![Vec::new(); labels.len()];
    for (i, ls) in example_labels.iter().enumerate() {
        for &l in ls {
            examples_of[l].push(i);
        }
    }

    let remaining: Vec<usize> = examples_of.iter().map(Vec::len).collect();
    let mut state = SplitState {
        demand: remaining.iter().map(|&n| ratios.map(|r| r * n as f64)).collect(),
        remaining,
        capacity: ratios.map(|r| r * corpus.len() as f64),
        assignment: vec![None; corpus.len()],
        example_labels,
    };

    while let Some(label) = state.rarest_label() {
        for &i in &examples_of[label] {
            if state.assignment[i].is_none() {
                let j = pick(state.demand[label], state.capacity, &mut rng);
                state.place(i, j);
            }
        }
    }
    for i in 0..corpus.len() {
        if state.assignment[i].is_none() {
            let j = pick(state.capacity, state.capacity, &mut rng);
            state.place(i, j);
        }
    }

    let assignment: Vec<usize> = state
        .assignment
        .into_iter()
        .map(|j| j.expect("every example placed"))
        .collect();
    let mut parts: [Vec<String>; 3] = Default::default();
    for (c, &j) in corpus.iter().zip(&assignment) {
        parts[j].push(c.id.clone());
    }
    let [train, eval, test] = parts;
    Ok(Partition {
        train,
        eval,
        test,
        seed,
        ratios,
        per_label_shares: label_shares(corpus, &assignment),
    })
}

/// One label whose train share is off target by more than the tolerance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShareDeviation {
    pub label: String,
    pub target_pct: f64,
    pub actual_pct: f64,
    pub deviation: f64,
}

pub fn verify_stratification(
    partition: &Partition,
    corpus: &[Citation],
    vocab: &LabelVocabulary,
    tolerance_pct: f64,
) -> Result<Vec<ShareDeviation>> {
    let where_is = partition.assignment()?;
    if where_is.len() != corpus.len() {
        return Err(Error::Integrity(format!(
            "partition holds {} ids, corpus has {}",
            where_is.len(),
            corpus.len()
        )));
    }
    let assignment = corpus
        .iter()
        .map(|c| {
            where_is
                .get(c.id.as_str())
                .copied()
                .ok_or_else(|| Error::Integrity(format!("citation `{}` is not in the partition", c.id)))
        })
        .collect::<Result<Vec<_>>>()?;

    let target = partition.ratios[0] * 100.0;
    let shares = label_shares(corpus, &assignment);
    Ok(vocab
        .labels()
        .filter_map(|l| shares.get(l).map(|s| (l, s[0])))
        .filter_map(|(label, actual)| {
            let deviation = (actual - target).abs();
            (deviation > tolerance_pct).then(|| ShareDeviation {
                label: label.to_string(),
                target_pct: target,
                actual_pct: actual,
                deviation,
            })
        })
        .collect())
}

/// Balanced positive/negative example ids for one label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryDataset {
    pub label: String,
    pub positives: Vec<String>,
    pub negatives: Vec<String>,
    pub seed: u64,
}

/// Splits `total` proportionally to `sizes` with the largest-remainder method.
fn proportional_quotas(sizes: &[usize], total: usize) -> Vec<usize> {
    let pool: usize = sizes.iter().sum();
    let mut quotas: Vec<usize> = sizes.iter().map(|&s| s * total / pool).collect();
    let mut short = total - quotas.iter().sum::<usize>();
    let mut by_remainder: Vec<usize> = (0..sizes.len()).collect();
    // remainder of s*total/pool, compared exactly as integers
    by_remainder.sort_by_key(|&g| std::cmp::Reverse(sizes[g] * total % pool));
    for g in by_remainder {
        if short == 0 {
            break;
        }
        if quotas[g] < sizes[g] {
            quotas[g] += 1;
            short -= 1;
        }
    }
    quotas
}

/// Positives are every citation with `label`, topped up with replacement to `min_size / 2`
/// (rounded up). Negatives are drawn without replacement, proportionally to the label-set
/// composition of the non-bearing citations. When negatives run short the positives are
/// subsampled so the classes stay equal.
pub fn build_binary_dataset(
    corpus: &[Citation],
    label: &str,
    seed: u64,
    min_size: usize,
) -> Result<BinaryDataset> {
    let (pos, neg): (Vec<&Citation>, Vec<&Citation>) =
        corpus.iter().partition(|c| c.labels.contains(label));
    let insufficient = |reason: &str| Error::InsufficientData {
        label: label.to_string(),
        reason: reason.to_string(),
    };
    if pos.is_empty() {
        return Err(insufficient("no positive examples"));
    }
    if neg.is_empty() {
        return Err(insufficient("no negative examples"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = pos.len().max(min_size.div_ceil(2)).min(neg.len());

    let positives: Vec<String> = if size >= pos.len() {
        let mut ids: Vec<String> = pos.iter().map(|c| c.id.clone()).collect();
        for _ in pos.len()..size {
            ids.push(pos[rng.random_range(0..pos.len())].id.clone());
        }
        ids
    } else {
        let mut picked = sample(&mut rng, pos.len(), size).into_vec();
        picked.sort_unstable();
        picked.into_iter().map(|i| pos[i].id.clone()).collect()
    };

    let mut groups: BTreeMap<&BTreeSet<String>, Vec<usize>> = BTreeMap::new();
    for (i, c) in neg.iter().enumerate() {
        groups.entry(&c.labels).or_default().push(i);
    }
    let sizes: Vec<usize> = groups.values().map(Vec::len).collect();
    let quotas = proportional_quotas(&sizes, size);
    let mut chosen: Vec<usize> = Vec::with_capacity(size);
    for (members, quota) in groups.values().zip(quotas) {
        chosen.extend(
            sample(&mut rng, members.len(), quota)
                .into_iter()
                .map(|k| members[k]),
        );
    }
    chosen.sort_unstable();
    let negatives = chosen.into_iter().map(|i| neg[i].id.clone()).collect();

    Ok(BinaryDataset {
        label: label.to_string(),
        positives,
        negatives,
        seed,
    })
}

/// Checks the balance and disjointness invariants of a dataset.
pub fn check_binary_dataset(ds: &BinaryDataset, corpus: &[Citation]) -> Result<()> {
    let by_id: HashMap<&str, &Citation> = corpus.iter().map(|c| (c.id.as_str(), c)).collect();
    if ds.positives.len() != ds.negatives.len() {
        return Err(Error::Integrity(format!(
            "`{}`: {} positives vs {} negatives",
            ds.label,
            ds.positives.len(),
            ds.negatives.len()
        )));
    }
    let pos: HashSet<&str> = ds.positives.iter().map(String::as_str).collect();
    let mut neg = HashSet::new();
    for id in &ds.negatives {
        if pos.contains(id.as_str()) || !neg.insert(id.as_str()) {
            return Err(Error::Integrity(format!("`{}`: negative `{id}` repeated", ds.label)));
        }
    }
    for (id, want) in ds
        .positives
        .iter()
        .map(|id| (id, true))
        .chain(ds.negatives.iter().map(|id| (id, false)))
    {
        let c = by_id
            .get(id.as_str())
            .ok_or_else(|| Error::Integrity(format!("unknown id `{id}`")))?;
        if c.labels.contains(&ds.label) != want {
            return Err(Error::Integrity(format!("`{id}` is on the wrong side of `{}`", ds.label)));
        }
    }
    Ok(())
}
