//! Recall-oriented ROUGE scoring.
//!
//! ROUGE-N is clipped n-gram recall over the concatenated summary tokens.
//! ROUGE-L is the summary-level union-LCS recall: every reference sentence
//! is covered by the union of its LCS hits against each candidate sentence.
//! Scores are kept as exact `hits / total` counts until the final division.

mod porter;

use std::collections::{BTreeSet, HashMap};
use std::hash::Hash;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Tokens;

pub use porter::stem;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RougeError {
    #[error("n-gram order must be at least 1")]
    ZeroOrder,
}

/// A recall fraction `hits / total`.
///
/// An empty reference (`total == 0`) scores 0 and is reported through
/// [`Recall::is_degenerate`] rather than failing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Recall {
    pub hits: usize,
    pub total: usize,
}

impl Recall {
    pub fn value(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.hits as f64 / self.total as f64
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.total == 0
    }
}

/// Contiguous n-grams of `tokens` with multiplicity.
pub fn ngram_counts<T: Hash + Eq>(
    tokens: &[T],
    n: usize,
) -> Result<HashMap<&[T], usize>, RougeError> {
    if n == 0 {
        return Err(RougeError::ZeroOrder);
    }
    let mut counts = HashMap::new();
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    Ok(counts)
}

/// Clipped n-gram recall of `candidate` against `reference`.
pub fn rouge_n_recall<T: Hash + Eq>(
    candidate: &[T],
    reference: &[T],
    n: usize,
) -> Result<Recall, RougeError> {
    let reference_counts = ngram_counts(reference, n)?;
    let candidate_counts = ngram_counts(candidate, n)?;
    let hits = reference_counts
        .iter()
        .map(|(gram, &r)| r.min(candidate_counts.get(gram).copied().unwrap_or(0)))
        .sum();
    Ok(Recall {
        hits,
        total: reference.len().saturating_sub(n - 1),
    })
}

fn lcs_table<T: Eq>(a: &[T], b: &[T]) -> Vec<Vec<usize>> {
    let mut table = vec![vec![0; b.len() + 1]; a.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            table[i][j] = if a[i - 1] == b[j - 1] {
                table[i - 1][j - 1] + 1
            } else {
                table[i - 1][j].max(table[i][j - 1])
            };
        }
    }
    table
}

/// Length of the longest common subsequence, O(|a|·|b|).
pub fn lcs_length<T: Eq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    // two rolling rows are enough for the length alone
    let mut prev = vec![0; b.len() + 1];
    let mut cur = vec![0; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Positions in `reference` matched by one LCS with `candidate`.
///
/// The backtrace walks from the end, preferring a match, then a step up in
/// `reference`, then a step left in `candidate`.
pub fn lcs_hits<T: Eq>(reference: &[T], candidate: &[T]) -> Vec<usize> {
    let table = lcs_table(reference, candidate);
    let (mut i, mut j) = (reference.len(), candidate.len());
    let mut hits = Vec::with_capacity(table[i][j]);
    while i > 0 && j > 0 {
        if reference[i - 1] == candidate[j - 1] {
            hits.push(i - 1);
            i -= 1;
            j -= 1;
        } else if table[i - 1][j] >= table[i][j - 1] {
            i -= 1;
        } else {
            j -= 1;
        }
    }
    hits.reverse();
    hits
}

/// Summary-level union-LCS recall.
pub fn rouge_l_recall<T: Eq>(
    candidate_sentences: &[Vec<T>],
    reference_sentences: &[Vec<T>],
) -> Recall {
    let mut recall = Recall::default();
    for reference in reference_sentences {
        let covered: BTreeSet<usize> = candidate_sentences
            .iter()
            .flat_map(|c| lcs_hits(reference, c))
            .collect();
        recall.hits += covered.len();
        recall.total += reference.len();
    }
    recall
}

/// ROUGE-1..4 and ROUGE-L recall with their mean.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RougeScore {
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    pub r4: f64,
    pub rl: f64,
    pub avg: f64,
}

impl RougeScore {
    pub fn new(r1: f64, r2: f64, r3: f64, r4: f64, rl: f64) -> Self {
        Self {
            r1,
            r2,
            r3,
            r4,
            rl,
            avg: (r1 + r2 + r3 + r4 + rl) / 5.0,
        }
    }

    /// Field-wise mean; zero for an empty slice.
    pub fn mean(scores: &[RougeScore]) -> RougeScore {
        if scores.is_empty() {
            return RougeScore::default();
        }
        let n = scores.len() as f64;
        let field = |f: fn(&RougeScore) -> f64| scores.iter().map(f).sum::<f64>() / n;
        RougeScore::new(
            field(|s| s.r1),
            field(|s| s.r2),
            field(|s| s.r3),
            field(|s| s.r4),
            field(|s| s.rl),
        )
    }

    pub fn values(&self) -> [f64; 6] {
        [self.r1, self.r2, self.r3, self.r4, self.rl, self.avg]
    }
}

/// Applies the Porter stemmer to every token when `stem` is set.
pub fn normalize(sentences: &[Tokens], stem: bool) -> Vec<Tokens> {
    if !stem {
        return sentences.to_vec();
    }
    sentences
        .iter()
        .map(|s| s.iter().map(|t| porter::stem(t)).collect())
        .collect()
}

/// Scores a candidate summary against the gold highlights.
pub fn score_summary(
    candidate_sentences: &[Tokens],
    reference_sentences: &[Tokens],
    stem: bool,
) -> RougeScore {
    let candidate = normalize(candidate_sentences, stem);
    let reference = normalize(reference_sentences, stem);
    let flat_candidate: Vec<&String> = candidate.iter().flatten().collect();
    let flat_reference: Vec<&String> = reference.iter().flatten().collect();
    let rn = |n| {
        rouge_n_recall(&flat_candidate, &flat_reference, n)
            .expect("orders 1..=4 are valid")
            .value()
    };
    RougeScore::new(
        rn(1),
        rn(2),
        rn(3),
        rn(4),
        rouge_l_recall(&candidate, &reference).value(),
    )
}

/// Sentences joined with single spaces.
pub fn serialize(sentences: &[Tokens]) -> String {
    sentences
        .iter()
        .flatten()
        .map(String::as_str)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Longest whole-token prefix whose space-joined form fits in `limit` bytes.
pub fn truncate_bytes(sentences: &[Tokens], limit: usize) -> Vec<Tokens> {
    let mut out = Vec::new();
    let mut used = 0;
    let mut emitted = 0;
    'outer: for sentence in sentences {
        let mut kept = Vec::new();
        for tok in sentence {
            let need = tok.len() + usize::from(emitted > 0);
            if used + need > limit {
                if !kept.is_empty() {
                    out.push(kept);
                }
                break 'outer;
            }
            used += need;
            emitted += 1;
            kept.push(tok.clone());
        }
        if !kept.is_empty() {
            out.push(kept);
        }
    }
    out
}
