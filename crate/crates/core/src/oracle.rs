//! Greedy ROUGE-maximizing extraction labels.
//!
//! Sentences are added one at a time, each time picking the sentence that
//! makes the selected set score highest against the concatenated
//! highlights. Selection stops once no addition strictly improves the
//! objective or the summary holds `max_sentences` sentences.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Document, Tokens};
use crate::rouge::{self, ngram_counts};

/// Minimum gain for an added sentence to count as an improvement.
pub const IMPROVEMENT_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OracleError {
    #[error("document {0:?} has no highlight tokens")]
    EmptyHighlights(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// The labeling objective: mean ROUGE-n recall over `orders`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScorerConfig {
    pub orders: Vec<usize>,
    pub stem: bool,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        Self {
            orders: vec![1, 2],
            stem: false,
        }
    }
}

impl ScorerConfig {
    fn check(&self, max_sentences: usize) -> Result<(), OracleError> {
        if self.orders.is_empty() || self.orders.contains(&0) {
            return Err(OracleError::InvalidArgument(format!(
                "ROUGE orders must be non-empty and positive, got {:?}",
                self.orders
            )));
        }
        if max_sentences < 1 {
            return Err(OracleError::InvalidArgument(
                "max_sentences must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceStep {
    pub index: usize,
    pub objective: f64,
}

struct Prepared {
    sentences: Vec<Tokens>,
    reference: Tokens,
}

fn prepare(
    doc: &Document,
    config: &ScorerConfig,
    max_sentences: usize,
) -> Result<Prepared, OracleError> {
    config.check(max_sentences)?;
    let reference: Tokens = rouge::normalize(&doc.highlights, config.stem).concat();
    if reference.is_empty() {
        return Err(OracleError::EmptyHighlights(doc.id.clone()));
    }
    Ok(Prepared {
        sentences: rouge::normalize(&doc.sentences, config.stem),
        reference,
    })
}

fn concat_in_order(sentences: &[Tokens], selected: &[usize]) -> Tokens {
    let mut idx = selected.to_vec();
    idx.sort_unstable();
    idx.iter()
        .flat_map(|&i| sentences[i].iter().cloned())
        .collect()
}

/// Runs the greedy selection and returns each accepted step.
pub fn greedy_trace(
    doc: &Document,
    config: &ScorerConfig,
    max_sentences: usize,
) -> Result<Vec<TraceStep>, OracleError> {
    let prep = prepare(doc, config, max_sentences)?;
    let reference_counts: Vec<_> = config
        .orders
        .iter()
        .map(|&n| ngram_counts(&prep.reference, n).expect("orders checked"))
        .collect();
    let objective = |candidate: &Tokens| -> f64 {
        let total: f64 = config
            .orders
            .iter()
            .zip(&reference_counts)
            .map(|(&n, refc)| {
                let cand = ngram_counts(candidate, n).expect("orders checked");
                let hits: usize = refc
                    .iter()
                    .map(|(g, &r)| r.min(cand.get(g).copied().unwrap_or(0)))
                    .sum();
                let denom = prep.reference.len().saturating_sub(n - 1);
                rouge::Recall { hits, total: denom }.value()
            })
            .sum();
        total / config.orders.len() as f64
    };

    let mut selected: Vec<usize> = Vec::new();
    let mut trace = Vec::new();
    let mut current = 0.0;
    while selected.len() < max_sentences {
        let mut best: Option<TraceStep> = None;
        for i in (0..prep.sentences.len()).filter(|i| !selected.contains(i)) {
            let mut with = selected.clone();
            with.push(i);
            let value = objective(&concat_in_order(&prep.sentences, &with));
            if best.is_none_or(|b| value > b.objective) {
                best = Some(TraceStep {
                    index: i,
                    objective: value,
                });
            }
        }
        match best {
            Some(step) if step.objective > current + IMPROVEMENT_TOL => {
                selected.push(step.index);
                current = step.objective;
                trace.push(step);
            }
            _ => break,
        }
    }
    Ok(trace)
}

/// Per-sentence 0/1 labels from the greedy selection.
pub fn greedy_label(
    doc: &Document,
    config: &ScorerConfig,
    max_sentences: usize,
) -> Result<Vec<u8>, OracleError> {
    let trace = greedy_trace(doc, config, max_sentences)?;
    let mut labels = vec![0; doc.sentences.len()];
    for step in trace {
        labels[step.index] = 1;
    }
    Ok(labels)
}

/// Fills in `labels` for every document, in parallel, preserving order.
pub fn label_corpus(
    docs: &[Document],
    config: &ScorerConfig,
    max_sentences: usize,
) -> Result<Vec<Document>, OracleError> {
    docs.par_iter()
        .map(|doc| {
            let labels = greedy_label(doc, config, max_sentences)?;
            Ok(Document {
                labels: Some(labels),
                ..doc.clone()
            })
        })
        .collect()
}

/// Clipped n-gram hits by direct position enumeration, with no hashing.
fn naive_recall(candidate: &[String], reference: &[String], n: usize) -> f64 {
    if reference.len() < n {
        return 0.0;
    }
    let positions = reference.len() - n + 1;
    let occurrences = |seq: &[String], gram: &[String]| -> usize {
        if seq.len() < n {
            return 0;
        }
        (0..=seq.len() - n)
            .filter(|&p| &seq[p..p + n] == gram)
            .count()
    };
    let mut hits = 0;
    for p in 0..positions {
        let gram = &reference[p..p + n];
        // count each distinct reference n-gram once, at its first position
        if (0..p).any(|q| &reference[q..q + n] == gram) {
            continue;
        }
        hits += occurrences(reference, gram).min(occurrences(candidate, gram));
    }
    hits as f64 / positions as f64
}

/// Re-derives the greedy trace by naively re-scoring every candidate set at
/// every step. Exists to cross-check [`greedy_trace`].
pub fn verify_greedy_trace(
    doc: &Document,
    config: &ScorerConfig,
    max_sentences: usize,
) -> Result<Vec<TraceStep>, OracleError> {
    let prep = prepare(doc, config, max_sentences)?;
    let score = |set: &[usize]| -> f64 {
        let mut sorted = set.to_vec();
        sorted.sort_unstable();
        let candidate: Vec<String> = sorted
            .iter()
            .flat_map(|&i| prep.sentences[i].clone())
            .collect();
        let total: f64 = config
            .orders
            .iter()
            .map(|&n| naive_recall(&candidate, &prep.reference, n))
            .sum();
        total / config.orders.len() as f64
    };

    let mut chosen: Vec<usize> = Vec::new();
    let mut trace = Vec::new();
    let mut current = 0.0;
    for _ in 0..max_sentences {
        let scored: Vec<(usize, f64)> = (0..prep.sentences.len())
            .filter(|i| !chosen.contains(i))
            .map(|i| {
                let mut set = chosen.clone();
                set.push(i);
                (i, score(&set))
            })
            .collect();
        let Some(&(_, top)) = scored.iter().max_by(|a, b| a.1.total_cmp(&b.1)) else {
            break;
        };
        let index = scored
            .iter()
            .find(|(_, v)| *v == top)
            .expect("max exists")
            .0;
        if top <= current + IMPROVEMENT_TOL {
            break;
        }
        chosen.push(index);
        current = top;
        trace.push(TraceStep {
            index,
            objective: top,
        });
    }
    Ok(trace)
}
