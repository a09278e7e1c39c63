//! Training, model selection, evaluation and the LEAD baseline.

use std::fmt;
use std::str::FromStr;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{encode_document, CorpusError, Document, SideConfig, Tokens, Vocabulary};
use crate::ndcore::{Adam, AdamState, Tensor};
use crate::rouge::{score_summary, truncate_bytes, RougeScore};
use crate::sidenet::{
    batch_loss_and_grads, extract_probs, generate_summary, init_params, Checkpoint, ModelConfig,
    SidenetError,
};

/// Sentences per generated summary.
pub const SUMMARY_SENTENCES: usize = 3;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Model(#[from] SidenetError),
    #[error("training document {0:?} has no labels; run `sidesum label` on the corpus first")]
    Unlabeled(String),
    #[error("document {0:?} has no highlights to score against")]
    MissingHighlights(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Stem words when scoring validation summaries for model selection.
    pub validation_stem: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            batch_size: 20,
            epochs: 10,
            lr: 0.001,
            validation_stem: true,
        }
    }
}

/// One line of the training metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation: RougeScore,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation average.
    pub best: Checkpoint,
    pub best_epoch: usize,
    pub log: Vec<EpochRecord>,
}

/// Index of the highest `avg`, preferring the earlier epoch on ties.
pub fn select_best(log: &[EpochRecord]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, r) in log.iter().enumerate() {
        if best.is_none_or(|b| r.validation.avg > log[b].validation.avg) {
            best = Some(i);
        }
    }
    best
}

fn check_highlights(docs: &[Document]) -> Result<()> {
    match docs
        .iter()
        .find(|d| d.highlights.iter().all(|h| h.is_empty()))
    {
        Some(d) => Err(HarnessError::MissingHighlights(d.id.clone())),
        None => Ok(()),
    }
}

/// Trains with mini-batch Adam, scoring the validation set after every
/// epoch and keeping the best epoch's parameters.
///
/// Every source of randomness (initialization and the per-epoch shuffle)
/// derives from `config.seed`, so identical inputs give bit-identical
/// results. `on_epoch` sees each log record as soon as it is produced.
pub fn train(
    train_docs: &[Document],
    validation: &[Document],
    vocab: &Vocabulary,
    config: &ModelConfig,
    pretrained: Option<&Tensor>,
    options: &TrainOptions,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    if options.batch_size == 0 || options.epochs == 0 {
        return Err(HarnessError::InvalidArgument(
            "batch size and epochs must be positive".into(),
        ));
    }
    if !(options.lr > 0.0 && options.lr.is_finite()) {
        return Err(HarnessError::InvalidArgument(format!(
            "learning rate {}",
            options.lr
        )));
    }
    if train_docs.is_empty() || validation.is_empty() {
        return Err(HarnessError::InvalidArgument(
            "training and validation corpora must be non-empty".into(),
        ));
    }
    if let Some(d) = train_docs.iter().find(|d| d.labels.is_none()) {
        return Err(HarnessError::Unlabeled(d.id.clone()));
    }
    check_highlights(validation)?;

    let encoded: Vec<_> = train_docs
        .iter()
        .map(|d| encode_document(d, vocab, config.limits, config.side))
        .collect();
    let mut current = Checkpoint {
        config: config.clone(),
        vocab: vocab.clone(),
        params: init_params(config, vocab.len(), pretrained)?,
    };
    let adam = Adam::with_lr(options.lr);
    let mut state = AdamState::new(current.params.tensors());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..encoded.len()).collect();

    let mut log: Vec<EpochRecord> = Vec::with_capacity(options.epochs);
    let mut best: Option<(usize, Checkpoint)> = None;
    for epoch in 1..=options.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(options.batch_size) {
            let docs: Vec<_> = batch.iter().map(|&i| &encoded[i]).collect();
            let (loss, grads) = batch_loss_and_grads(&docs, &current.params, config)?;
            loss_sum += loss * batch.len() as f64;
            let dense = grads.to_dense(&current.params);
            adam.step(&mut current.params.tensors_mut(), &dense, &mut state)
                .map_err(SidenetError::from)?;
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / encoded.len() as f64,
            validation: evaluate(
                &current,
                validation,
                EvalMode::Full,
                options.validation_stem,
            )?,
        };
        info!(
            "epoch {epoch}: train loss {:.6}, validation avg {:.4}",
            record.train_loss, record.validation.avg
        );
        on_epoch(&record);
        if best
            .as_ref()
            .is_none_or(|(b, _)| record.validation.avg > log[*b].validation.avg)
        {
            best = Some((log.len(), current.clone()));
        }
        log.push(record);
    }
    let (index, checkpoint) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        best: checkpoint,
        best_epoch: log[index].epoch,
        log,
    })
}

/// Indices of the `m` sentences the model ranks highest, in document order.
pub fn summarize(doc: &Document, checkpoint: &Checkpoint, m: usize) -> Result<Vec<usize>> {
    let config = &checkpoint.config;
    let encoded = encode_document(doc, &checkpoint.vocab, config.limits, config.side);
    let extraction = extract_probs(&encoded, &checkpoint.params, config)?;
    let picked = generate_summary(&extraction.positive(), m)?;
    Ok(picked.into_iter().map(|i| extraction.rows[i]).collect())
}

/// The first `min(m, n)` sentence indices.
pub fn lead_baseline(num_sentences: usize, m: usize) -> Vec<usize> {
    (0..num_sentences.min(m)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EvalMode {
    /// The whole selected sentences.
    Full,
    /// The first `n` bytes of the selected sentences, cut at a word boundary.
    Bytes(usize),
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalMode::Full => write!(f, "full"),
            EvalMode::Bytes(n) => write!(f, "bytes{n}"),
        }
    }
}

impl FromStr for EvalMode {
    type Err = HarnessError;

    /// Accepts `full`, `75`, or `bytes75`.
    fn from_str(s: &str) -> Result<Self> {
        if s == "full" {
            return Ok(EvalMode::Full);
        }
        s.trim_start_matches("bytes")
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .map(EvalMode::Bytes)
            .ok_or_else(|| HarnessError::InvalidArgument(format!("evaluation mode {s:?}")))
    }
}

/// The candidate text that gets scored for a selection.
pub fn candidate(doc: &Document, indices: &[usize], mode: EvalMode) -> Vec<Tokens> {
    let sentences: Vec<Tokens> = indices.iter().map(|&i| doc.sentences[i].clone()).collect();
    match mode {
        EvalMode::Full => sentences,
        EvalMode::Bytes(n) => truncate_bytes(&sentences, n),
    }
}

/// Corpus-mean ROUGE of the summaries chosen by `select`.
pub fn evaluate_with<F>(
    corpus: &[Document],
    mode: EvalMode,
    stem: bool,
    select: F,
) -> Result<RougeScore>
where
    F: Fn(&Document) -> Result<Vec<usize>> + Sync,
{
    check_highlights(corpus)?;
    let scores: Vec<RougeScore> = corpus
        .par_iter()
        .map(|doc| {
            let picked = select(doc)?;
            Ok(score_summary(
                &candidate(doc, &picked, mode),
                &doc.highlights,
                stem,
            ))
        })
        .collect::<Result<_>>()?;
    Ok(RougeScore::mean(&scores))
}

pub fn evaluate(
    checkpoint: &Checkpoint,
    corpus: &[Document],
    mode: EvalMode,
    stem: bool,
) -> Result<RougeScore> {
    evaluate_with(corpus, mode, stem, |doc| {
        summarize(doc, checkpoint, SUMMARY_SENTENCES)
    })
}

pub fn evaluate_lead(corpus: &[Document], mode: EvalMode, stem: bool) -> Result<RougeScore> {
    evaluate_with(corpus, mode, stem, |doc| {
        Ok(lead_baseline(doc.sentences.len(), SUMMARY_SENTENCES))
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub side: SideConfig,
    pub score: RougeScore,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub lead: RougeScore,
}

impl fmt::Display for AblationReport {
    /// Recall percentages with one decimal, one row per configuration.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<20} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6}",
            "Models", "R1", "R2", "R3", "R4", "RL", "Avg."
        )?;
        let row = |f: &mut fmt::Formatter<'_>, name: &str, s: &RougeScore| {
            write!(f, "{name:<20}")?;
            for v in s.values() {
                write!(f, " {:>6.1}", v * 100.0)?;
            }
            writeln!(f)
        };
        row(f, "LEAD", &self.lead)?;
        for r in &self.rows {
            row(f, &r.side.to_string(), &r.score)?;
        }
        Ok(())
    }
}

/// Trains one model per side-information set on the same data and seed,
/// reporting each one's best full-length validation scores.
pub fn ablation_run(
    train_docs: &[Document],
    validation: &[Document],
    vocab: &Vocabulary,
    base: &ModelConfig,
    side_sets: &[SideConfig],
    pretrained: Option<&Tensor>,
    options: &TrainOptions,
) -> Result<AblationReport> {
    if side_sets.is_empty() {
        return Err(HarnessError::InvalidArgument(
            "no side information sets given".into(),
        ));
    }
    if let Some(s) = side_sets.iter().find(|s| s.is_empty()) {
        return Err(HarnessError::InvalidArgument(format!(
            "empty side information set {s:?}; the model needs at least `title`"
        )));
    }
    let mut rows = Vec::with_capacity(side_sets.len());
    for &side in side_sets {
        info!("ablation: training with side information {side}");
        let config = ModelConfig {
            side,
            ..base.clone()
        };
        let outcome = train(
            train_docs,
            validation,
            vocab,
            &config,
            pretrained,
            options,
            |_| {},
        )?;
        let best = &outcome.log[outcome.best_epoch - 1];
        rows.push(AblationRow {
            side,
            score: best.validation,
            best_epoch: outcome.best_epoch,
        });
    }
    Ok(AblationReport {
        rows,
        lead: evaluate_lead(validation, EvalMode::Full, options.validation_stem)?,
    })
}
