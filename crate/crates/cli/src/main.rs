use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use sidesum::corpus::{
    build_vocabulary, load_corpus, load_pretrained_embeddings, write_corpus, Document, Limits,
    SideConfig, Tokens, Vocabulary,
};
use sidesum::harness::{
    ablation_run, evaluate, evaluate_lead, summarize, train, EvalMode, TrainOptions,
    SUMMARY_SENTENCES,
};
use sidesum::ndcore::{LrnParams, Tensor};
use sidesum::oracle::{label_corpus, ScorerConfig};
use sidesum::rouge::{score_summary, RougeScore};
use sidesum::sidenet::{Checkpoint, ModelConfig};

/// Extractive news summarization with side information.
#[derive(Parser)]
#[command(name = "sidesum", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a corpus and write its vocabulary.
    Prep(PrepArgs),
    /// Attach greedy ROUGE labels to every document.
    Label(LabelArgs),
    /// Train a model, keeping the epoch with the best validation ROUGE.
    Train(TrainArgs),
    /// Score a model (or the LEAD baseline) against gold highlights.
    Evaluate(EvaluateArgs),
    /// Print the sentences a model selects for each document.
    Summarize(SummarizeArgs),
    /// Score a candidate summary file against a reference file.
    Rouge(RougeArgs),
    /// Train one model per side-information set and print a comparison table.
    Ablation(AblationArgs),
}

#[derive(Args)]
struct PrepArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Vocabulary output (JSON list of tokens).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    min_count: usize,
}

#[derive(Args)]
struct LabelArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Stem words before matching against the highlights.
    #[arg(long)]
    stem: bool,
    #[arg(long, default_value_t = 3)]
    max_sentences: usize,
}

#[derive(Args, Clone)]
struct ModelArgs {
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Side information to attend over, e.g. `title,caption,fs`.
    #[arg(long, default_value = "title,caption")]
    side: String,
    #[arg(long, default_value_t = 10)]
    max_captions: usize,
    #[arg(long, default_value_t = 126)]
    doc_len: usize,
    #[arg(long, default_value_t = 100)]
    sent_len: usize,
    #[arg(long, default_value_t = 200)]
    embedding_dim: usize,
    /// Comma-separated convolution widths.
    #[arg(long, default_value = "1,2,3,4,5,6,7")]
    kernel_widths: String,
    #[arg(long, default_value_t = 50)]
    channels: usize,
    #[arg(long, default_value_t = 600)]
    lstm_size: usize,
    #[arg(long, default_value_t = 600)]
    output_hidden: usize,
    /// Skip local response normalization of sentence features.
    #[arg(long)]
    no_lrn: bool,
}

impl ModelArgs {
    fn config(&self) -> Result<ModelConfig> {
        let kernel_widths = self
            .kernel_widths
            .split(',')
            .map(|w| w.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .context("--kernel-widths must be a comma-separated list of integers")?;
        let config = ModelConfig {
            embedding_dim: self.embedding_dim,
            kernel_widths,
            channels_per_width: self.channels,
            lstm_size: self.lstm_size,
            output_hidden: self.output_hidden,
            limits: Limits {
                sent_len: self.sent_len,
                doc_len: self.doc_len,
                max_captions: self.max_captions,
            },
            side: self.side.parse()?,
            lrn: (!self.no_lrn).then(LrnParams::default),
            seed: self.seed,
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args)]
struct TrainingData {
    /// Labeled training corpus.
    #[arg(long)]
    corpus: PathBuf,
    /// Validation corpus used for model selection.
    #[arg(long)]
    validation: PathBuf,
    /// Vocabulary from `prep`; built from the training corpus when omitted.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    min_count: usize,
    /// Word vectors in text format (`count dim` header, then `word v1 ... vd`).
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    batch: usize,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    /// Stem words when scoring validation summaries.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    validation_stem: bool,
}

struct Loaded {
    train: Vec<Document>,
    validation: Vec<Document>,
    vocab: Vocabulary,
    embeddings: Option<Tensor>,
    options: TrainOptions,
}

impl TrainingData {
    fn load(&self, embedding_dim: usize) -> Result<Loaded> {
        let train = load_corpus(&self.corpus)?;
        let validation = load_corpus(&self.validation)?;
        let vocab = match &self.vocab {
            Some(path) => read_vocab(path)?,
            None => build_vocabulary(&train, self.min_count)?,
        };
        info!(
            "{} training and {} validation documents, vocabulary of {}",
            train.len(),
            validation.len(),
            vocab.len()
        );
        let embeddings = self
            .embeddings
            .as_ref()
            .map(|p| load_pretrained_embeddings(p, &vocab, embedding_dim))
            .transpose()?;
        Ok(Loaded {
            train,
            validation,
            vocab,
            embeddings,
            options: TrainOptions {
                batch_size: self.batch,
                epochs: self.epochs,
                lr: self.lr,
                validation_stem: self.validation_stem,
            },
        })
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: TrainingData,
    #[command(flatten)]
    model: ModelArgs,
    /// Checkpoint output.
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch metrics (JSON lines); defaults to `<out>.metrics.jsonl`.
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Model checkpoint; required unless `--lead` is given.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Score the first three sentences instead of a model.
    #[arg(long)]
    lead: bool,
    /// Truncate each summary to this many bytes.
    #[arg(long)]
    bytes: Option<usize>,
    #[arg(long)]
    stem: bool,
    /// Write the scores as JSON to this file as well.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SummarizeArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Only summarize the document with this id.
    #[arg(long)]
    id: Option<String>,
    #[arg(short, long, default_value_t = SUMMARY_SENTENCES)]
    m: usize,
}

#[derive(Args)]
struct RougeArgs {
    /// One sentence per line, tokens separated by whitespace.
    #[arg(long)]
    candidate: PathBuf,
    #[arg(long)]
    reference: PathBuf,
    #[arg(long)]
    stem: bool,
    #[arg(long)]
    bytes: Option<usize>,
}

#[derive(Args)]
struct AblationArgs {
    #[command(flatten)]
    data: TrainingData,
    #[command(flatten)]
    model: ModelArgs,
    /// Side-information sets separated by `;`, e.g. `title;title,caption`.
    /// Defaults to every combination.
    #[arg(long)]
    sides: Option<String>,
    /// Also write the table to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read_vocab(path: &Path) -> Result<Vocabulary> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing vocabulary {}", path.display()))
}

fn read_sentences(path: &Path) -> Result<Vec<Tokens>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text
        .lines()
        .map(|l| l.split_whitespace().map(String::from).collect::<Tokens>())
        .filter(|t| !t.is_empty())
        .collect())
}

fn mode(bytes: Option<usize>) -> Result<EvalMode> {
    match bytes {
        None => Ok(EvalMode::Full),
        Some(0) => bail!("--bytes must be positive"),
        Some(n) => Ok(EvalMode::Bytes(n)),
    }
}

fn print_scores(scores: &RougeScore) {
    let names = [
        "ROUGE-1", "ROUGE-2", "ROUGE-3", "ROUGE-4", "ROUGE-L", "Average",
    ];
    for (name, v) in names.iter().zip(scores.values()) {
        println!("{name:<8} {v:.4}");
    }
}

fn run_prep(args: PrepArgs) -> Result<()> {
    let docs = load_corpus(&args.corpus)?;
    let vocab = build_vocabulary(&docs, args.min_count)?;
    fs::write(&args.out, serde_json::to_string(&vocab)?)
        .with_context(|| format!("writing {}", args.out.display()))?;
    let labeled = docs.iter().filter(|d| d.labels.is_some()).count();
    println!(
        "{} documents ({} labeled), vocabulary of {} tokens written to {}",
        docs.len(),
        labeled,
        vocab.len(),
        args.out.display()
    );
    Ok(())
}

fn run_label(args: LabelArgs) -> Result<()> {
    let docs = load_corpus(&args.corpus)?;
    let config = ScorerConfig {
        stem: args.stem,
        ..ScorerConfig::default()
    };
    let labeled = label_corpus(&docs, &config, args.max_sentences)?;
    write_corpus(&args.out, &labeled)?;
    let positives: usize = labeled
        .iter()
        .map(|d| {
            d.labels
                .as_ref()
                .map_or(0, |l| l.iter().filter(|&&x| x == 1).count())
        })
        .sum();
    println!(
        "labeled {} documents ({} positive sentences) into {}",
        labeled.len(),
        positives,
        args.out.display()
    );
    Ok(())
}

fn run_train(args: TrainArgs) -> Result<()> {
    let config = args.model.config()?;
    let data = args.data.load(config.embedding_dim)?;
    let metrics_path = args
        .metrics
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.metrics.jsonl", args.out.display())));
    let mut metrics = BufWriter::new(
        File::create(&metrics_path)
            .with_context(|| format!("creating {}", metrics_path.display()))?,
    );
    let mut write_err = None;
    let outcome = train(
        &data.train,
        &data.validation,
        &data.vocab,
        &config,
        data.embeddings.as_ref(),
        &data.options,
        |record| {
            let line = serde_json::to_string(record).expect("record serializes");
            if let Err(e) = writeln!(metrics, "{line}").and_then(|_| metrics.flush()) {
                write_err.get_or_insert(e);
            }
            println!(
                "epoch {:>3}  loss {:.6}  validation avg {:.4}",
                record.epoch, record.train_loss, record.validation.avg
            );
        },
    )?;
    if let Some(e) = write_err {
        return Err(e).with_context(|| format!("writing {}", metrics_path.display()));
    }
    outcome.best.save(&args.out)?;
    println!(
        "best epoch {} written to {} (metrics in {})",
        outcome.best_epoch,
        args.out.display(),
        metrics_path.display()
    );
    Ok(())
}

fn run_evaluate(args: EvaluateArgs) -> Result<()> {
    let docs = load_corpus(&args.corpus)?;
    let mode = mode(args.bytes)?;
    let scores = match (&args.checkpoint, args.lead) {
        (_, true) => evaluate_lead(&docs, mode, args.stem)?,
        (Some(path), false) => evaluate(&Checkpoint::load(path)?, &docs, mode, args.stem)?,
        (None, false) => bail!("give --checkpoint, or --lead for the baseline"),
    };
    println!("{} documents, {mode} summaries", docs.len());
    print_scores(&scores);
    if let Some(out) = args.out {
        fs::write(&out, serde_json::to_string_pretty(&scores)?)
            .with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

fn run_summarize(args: SummarizeArgs) -> Result<()> {
    let checkpoint = Checkpoint::load(&args.checkpoint)?;
    let docs = load_corpus(&args.corpus)?;
    let selected: Vec<&Document> = docs
        .iter()
        .filter(|d| args.id.as_ref().is_none_or(|id| &d.id == id))
        .collect();
    if selected.is_empty() {
        bail!("no document matches {:?}", args.id.unwrap_or_default());
    }
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for (k, doc) in selected.iter().enumerate() {
        if k > 0 {
            writeln!(out)?;
        }
        if selected.len() > 1 {
            writeln!(out, "# {}", doc.id)?;
        }
        for i in summarize(doc, &checkpoint, args.m)? {
            writeln!(out, "{i}\t{}", doc.sentences[i].join(" "))?;
        }
    }
    Ok(())
}

fn run_rouge(args: RougeArgs) -> Result<()> {
    let mut candidate = read_sentences(&args.candidate)?;
    let reference = read_sentences(&args.reference)?;
    if let EvalMode::Bytes(n) = mode(args.bytes)? {
        candidate = sidesum::rouge::truncate_bytes(&candidate, n);
    }
    print_scores(&score_summary(&candidate, &reference, args.stem));
    Ok(())
}

fn run_ablation(args: AblationArgs) -> Result<()> {
    let base = args.model.config()?;
    let data = args.data.load(base.embedding_dim)?;
    let sides: Vec<SideConfig> = match &args.sides {
        None => SideConfig::all_combinations(),
        Some(list) => list
            .split(';')
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()?,
    };
    let report = ablation_run(
        &data.train,
        &data.validation,
        &data.vocab,
        &base,
        &sides,
        data.embeddings.as_ref(),
        &data.options,
    )?;
    print!("{report}");
    if let Some(out) = args.out {
        fs::write(&out, report.to_string())
            .with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Prep(a) => run_prep(a),
        Command::Label(a) => run_label(a),
        Command::Train(a) => run_train(a),
        Command::Evaluate(a) => run_evaluate(a),
        Command::Summarize(a) => run_summarize(a),
        Command::Rouge(a) => run_rouge(a),
        Command::Ablation(a) => run_ablation(a),
    }
}
