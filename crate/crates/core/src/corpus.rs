//! Corpus ingestion: JSON-lines documents with side information, the
//! vocabulary, fixed-size id encoding, and pretrained embedding loading.
//!
//! One document per line:
//!
//! ```json
//! {"id":"d1","sentences":[["a","b"]],"title":["t"],"captions":[],"highlights":[["a"]],"labels":[1]}
//! ```
//!
//! Tokens arrive pre-tokenized; `labels` is optional and is filled in by the
//! oracle labeler.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ndcore::Tensor;

pub type Tokens = Vec<String>;

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
const PAD_TOKEN: &str = "<pad>";
const UNK_TOKEN: &str = "<unk>";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed JSON: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: schema error: {message}")]
    Schema { line: usize, message: String },
    #[error("line {line}: document {id:?}: {message}")]
    Invalid {
        line: usize,
        id: String,
        message: String,
    },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("embedding file line {line}: {message}")]
    Embedding { line: usize, message: String },
    #[error("embedding dimension mismatch: expected {expected}, file has {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

pub type Result<T> = std::result::Result<T, CorpusError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// A news article: body sentences plus title, image captions, and gold
/// highlights, optionally with per-sentence extraction labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub sentences: Vec<Tokens>,
    pub title: Tokens,
    pub captions: Vec<Tokens>,
    pub highlights: Vec<Tokens>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<u8>>,
}

impl Document {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.sentences.is_empty() {
            return Err("document has no sentences".into());
        }
        if self.title.is_empty() {
            return Err("document has an empty title".into());
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.sentences.len() {
                return Err(format!(
                    "{} labels for {} sentences",
                    labels.len(),
                    self.sentences.len()
                ));
            }
            if let Some(bad) = labels.iter().find(|&&l| l > 1) {
                return Err(format!("label {bad} is not 0 or 1"));
            }
        }
        Ok(())
    }

    /// All highlight tokens in bullet order.
    pub fn highlight_tokens(&self) -> Tokens {
        self.highlights.iter().flatten().cloned().collect()
    }
}

/// Parses one JSON line into a validated document.
pub fn parse_document(line: &str, line_no: usize) -> Result<Document> {
    let doc: Document = serde_json::from_str(line).map_err(|e| {
        let message = e.to_string();
        match e.classify() {
            serde_json::error::Category::Data => CorpusError::Schema {
                line: line_no,
                message,
            },
            _ => CorpusError::Malformed {
                line: line_no,
                message,
            },
        }
    })?;
    doc.validate().map_err(|message| CorpusError::Invalid {
        line: line_no,
        id: doc.id.clone(),
        message,
    })?;
    Ok(doc)
}

/// Reads a JSON-lines corpus, one document per non-blank line, in file order.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Document>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path).map_err(io_err(path))?);
    let mut docs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        docs.push(parse_document(&line, i + 1)?);
    }
    Ok(docs)
}

pub fn write_corpus(path: impl AsRef<Path>, docs: &[Document]) -> Result<()> {
    let path = path.as_ref();
    let mut out = BufWriter::new(File::create(path).map_err(io_err(path))?);
    for doc in docs {
        let line = serde_json::to_string(doc).expect("documents always serialize");
        writeln!(out, "{line}").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

/// Token/id mapping with `PAD = 0` and `UNK = 1` reserved.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl From<Vec<String>> for Vocabulary {
    /// Builds a vocabulary from its non-reserved tokens in id order.
    fn from(corpus_tokens: Vec<String>) -> Self {
        let mut tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        let mut index = HashMap::with_capacity(corpus_tokens.len());
        for tok in corpus_tokens {
            if index.contains_key(&tok) {
                continue;
            }
            index.insert(tok.clone(), tokens.len() as u32);
            tokens.push(tok);
        }
        Self { tokens, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens.into_iter().skip(2).collect()
    }
}

impl Vocabulary {
    /// Total size including the two reserved entries.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    /// Id of a corpus token, if it is in the vocabulary.
    pub fn get(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.get(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    /// Non-reserved tokens in id order.
    pub fn corpus_tokens(&self) -> &[String] {
        &self.tokens[2..]
    }
}

/// Counts tokens over body sentences, titles, and captions and keeps those
/// seen at least `min_count` times, ordered by descending frequency with
/// lexicographic tie-breaking.
pub fn build_vocabulary(corpus: &[Document], min_count: usize) -> Result<Vocabulary> {
    if min_count < 1 {
        return Err(CorpusError::InvalidArgument(
            "min_count must be at least 1".into(),
        ));
    }
    if corpus.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for doc in corpus {
        let rows = doc
            .sentences
            .iter()
            .chain(std::iter::once(&doc.title))
            .chain(&doc.captions);
        for tok in rows.flatten() {
            *counts.entry(tok.as_str()).or_default() += 1;
        }
    }
    let mut kept: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(_, c)| c >= min_count)
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Ok(Vocabulary::from(
        kept.into_iter()
            .map(|(t, _)| t.to_string())
            .collect::<Vec<_>>(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Limits {
    pub sent_len: usize,
    pub doc_len: usize,
    pub max_captions: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            sent_len: 100,
            doc_len: 126,
            max_captions: 10,
        }
    }
}

/// Which kinds of side information the extractor attends to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SideConfig {
    pub title: bool,
    pub caption: bool,
    /// The document's first sentence, duplicated as a side row.
    pub fs: bool,
}

impl SideConfig {
    pub const TITLE: Self = Self {
        title: true,
        caption: false,
        fs: false,
    };
    pub const TITLE_CAPTION: Self = Self {
        title: true,
        caption: true,
        fs: false,
    };

    pub fn is_empty(&self) -> bool {
        !(self.title || self.caption || self.fs)
    }

    /// Every non-empty combination, singletons first.
    pub fn all_combinations() -> Vec<SideConfig> {
        let s = |title, caption, fs| SideConfig { title, caption, fs };
        vec![
            s(true, false, false),
            s(false, true, false),
            s(false, false, true),
            s(true, true, false),
            s(true, false, true),
            s(false, true, true),
            s(true, true, true),
        ]
    }

    /// Number of side rows in an encoded document.
    pub fn side_len(&self, max_captions: usize) -> usize {
        1 + max_captions + usize::from(self.fs)
    }
}

impl Default for SideConfig {
    fn default() -> Self {
        Self::TITLE_CAPTION
    }
}

impl fmt::Display for SideConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = [
            (self.title, "title"),
            (self.caption, "caption"),
            (self.fs, "fs"),
        ]
        .into_iter()
        .filter_map(|(on, name)| on.then_some(name))
        .collect();
        write!(f, "{}", parts.join("+"))
    }
}

impl FromStr for SideConfig {
    type Err = CorpusError;

    /// Parses a comma- or plus-separated list such as `title,caption`.
    fn from_str(s: &str) -> Result<Self> {
        let mut out = SideConfig {
            title: false,
            caption: false,
            fs: false,
        };
        for part in s.split([',', '+']).map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "title" => out.title = true,
                "caption" | "captions" => out.caption = true,
                "fs" => out.fs = true,
                other => {
                    return Err(CorpusError::InvalidArgument(format!(
                        "unknown side information {other:?} (expected title, caption, fs)"
                    )))
                }
            }
        }
        if out.is_empty() {
            return Err(CorpusError::InvalidArgument(
                "side information set is empty; use at least `title`".into(),
            ));
        }
        Ok(out)
    }
}

/// Padded id matrices ready for the model.
///
/// Side rows are laid out as `[title; captions...; fs]`, with the `fs` row
/// present only when enabled. A row whose mask is false is entirely `PAD`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedDocument {
    pub sentence_ids: Vec<Vec<u32>>,
    pub sentence_mask: Vec<bool>,
    pub side_ids: Vec<Vec<u32>>,
    pub side_mask: Vec<bool>,
    /// Per-row labels, zero on masked rows; `None` for unlabeled documents.
    pub labels: Option<Vec<u8>>,
}

impl EncodedDocument {
    pub fn num_sentences(&self) -> usize {
        self.sentence_mask.iter().filter(|&&m| m).count()
    }

    /// Recovers the (truncated) body sentences, with unknown words as `<unk>`.
    pub fn decode(&self, vocab: &Vocabulary) -> Vec<Tokens> {
        self.sentence_ids
            .iter()
            .zip(&self.sentence_mask)
            .filter(|(_, &m)| m)
            .map(|(row, _)| {
                let end = row.iter().rposition(|&id| id != PAD).map_or(0, |p| p + 1);
                row[..end]
                    .iter()
                    .map(|&id| vocab.token(id).to_string())
                    .collect()
            })
            .collect()
    }
}

fn encode_row(tokens: &[String], vocab: &Vocabulary, sent_len: usize) -> Vec<u32> {
    let mut row = vec![PAD; sent_len];
    for (slot, tok) in row.iter_mut().zip(tokens) {
        *slot = vocab.id(tok);
    }
    row
}

/// Encodes a document into fixed-size id matrices.
///
/// Sentences past `doc_len` and tokens past `sent_len` are dropped; only the
/// first `max_captions` captions are kept.
pub fn encode_document(
    doc: &Document,
    vocab: &Vocabulary,
    limits: Limits,
    side: SideConfig,
) -> EncodedDocument {
    let n = doc.sentences.len().min(limits.doc_len);
    let mut sentence_ids = Vec::with_capacity(limits.doc_len);
    let mut sentence_mask = Vec::with_capacity(limits.doc_len);
    for i in 0..limits.doc_len {
        if i < n {
            sentence_ids.push(encode_row(&doc.sentences[i], vocab, limits.sent_len));
            sentence_mask.push(true);
        } else {
            sentence_ids.push(vec![PAD; limits.sent_len]);
            sentence_mask.push(false);
        }
    }
    let labels = doc.labels.as_ref().map(|labels| {
        (0..limits.doc_len)
            .map(|i| if i < n { labels[i] } else { 0 })
            .collect()
    });

    let side_len = side.side_len(limits.max_captions);
    let mut side_ids = Vec::with_capacity(side_len);
    let mut side_mask = Vec::with_capacity(side_len);
    let mut push_side = |tokens: Option<&Tokens>| match tokens {
        Some(t) if !t.is_empty() => {
            side_ids.push(encode_row(t, vocab, limits.sent_len));
            side_mask.push(true);
        }
        _ => {
            side_ids.push(vec![PAD; limits.sent_len]);
            side_mask.push(false);
        }
    };
    push_side(side.title.then_some(&doc.title));
    for j in 0..limits.max_captions {
        push_side(doc.captions.get(j).filter(|_| side.caption));
    }
    if side.fs {
        push_side(doc.sentences.first());
    }

    EncodedDocument {
        sentence_ids,
        sentence_mask,
        side_ids,
        side_mask,
        labels,
    }
}

/// Builds a `[vocab.len() x dim]` embedding matrix from a word-vector file.
///
/// The file starts with a `<count> <dim>` header followed by one
/// `token v1 ... v_dim` line per word. Reserved rows and words missing from
/// the file stay zero.
pub fn load_pretrained_embeddings(
    path: impl AsRef<Path>,
    vocab: &Vocabulary,
    dim: usize,
) -> Result<Tensor> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path).map_err(io_err(path))?);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or(CorpusError::Embedding {
            line: 1,
            message: "missing header".into(),
        })?
        .map_err(io_err(path))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let file_dim = match fields.as_slice() {
        [_, d] => d.parse::<usize>().map_err(|e| CorpusError::Embedding {
            line: 1,
            message: format!("bad dimension {d:?}: {e}"),
        })?,
        _ => {
            return Err(CorpusError::Embedding {
                line: 1,
                message: format!("expected `<count> <dim>`, got {header:?}"),
            })
        }
    };
    if file_dim != dim {
        return Err(CorpusError::DimensionMismatch {
            expected: dim,
            found: file_dim,
        });
    }

    let mut matrix = Tensor::zeros(&[vocab.len(), dim]);
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line.map_err(io_err(path))?;
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let values = parts
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| CorpusError::Embedding {
                line: line_no,
                message: e.to_string(),
            })?;
        if values.len() != dim {
            return Err(CorpusError::Embedding {
                line: line_no,
                message: format!("{} values for dimension {dim}", values.len()),
            });
        }
        if let Some(id) = vocab.get(token) {
            matrix.row_mut(id as usize).copy_from_slice(&values);
        }
    }
    Ok(matrix)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Tokens {
        s.split_whitespace().map(String::from).collect()
    }

    fn doc(sentences: &[&str], captions: &[&str]) -> Document {
        Document {
            id: "d".into(),
            sentences: sentences.iter().map(|s| toks(s)).collect(),
            title: toks("the title"),
            captions: captions.iter().map(|s| toks(s)).collect(),
            highlights: vec![toks("a")],
            labels: None,
        }
    }

    #[test]
    fn parses_minimal_record() {
        let d = parse_document(
            r#"{"id":"d1","sentences":[["a"]],"title":["t"],"captions":[],"highlights":[["a"]]}"#,
            1,
        )
        .unwrap();
        assert_eq!(d.sentences.len(), 1);
        assert!(d.captions.is_empty());
        assert!(d.labels.is_none());
    }

    #[test]
    fn missing_title_is_schema_error() {
        let err = parse_document(
            r#"{"id":"d1","sentences":[["a"]],"captions":[],"highlights":[["a"]]}"#,
            4,
        )
        .unwrap_err();
        assert!(matches!(err, CorpusError::Schema { line: 4, .. }), "{err}");
    }

    #[test]
    fn malformed_json_carries_line() {
        let err = parse_document(r#"{"id": "#, 7).unwrap_err();
        assert!(
            matches!(err, CorpusError::Malformed { line: 7, .. }),
            "{err}"
        );
    }

    #[test]
    fn invariant_violations_are_rejected() {
        let bad_labels = r#"{"id":"d","sentences":[["a"],["b"]],"title":["t"],"captions":[],"highlights":[["a"]],"labels":[1]}"#;
        assert!(matches!(
            parse_document(bad_labels, 1),
            Err(CorpusError::Invalid { .. })
        ));
        let bad_value = r#"{"id":"d","sentences":[["a"]],"title":["t"],"captions":[],"highlights":[["a"]],"labels":[2]}"#;
        assert!(parse_document(bad_value, 1).is_err());
        let empty_title =
            r#"{"id":"d","sentences":[["a"]],"title":[],"captions":[],"highlights":[["a"]]}"#;
        assert!(parse_document(empty_title, 1).is_err());
        let no_sentences =
            r#"{"id":"d","sentences":[],"title":["t"],"captions":[],"highlights":[["a"]]}"#;
        assert!(parse_document(no_sentences, 1).is_err());
    }

    #[test]
    fn load_preserves_order_and_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let docs: Vec<Document> = ["x", "y", "z"]
            .iter()
            .map(|id| Document {
                id: id.to_string(),
                ..doc(&["a b"], &[])
            })
            .collect();
        write_corpus(&path, &docs).unwrap();
        let loaded = load_corpus(&path).unwrap();
        assert_eq!(loaded, docs);
    }

    #[test]
    fn vocabulary_threshold_and_order() {
        let d = doc(&["a a b", "a"], &[]);
        let v = build_vocabulary(std::slice::from_ref(&d), 2).unwrap();
        assert!(v.get("a").is_some());
        assert_eq!(v.id("b"), UNK);
        assert!(v.id("a") >= 2);
        assert_eq!(build_vocabulary(std::slice::from_ref(&d), 2).unwrap(), v);

        let d = doc(&["y x y x"], &[]);
        let v = build_vocabulary(&[d], 1).unwrap();
        // "the" and "title" occur once; x and y twice
        assert_eq!(v.corpus_tokens(), &["x", "y", "the", "title"]);
    }

    #[test]
    fn vocabulary_rejects_bad_input() {
        assert!(matches!(
            build_vocabulary(&[], 1),
            Err(CorpusError::EmptyCorpus)
        ));
        assert!(build_vocabulary(&[doc(&["a"], &[])], 0).is_err());
    }

    #[test]
    fn reserved_tokens_do_not_collide() {
        let v = build_vocabulary(&[doc(&["<pad> <unk> w"], &[])], 1).unwrap();
        assert!(v.id("<pad>") >= 2);
        assert!(v.id("<unk>") >= 2);
        assert_eq!(v.token(PAD), "<pad>");
    }

    #[test]
    fn encoding_masks_and_caption_overflow() {
        let captions: Vec<String> = (0..14).map(|i| format!("cap{i}")).collect();
        let caption_refs: Vec<&str> = captions.iter().map(String::as_str).collect();
        let d = doc(&["a b", "c"], &caption_refs);
        let v = build_vocabulary(std::slice::from_ref(&d), 1).unwrap();
        let e = encode_document(&d, &v, Limits::default(), SideConfig::TITLE_CAPTION);
        assert_eq!(e.sentence_ids.len(), 126);
        assert!(e.sentence_ids.iter().all(|r| r.len() == 100));
        assert_eq!(e.sentence_mask.iter().filter(|&&m| m).count(), 2);
        assert_eq!(e.side_ids.len(), 11);
        assert_eq!(e.side_mask.iter().filter(|&&m| m).count(), 11);
        for j in 0..10 {
            assert_eq!(e.side_ids[1 + j][0], v.id(&format!("cap{j}")));
        }

        let e = encode_document(&d, &v, Limits::default(), SideConfig::TITLE);
        assert_eq!(e.side_mask.iter().filter(|&&m| m).count(), 1);
        assert!(e.side_ids[1..].iter().all(|r| r.iter().all(|&x| x == PAD)));
    }

    #[test]
    fn fs_row_duplicates_first_sentence() {
        let d = doc(&["first one", "second"], &["c"]);
        let v = build_vocabulary(std::slice::from_ref(&d), 1).unwrap();
        let side = SideConfig {
            title: false,
            caption: false,
            fs: true,
        };
        let limits = Limits {
            sent_len: 4,
            doc_len: 3,
            max_captions: 2,
        };
        let e = encode_document(&d, &v, limits, side);
        assert_eq!(e.side_mask, vec![false, false, false, true]);
        assert_eq!(e.side_ids[3], e.sentence_ids[0]);
        assert_eq!(e.num_sentences(), 2);
    }

    #[test]
    fn truncation_and_labels() {
        let mut d = doc(&["a b c d e", "f", "g"], &[]);
        d.labels = Some(vec![1, 0, 1]);
        let v = build_vocabulary(&[d.clone()], 1).unwrap();
        let limits = Limits {
            sent_len: 3,
            doc_len: 2,
            max_captions: 1,
        };
        let e = encode_document(&d, &v, limits, SideConfig::TITLE);
        assert_eq!(e.decode(&v), vec![toks("a b c"), toks("f")]);
        assert_eq!(e.labels, Some(vec![1, 0]));
    }

    #[test]
    fn side_config_parsing() {
        let s: SideConfig = "title,caption".parse().unwrap();
        assert_eq!(s, SideConfig::TITLE_CAPTION);
        assert_eq!(s.to_string(), "title+caption");
        assert!("".parse::<SideConfig>().is_err());
        assert!("body".parse::<SideConfig>().is_err());
        assert_eq!(SideConfig::all_combinations().len(), 7);
    }

    #[test]
    fn embeddings_loading() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.txt");
        std::fs::write(&path, "3 2\nalpha 0.5 -1\nbeta 2 3\nzzz 9 9\n").unwrap();
        let d = doc(&["alpha gamma beta"], &[]);
        let v = build_vocabulary(&[d], 1).unwrap();
        let m = load_pretrained_embeddings(&path, &v, 2).unwrap();
        assert_eq!(m.shape(), &[v.len(), 2]);
        assert_eq!(m.row(v.id("alpha") as usize), &[0.5, -1.0]);
        assert_eq!(m.row(v.id("beta") as usize), &[2.0, 3.0]);
        assert_eq!(m.row(v.id("gamma") as usize), &[0.0, 0.0]);
        assert_eq!(m.row(PAD as usize), &[0.0, 0.0]);
        assert_eq!(m.row(UNK as usize), &[0.0, 0.0]);

        assert!(matches!(
            load_pretrained_embeddings(&path, &v, 200),
            Err(CorpusError::DimensionMismatch {
                expected: 200,
                found: 2
            })
        ));
        assert!(load_pretrained_embeddings(dir.path().join("nope"), &v, 2).is_err());
        std::fs::write(&path, "1 2\nalpha 0.5\n").unwrap();
        assert!(load_pretrained_embeddings(&path, &v, 2).is_err());
    }

    fn arb_doc() -> impl Strategy<Value = Document> {
        let word = "[a-e]{1,2}";
        let sentence = prop::collection::vec(word, 0..8);
        (
            prop::collection::vec(sentence.clone(), 1..9),
            prop::collection::vec(word, 1..4),
            prop::collection::vec(prop::collection::vec(word, 1..4), 0..5),
        )
            .prop_map(|(sentences, title, captions)| Document {
                id: "p".into(),
                sentences,
                title,
                captions,
                highlights: vec![vec!["a".into()]],
                labels: None,
            })
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(d in arb_doc(), sent_len in 1usize..6, doc_len in 1usize..6) {
            let v = build_vocabulary(std::slice::from_ref(&d), 1).unwrap();
            let limits = Limits { sent_len, doc_len, max_captions: 3 };
            let side = SideConfig { title: true, caption: true, fs: true };
            let e = encode_document(&d, &v, limits, side);
            let expected: Vec<Tokens> = d.sentences.iter().take(doc_len)
                .map(|s| s.iter().take(sent_len).cloned().collect())
                .collect();
            prop_assert_eq!(e.decode(&v), expected);
            for (row, &m) in e.sentence_ids.iter().zip(&e.sentence_mask).chain(e.side_ids.iter().zip(&e.side_mask)) {
                prop_assert_eq!(row.len(), sent_len);
                if !m {
                    prop_assert!(row.iter().all(|&x| x == PAD));
                }
            }
            prop_assert_eq!(encode_document(&d, &v, limits, side), e);
        }
    }
}
