use serde::{Deserialize, Serialize};

use super::{Result, SidenetError};
use crate::corpus::{Limits, SideConfig};
use crate::ndcore::LrnParams;

/// Architecture and input-shape settings for the summarizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embedding_dim: usize,
    pub kernel_widths: Vec<usize>,
    pub channels_per_width: usize,
    /// Hidden size of both the document encoder and the extractor LSTM.
    pub lstm_size: usize,
    /// Width of the output layer `V_h h + W h'` before the 2-way projection.
    pub output_hidden: usize,
    pub limits: Limits,
    pub side: SideConfig,
    /// Local response normalization after max pooling, per kernel width.
    pub lrn: Option<LrnParams>,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embedding_dim: 200,
            kernel_widths: (1..=7).collect(),
            channels_per_width: 50,
            lstm_size: 600,
            output_hidden: 600,
            limits: Limits::default(),
            side: SideConfig::TITLE_CAPTION,
            lrn: Some(LrnParams::default()),
            seed: 42,
        }
    }
}

impl ModelConfig {
    /// Size of a sentence embedding: one feature per kernel.
    pub fn sentence_dim(&self) -> usize {
        self.kernel_widths.len() * self.channels_per_width
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(SidenetError::Config(msg));
        let sizes = [
            ("embedding_dim", self.embedding_dim),
            ("channels_per_width", self.channels_per_width),
            ("lstm_size", self.lstm_size),
            ("output_hidden", self.output_hidden),
            ("sent_len", self.limits.sent_len),
            ("doc_len", self.limits.doc_len),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.kernel_widths.is_empty() {
            return bad("at least one kernel width is required".into());
        }
        if let Some(&w) = self
            .kernel_widths
            .iter()
            .find(|&&w| w == 0 || w > self.limits.sent_len)
        {
            return bad(format!(
                "kernel width {w} must be in 1..={}",
                self.limits.sent_len
            ));
        }
        let mut sorted = self.kernel_widths.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.kernel_widths.len() {
            return bad("kernel widths must be distinct".into());
        }
        if self.side.is_empty() {
            return bad("side information set is empty; use at least `title`".into());
        }
        Ok(())
    }
}
