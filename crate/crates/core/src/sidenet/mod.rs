//! The extractive summarizer.
//!
//! A convolutional encoder turns every sentence, title and caption into a
//! fixed-size vector. An LSTM reads the body sentences last to first, and a
//! second LSTM, started from the first one's final state, then reads them in
//! order and labels each one, attending over the side information at every
//! step.

mod checkpoint;
mod config;
mod model;
mod params;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC};
pub use config::ModelConfig;
pub use model::{
    attend_side, batch_loss_and_grads, encode_document, encode_sentence, extract_probs,
    generate_summary, loss, loss_and_grads, DocumentStates, Extraction,
};
pub use params::{init_params, ConvBank, LstmParams, ModelParams, ParamGrads};

use thiserror::Error;

use crate::ndcore::NdError;

#[derive(Debug, Error)]
pub enum SidenetError {
    #[error(transparent)]
    Numeric(#[from] NdError),
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("document has no labels; run `sidesum label` first")]
    MissingLabels,
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, SidenetError>;
