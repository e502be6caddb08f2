//! Deep JSCC encoder/decoder: residual stages with optional channel-aware
//! attention, power-normalized complex symbols, and checkpoints.

mod blocks;
mod config;
mod model;

pub use blocks::{AnyConv, Attention, ResidualBlock, Stage};
pub use config::{
    layer_plan, parameter_report, ArchitectureConfig, AttentionConfig, ChannelContext, ParameterReport, Part, Range,
};
pub use model::{Decoder, Encoder, EndToEnd, JsccModel, ModelKind, TrainingMetadata};

use thiserror::Error;

use crate::channel::ChannelError;
use crate::nn::NnError;

#[derive(Debug, Error)]
pub enum JsccError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("adaptive model needs a channel context")]
    MissingContext,
    #[error("invalid input: {0}")]
    Input(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
}
