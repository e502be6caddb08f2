//! Datasets, training, evaluation and experiment sweeps.

mod config;
mod dataset;
mod experiment;
mod metrics;
mod sweep;

pub use config::{DataSource, EvalOptions, ExperimentConfig, ExperimentPlan, TrainOptions};
pub use dataset::{
    adjacent_correlation, assign_splits, generate_synthetic, load_manifest, resample_bicubic, write_atomic, BandEntry,
    DType, Dataset, Manifest, Provenance, RawTensor, SampleEntry, Split, SynthParams,
};
pub use experiment::{autoencoder_mse, evaluate, train, Condition, EpochLog, EvalOutcome, TrainLog};
pub use metrics::{mse, psnr, psnr_from_mse, read_csv, read_results, rows_to_csv, write_results, ResultRow, MAX_PIXEL};
pub use sweep::{
    aggregate, comparison_rows, load_dataset, mismatch, read_comparison, report, sweep, AggregateRow, ComparisonRow,
    GapRow, ModelSpec, Session, SweepOutput, MISMATCH_PAIRS,
};

use crate::channel::ChannelError;
use crate::fading::FadingError;
use crate::jscc::JsccError;
use crate::nn::NnError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("band file {file}: {msg}")]
    Band { file: String, msg: String },
    #[error("band file {file}, band {band}: value {value} at index {index} outside [0, {max}]")]
    Range { file: String, band: usize, index: usize, value: f64, max: f64 },
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("toml: {0}")]
    TomlDe(#[from] toml::de::Error),
    #[error("toml: {0}")]
    TomlSer(#[from] toml::ser::Error),
    #[error(transparent)]
    Jscc(#[from] JsccError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Fading(#[from] FadingError),
    #[error(transparent)]
    Nn(#[from] NnError),
}
