//! Model assembly, the two training stages, checkpoints, forecasting and
//! evaluation.
//!
//! Stage one trains the seasonal weight predictor and the trend tokenizer
//! together on the joint objective. Stage two freezes both and trains the
//! token predictor on tokenized windows. Validation in stage one uses the
//! true future tokens (the same graph as training).

mod checkpoint;
mod config;
mod eval;
mod model;
mod train;

pub use checkpoint::{read_header, CheckpointHeader, ParamEntry, MAGIC, VERSION};
pub use config::{ModelConfig, Stage, TrainConfig, Variant};
pub use eval::{evaluate, history_rcr, horizon_metrics, repeat_last, EvalOptions};
pub use model::{DomainInfo, Forecast, JointGraph, LossTerms, OneCast, PreparedWindow, StageSummary, TrainingMetadata};
pub use train::{
    round_robin_batches, select_best, tokenize_windows, train_predictor, train_stage1, train_stage2, DomainData, StepRecord,
    TrainReport,
};
