//! Sliding-window channel forecasting trained online with experience
//! replay.

mod checkpoint;
mod predictor;
mod replay;
mod runner;

pub use predictor::{
    mixed_loss, mixed_loss_grad, predictor_update, sample_batch, Batch, BatchItem, EntryMeta,
    MixedLoss, PredictionWindow, PredictorConfig, PredictorKind, PredictorModel, ReplayEntry,
    Source, UpdateReport,
};
pub use replay::{InsertOutcome, ReplayBuffer, ReplayMode, Scored};
pub use runner::{
    run_continual, script_slots, write_metrics_csv, ContinualConfig, ContinualLearner,
    ContinualMode, ContinualRun, ContinualSlot, MetricsRow, SlotOutcome,
};
