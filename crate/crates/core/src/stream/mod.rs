//! Online class-incremental training: replay memory, the per-batch training
//! step, the task loop and its accuracy summaries.

mod metrics;
mod replay;
mod run;
mod train;

pub use metrics::{average_accuracy, average_forgetting, incremental_curve};
pub use replay::ReplayBuffer;
pub use run::{
    evaluate, run_stream, Access, RunLedger, RunOutput, StepRecord, StreamSetup, TaskSchedule,
};
pub use train::{objective, Exemplar, InferenceRule, Learner, Objective, StepLosses, TrainConfig};
