//! Alternating generator / discriminator optimization with a replay history,
//! a softness schedule, Adam, metric logging and resumable checkpoints.

mod adam;
mod config;
mod history;
mod run;
mod state;

pub use adam::{Adam, AdamParams};
pub use config::{derive_seed, TrainConfig};
pub use history::{HistoryBuffer, HistoryItem, RngState};
pub use run::{
    epoch_order, metrics_header, periodic_checkpoint_name, read_metrics, run_training, steps_per_epoch, RunPaths,
    StepRecord,
};
pub use state::{load_generator, Batch, Direction, GeneratorStep, TrainState};
