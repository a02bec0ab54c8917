//! Training, evaluation, profiling, checkpoints and plots.

pub mod adam;
pub mod alloc;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod eval;
pub mod plot;
pub mod profile;
pub mod train;

pub use adam::{adam_step, Adam};
pub use checkpoint::Checkpoint;
pub use config::TrainConfig;
pub use dataset::{Dataset, Sample};
pub use eval::{evaluate, read_jsonl, write_jsonl, EvalRecord};
pub use profile::{profile, ProfileConfig, ProfileRow};
pub use train::{batch_gradients, mean_sim_loss, train, train_from, EpochRecord, TrainOutcome};
