//! Optimization: loss, learning-rate schedules, AdamW and the training loop.

pub mod adamw;
pub mod early_stop;
pub mod fit;
pub mod loss;
pub mod schedule;

pub use adamw::{adamw_step, AdamHyper, AdamState};
pub use early_stop::{EarlyStopping, StopDecision};
pub use fit::{fit, loss_and_accuracy, read_records, write_records, EpochRecord, FitOutcome, LabeledImages, TrainConfig};
pub use loss::{smoothed_cross_entropy, smoothed_cross_entropy_backward, smoothed_targets};
pub use schedule::{cosine_lr, step_lr, Schedule};
