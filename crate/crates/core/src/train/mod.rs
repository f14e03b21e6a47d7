//! Optimization, inference and the timing harness.

mod infer;
mod optim;
mod schedule;
mod trainer;

pub use infer::{argmax_labels, benchmark, evaluate_model, infer, BenchReport, BenchRow, Prediction};
pub use optim::{OptimState, ADAM_EPS, BETA1, BETA2};
pub use schedule::{Phase, TrainSchedule};
pub use trainer::{clip_step, log_line, StepLosses, TrainOutcome, Trainer};
