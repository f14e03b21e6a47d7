//! Single-shot actor-action detection in video: a small tensor and
//! autodiff core, 3D layers, the three-branch network, its losses and
//! metrics, a synthetic clip generator and the training loop.

pub mod autodiff;
pub mod config;
pub mod data;
pub mod error;
pub mod layers;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod tensor;
pub mod train;

pub use autodiff::{Tape, TapeStats, Var};
pub use config::RunConfig;
pub use data::{ClipRecord, Dataset, SynthConfig};
pub use error::{Error, Result};
pub use losses::LossWeights;
pub use metrics::{evaluate, MetricOptions, MetricReport, Task};
pub use network::{NetworkConfig, Ssa2d};
pub use tensor::{Scalar, Tensor};
pub use train::{infer, TrainSchedule, Trainer};
