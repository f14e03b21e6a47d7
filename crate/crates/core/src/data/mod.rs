//! Clip storage and the synthetic clip generator.

pub mod container;
pub mod dataset;
pub mod synth;

pub use container::{read_container, write_container, NamedTensor};
pub use dataset::{generate_dataset, Dataset};
pub use synth::{generate_clip, ClipRecord, SynthConfig};
