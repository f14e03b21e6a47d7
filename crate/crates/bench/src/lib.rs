//! Criterion benchmarks live in `benches/`; this crate has no library code
//! beyond the shared input builders below.

use ssa2d::Tensor;

/// Deterministic pseudo-random tensor without pulling an RNG into benches.
pub fn ramp(shape: &[usize]) -> Tensor<f32> {
    Tensor::from_fn(shape, |i| ((i * 7919) % 1000) as f32 / 1000.0 - 0.5)
}
