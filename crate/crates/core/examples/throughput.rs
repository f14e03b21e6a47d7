use std::time::Instant;

use ssa2d::data::generate_clip;
use ssa2d::losses::LossWeights;
use ssa2d::train::clip_step;
use ssa2d::{NetworkConfig, Ssa2d, SynthConfig};

fn main() {
    let mut model = Ssa2d::<f32>::new(NetworkConfig::toy()).unwrap();
    println!("params={}", model.params.numel());
    let clip = generate_clip(&SynthConfig::default(), 1).unwrap();
    let w = LossWeights::default();
    for _ in 0..2 {
        clip_step(&mut model, &clip, &w, true, 0).unwrap();
    }
    let n = 10;
    let t = Instant::now();
    for _ in 0..n {
        clip_step(&mut model, &clip, &w, true, 0).unwrap();
    }
    println!("train clip step: {:.1} ms", t.elapsed().as_secs_f64() * 1e3 / n as f64);
    let t = Instant::now();
    let mut stats = None;
    for _ in 0..n {
        stats = Some(model.predict(&clip.video).unwrap().stats);
    }
    println!("predict: {:.1} ms {:?}", t.elapsed().as_secs_f64() * 1e3 / n as f64, stats);
}
