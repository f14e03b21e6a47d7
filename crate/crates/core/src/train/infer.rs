use std::time::Instant;

use crate::autodiff::TapeStats;
use crate::data::synth::{generate_clip, ClipRecord, SynthConfig};
use crate::error::{Error, Result};
use crate::metrics::{Evaluator, MetricOptions, MetricReport};
use crate::network::{DetectionOutput, Ssa2d};
use crate::tensor::{Scalar, Tensor};

/// Per-position argmax over the channel axis; ties go to the lowest index.
pub fn argmax_labels<S: Scalar>(t: &Tensor<S>) -> Vec<i32> {
    let c = t.channels();
    t.data()
        .chunks_exact(c)
        .map(|row| {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = k;
                }
            }
            best as i32
        })
        .collect()
}

/// Label volumes predicted for one clip.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub dims: [usize; 3],
    pub actor: Vec<i32>,
    pub action: Vec<i32>,
    pub mask: Vec<i32>,
    pub output: DetectionOutput<f32>,
}

/// Forward pass gated by the predicted mask, then per-pixel argmax.
pub fn infer(model: &Ssa2d<f32>, video: &Tensor<f32>) -> Result<Prediction> {
    let output = model.predict(video)?;
    let s = video.shape();
    Ok(Prediction {
        dims: [s[0], s[1], s[2]],
        actor: argmax_labels(&output.actor_d),
        action: argmax_labels(&output.action_d),
        mask: argmax_labels(&output.stu_mask),
        output,
    })
}

/// Scores `model` on `clips`. With `oracle` the ground truth is scored
/// against itself, which exercises the pipeline without a model.
pub fn evaluate_model(
    model: Option<&Ssa2d<f32>>,
    clips: &[ClipRecord],
    actor_classes: usize,
    action_classes: usize,
    pairs: &[(i32, i32)],
    opts: &MetricOptions,
) -> Result<MetricReport> {
    let mut ev = Evaluator::new(actor_classes, action_classes, pairs);
    for clip in clips {
        match model {
            Some(m) => {
                let p = infer(m, &clip.video)?;
                ev.add(&p.actor, &p.action, &clip.actor_gt, &clip.action_gt)?;
            }
            None => ev.add(&clip.actor_gt, &clip.action_gt, &clip.actor_gt, &clip.action_gt)?,
        }
    }
    Ok(ev.report(opts))
}

/// Timing and work counters for scenes with a fixed number of actors.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub actors: usize,
    pub median_ms_per_frame: f64,
    pub min_ms_per_frame: f64,
    pub max_ms_per_frame: f64,
    pub stats: TapeStats,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub repeats: usize,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    /// `(max - min) / min` over the per-row medians.
    pub fn median_spread(&self) -> f64 {
        let meds = self.rows.iter().map(|r| r.median_ms_per_frame);
        let lo = meds.clone().fold(f64::INFINITY, f64::min);
        let hi = meds.fold(0.0, f64::max);
        if lo > 0.0 && lo.is_finite() { (hi - lo) / lo } else { 0.0 }
    }

    pub fn counters_identical(&self) -> bool {
        self.rows.windows(2).all(|w| w[0].stats == w[1].stats)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("repeats={}\n", self.repeats);
        for r in &self.rows {
            out.push_str(&format!(
                "actors={} median_ms_per_frame={:.3} min_ms_per_frame={:.3} max_ms_per_frame={:.3} ops={} flops={} peak_bytes={}\n",
                r.actors,
                r.median_ms_per_frame,
                r.min_ms_per_frame,
                r.max_ms_per_frame,
                r.stats.ops,
                r.stats.flops,
                r.stats.peak_live_bytes
            ));
        }
        out.push_str(&format!(
            "counters_identical={} median_spread={:.4}\n",
            self.counters_identical(),
            self.median_spread()
        ));
        out
    }
}

/// Runs forward-only inference `repeats` times on one generated scene per
/// actor count. Repeats are interleaved across scenes so that drift in
/// machine load affects every row alike.
pub fn benchmark(model: &Ssa2d<f32>, synth: &SynthConfig, actor_counts: &[usize], repeats: usize, seed: u64) -> Result<BenchReport> {
    if repeats == 0 {
        return Err(Error::config("repeats", "must be positive"));
    }
    let clips = actor_counts
        .iter()
        .map(|&k| {
            let cfg = SynthConfig {
                actors: [k, k],
                ..synth.clone()
            };
            generate_clip(&cfg, seed)
        })
        .collect::<Result<Vec<_>>>()?;
    let frames = synth.frames as f64;
    let mut times = vec![Vec::with_capacity(repeats); clips.len()];
    let mut stats = vec![TapeStats::default(); clips.len()];
    // warm-up
    for clip in &clips {
        model.predict(&clip.video)?;
    }
    for _ in 0..repeats {
        for (i, clip) in clips.iter().enumerate() {
            let start = Instant::now();
            let out = model.predict(&clip.video)?;
            times[i].push(start.elapsed().as_secs_f64() * 1e3 / frames);
            stats[i] = out.stats;
        }
    }
    let rows = actor_counts
        .iter()
        .zip(times.iter_mut().zip(stats))
        .map(|(&actors, (t, stats))| {
            t.sort_by(f64::total_cmp);
            BenchRow {
                actors,
                median_ms_per_frame: t[t.len() / 2],
                min_ms_per_frame: t[0],
                max_ms_per_frame: t[t.len() - 1],
                stats,
            }
        })
        .collect();
    Ok(BenchReport { repeats, rows })
}
