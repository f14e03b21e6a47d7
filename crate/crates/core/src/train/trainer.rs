use std::io::Write;
use std::path::{Path, PathBuf};

use crate::autodiff::Tape;
use crate::data::dataset::shuffled_order;
use crate::data::synth::ClipRecord;
use crate::error::{Error, Result};
use crate::losses::{action_loss, actor_loss, mask_loss, one_hot, total_loss, LossWeights};
use crate::network::Ssa2d;
use crate::train::optim::OptimState;
use crate::train::schedule::TrainSchedule;

/// Loss terms of one step, averaged over the batch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepLosses {
    pub actor: f64,
    pub action: f64,
    pub mask: f64,
    pub total: f64,
}

impl StepLosses {
    fn add(&mut self, o: &StepLosses) {
        self.actor += o.actor;
        self.action += o.action;
        self.mask += o.mask;
        self.total += o.total;
    }

    fn scaled(self, k: f64) -> Self {
        StepLosses {
            actor: self.actor * k,
            action: self.action * k,
            mask: self.mask * k,
            total: self.total * k,
        }
    }
}

/// One training-log line.
pub fn log_line(step: usize, l: &StepLosses, lr: f64) -> String {
    format!(
        "step={step} l_actor={} l_action={} l_mask={} total={} lr={lr}",
        l.actor, l.action, l.mask, l.total
    )
}

/// Records the forward pass and all loss terms for one clip, then
/// backpropagates and adds the parameter gradients into the model.
/// With `teacher` the ground-truth mask gates the action branch.
pub fn clip_step(
    model: &mut Ssa2d<f32>,
    clip: &ClipRecord,
    weights: &LossWeights,
    teacher: bool,
    step: usize,
) -> Result<StepLosses> {
    let cfg = &model.cfg;
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape);
    let video = tape.constant(clip.video.clone());
    let mask_gt = clip.mask_tensor();
    let out = model.forward(&mut tape, &bound, video, teacher.then_some(&mask_gt))?;

    let actor_gt = one_hot::<f32>(&clip.actor_gt, &clip.dims, cfg.actor_classes)?;
    let action_gt = one_hot::<f32>(&clip.action_gt, &clip.dims, cfg.action_classes)?;
    let eps = weights.dice_epsilon;
    let la = actor_loss(&mut tape, out.actor_d, &actor_gt, eps)?;
    let lb = action_loss(&mut tape, out.action_d, &action_gt, eps)?;
    let fg = tape.select_channel(out.stu_mask, 1)?;
    let lm = mask_loss(&mut tape, fg, &mask_gt, eps)?;
    let total = total_loss(&mut tape, la, lb, lm, weights)?;

    let losses = StepLosses {
        actor: tape.value(la).item() as f64,
        action: tape.value(lb).item() as f64,
        mask: tape.value(lm).item() as f64,
        total: tape.value(total).item() as f64,
    };
    for (term, v) in [
        ("l_actor", losses.actor),
        ("l_action", losses.action),
        ("l_mask", losses.mask),
        ("total", losses.total),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFinite { term, step });
        }
    }
    tape.backward(total)?;
    model.params.pull_grads(&tape, &bound);
    Ok(losses)
}

/// Drives optimization over an in-memory training split.
pub struct Trainer<'a> {
    pub model: Ssa2d<f32>,
    pub schedule: TrainSchedule,
    pub weights: LossWeights,
    pub optim: OptimState,
    pub seed: u64,
    pub step: usize,
    log: Option<&'a mut dyn Write>,
    checkpoint_dir: Option<PathBuf>,
}

/// What a finished run produced.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub steps: usize,
    pub losses: Vec<StepLosses>,
    pub log: Vec<String>,
    pub checkpoints: Vec<PathBuf>,
}

impl<'a> Trainer<'a> {
    pub fn new(model: Ssa2d<f32>, schedule: TrainSchedule, weights: LossWeights, seed: u64) -> Result<Self> {
        schedule.validate()?;
        let optim = OptimState::new(&model.params, schedule.lr_at_epoch(0));
        Ok(Trainer {
            model,
            schedule,
            weights,
            optim,
            seed,
            step: 0,
            log: None,
            checkpoint_dir: None,
        })
    }

    /// Appends each log line to `out` as it is produced.
    pub fn with_log(mut self, out: &'a mut dyn Write) -> Self {
        self.log = Some(out);
        self
    }

    /// Writes `step_<n>.stc` at the configured cadence and `final.stc`.
    pub fn with_checkpoints(mut self, dir: &Path) -> Self {
        self.checkpoint_dir = Some(dir.to_path_buf());
        self
    }

    /// One optimizer step over `batch`: mean gradient, global-norm clip,
    /// Adam update.
    pub fn step_on(&mut self, batch: &[&ClipRecord], lr: f64) -> Result<StepLosses> {
        self.model.params.zero_grads();
        let mut sum = StepLosses::default();
        for clip in batch {
            let l = clip_step(&mut self.model, clip, &self.weights, true, self.step + 1)?;
            sum.add(&l);
        }
        let k = 1.0 / batch.len() as f64;
        self.model.params.scale_grads(k as f32);
        let norm = self.model.params.grad_norm();
        if !norm.is_finite() {
            return Err(Error::NonFinite {
                term: "gradient",
                step: self.step + 1,
            });
        }
        if norm > self.schedule.clip_norm {
            self.model.params.scale_grads((self.schedule.clip_norm / norm) as f32);
        }
        self.optim.lr = lr;
        self.optim.step(&mut self.model.params)?;
        self.step += 1;
        Ok(sum.scaled(k))
    }

    fn checkpoint(&self, name: &str, out: &mut Vec<PathBuf>) -> Result<()> {
        if let Some(dir) = &self.checkpoint_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(name);
            self.model.save(&path)?;
            out.push(path);
        }
        Ok(())
    }

    /// Runs the whole schedule, stopping early at `max_steps`. `on_step`
    /// sees every completed step and may request an early stop by
    /// returning `false`.
    pub fn run(
        &mut self,
        clips: &[ClipRecord],
        mut on_step: impl FnMut(&Trainer, &StepLosses) -> Result<bool>,
    ) -> Result<TrainOutcome> {
        if clips.is_empty() {
            return Err(Error::Data("training split is empty".into()));
        }
        let mut outcome = TrainOutcome {
            steps: 0,
            losses: Vec::new(),
            log: Vec::new(),
            checkpoints: Vec::new(),
        };
        let cap = self.schedule.max_steps.unwrap_or(usize::MAX);
        let bs = self.schedule.clips_per_step();
        'epochs: for epoch in 0..self.schedule.total_epochs() {
            let lr = self.schedule.lr_at_epoch(epoch);
            let order = shuffled_order(clips.len(), self.schedule.shuffle.then(|| self.seed.wrapping_add(epoch as u64)));
            for chunk in order.chunks(bs) {
                if self.step >= cap {
                    break 'epochs;
                }
                let batch: Vec<&ClipRecord> = chunk.iter().map(|&i| &clips[i]).collect();
                let l = self.step_on(&batch, lr)?;
                let line = log_line(self.step, &l, lr);
                if let Some(w) = self.log.as_deref_mut() {
                    writeln!(w, "{line}").map_err(|e| Error::io("<training log>", e))?;
                }
                outcome.log.push(line);
                outcome.losses.push(l);
                let every = self.schedule.checkpoint_every;
                if every > 0 && self.step.is_multiple_of(every) {
                    self.checkpoint(&format!("step_{:06}.stc", self.step), &mut outcome.checkpoints)?;
                }
                if !on_step(self, &l)? {
                    break 'epochs;
                }
            }
        }
        outcome.steps = self.step;
        let mut ck = std::mem::take(&mut outcome.checkpoints);
        self.checkpoint("final.stc", &mut ck)?;
        outcome.checkpoints = ck;
        Ok(outcome)
    }
}
