use crate::config::{parse, parse_bool};
use crate::error::{Error, Result};

/// A run of epochs at one learning rate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Phase {
    pub epochs: usize,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSchedule {
    pub phases: Vec<Phase>,
    pub batch_size: usize,
    /// Batches whose gradients are summed into one optimizer step.
    pub accumulation: usize,
    /// Hard cap on optimizer steps across all phases.
    pub max_steps: Option<usize>,
    pub clip_norm: f64,
    pub shuffle: bool,
    /// Write a checkpoint every this many steps (0 = only at the end).
    pub checkpoint_every: usize,
    /// Evaluate on the held-out split every this many steps (0 = never).
    pub eval_every: usize,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            phases: vec![Phase { epochs: 5, lr: 1e-4 }, Phase { epochs: 6, lr: 1e-5 }],
            batch_size: 14,
            accumulation: 1,
            max_steps: None,
            clip_norm: 10.0,
            shuffle: true,
            checkpoint_every: 0,
            eval_every: 0,
        }
    }
}

impl TrainSchedule {
    pub fn toy() -> Self {
        TrainSchedule {
            phases: vec![Phase { epochs: 8, lr: 2e-3 }, Phase { epochs: 2, lr: 2e-4 }],
            batch_size: 2,
            max_steps: Some(2000),
            ..Default::default()
        }
    }

    /// Clips contributing to one optimizer step.
    pub fn clips_per_step(&self) -> usize {
        self.batch_size * self.accumulation
    }

    pub fn steps_per_epoch(&self, clips: usize) -> usize {
        clips.div_ceil(self.clips_per_step())
    }

    pub fn total_epochs(&self) -> usize {
        self.phases.iter().map(|p| p.epochs).sum()
    }

    /// Learning rate during `epoch` (0-based).
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        let mut end = 0;
        for p in &self.phases {
            end += p.epochs;
            if epoch < end {
                return p.lr;
            }
        }
        self.phases.last().map_or(0.0, |p| p.lr)
    }

    pub fn validate(&self) -> Result<()> {
        if self.phases.is_empty() {
            return Err(Error::config("phases", "at least one phase is required"));
        }
        if self.phases.iter().any(|p| !(p.lr > 0.0 && p.lr.is_finite())) {
            return Err(Error::config("phases", "learning rates must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if self.accumulation == 0 {
            return Err(Error::config("accumulation", "must be positive"));
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return Err(Error::config("clip_norm", "must be positive"));
        }
        Ok(())
    }

    /// `phases` is written `epochs@lr;epochs@lr`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "phases" => {
                self.phases = value
                    .split(';')
                    .map(|p| {
                        let (e, lr) = p
                            .trim()
                            .split_once('@')
                            .ok_or_else(|| Error::config(key, format!("expected `epochs@lr`, got `{p}`")))?;
                        Ok(Phase {
                            epochs: parse(key, e.trim())?,
                            lr: parse(key, lr.trim())?,
                        })
                    })
                    .collect::<Result<_>>()?
            }
            "batch_size" => self.batch_size = parse(key, value)?,
            "accumulation" => self.accumulation = parse(key, value)?,
            "max_steps" => {
                self.max_steps = match value {
                    "none" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "clip_norm" => self.clip_norm = parse(key, value)?,
            "shuffle" => self.shuffle = parse_bool(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "eval_every" => self.eval_every = parse(key, value)?,
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    pub fn entries(&self) -> Vec<(String, String)> {
        let phases = self
            .phases
            .iter()
            .map(|p| format!("{}@{}", p.epochs, p.lr))
            .collect::<Vec<_>>()
            .join(";");
        vec![
            ("phases".into(), phases),
            ("batch_size".into(), self.batch_size.to_string()),
            ("accumulation".into(), self.accumulation.to_string()),
            (
                "max_steps".into(),
                self.max_steps.map_or_else(|| "none".into(), |s| s.to_string()),
            ),
            ("clip_norm".into(), self.clip_norm.to_string()),
            ("shuffle".into(), self.shuffle.to_string()),
            ("checkpoint_every".into(), self.checkpoint_every.to_string()),
            ("eval_every".into(), self.eval_every.to_string()),
        ]
    }
}
