use serde::{Deserialize, Serialize};

use crate::config::{fmt_list, fmt_triple, parse, parse_bool, parse_list, parse_triple, parse_triples};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// 16×224×224 clips; encoder at T/4×H/16×W/16.
    Paper,
    /// Desk-scale clips; encoder at T/2×H/4×W/4.
    Toy,
}

/// Ablation switches. All on is the full model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Features {
    pub ap_infusion: bool,
    pub ssa_masking: bool,
    pub atrous: bool,
    pub multi_scale: bool,
}

impl Default for Features {
    fn default() -> Self {
        Features {
            ap_infusion: true,
            ssa_masking: true,
            atrous: true,
            multi_scale: true,
        }
    }
}

impl Features {
    pub fn none() -> Self {
        Features {
            ap_infusion: false,
            ssa_masking: false,
            atrous: false,
            multi_scale: false,
        }
    }
}

/// How actor-prior features join the action features.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fusion {
    Concat,
    Add,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionActivation {
    Softmax,
    Sigmoid,
}

/// How each encoder stage reduces resolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Downsample {
    /// Stride-1 convolution followed by max pooling with window = stride.
    Pool,
    /// Strided 3×3×3 convolution.
    Conv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub profile: Profile,
    /// `(T, H, W)` of input clips.
    pub input: [usize; 3],
    /// Actor classes including background.
    pub actor_classes: usize,
    /// Action classes including background.
    pub action_classes: usize,
    /// Width of the actor-prior features handed to the action branch.
    pub ap_channels: usize,
    pub encoder_widths: Vec<usize>,
    /// Per-stage `(t, h, w)` downsampling factors.
    pub encoder_strides: Vec<[usize; 3]>,
    pub downsample: Downsample,
    pub decoder_width: usize,
    /// Upsampling stages of the actor and action decoders.
    pub actor_stages: usize,
    /// Upsampling stages of the mask decoder.
    pub mask_stages: usize,
    pub atrous_rates: Vec<usize>,
    pub atrous_width: usize,
    /// Decoder levels merged by the feature pyramid, finest included.
    pub pyramid_levels: usize,
    pub head_kernel: usize,
    pub features: Features,
    pub fusion: Fusion,
    pub action_activation: ActionActivation,
    /// Binarize the predicted mask at this probability before masking.
    pub mask_threshold: Option<f64>,
    pub seed: u64,
}

impl NetworkConfig {
    pub fn paper() -> Self {
        NetworkConfig {
            profile: Profile::Paper,
            input: [16, 224, 224],
            actor_classes: 8,
            action_classes: 10,
            ap_channels: 16,
            encoder_widths: vec![16, 32, 48, 64],
            encoder_strides: vec![[2, 2, 2], [1, 2, 2], [1, 2, 2], [2, 2, 2]],
            downsample: Downsample::Pool,
            decoder_width: 32,
            actor_stages: 2,
            mask_stages: 3,
            atrous_rates: vec![1, 2, 4],
            atrous_width: 16,
            pyramid_levels: 3,
            head_kernel: 1,
            features: Features::default(),
            fusion: Fusion::Concat,
            action_activation: ActionActivation::Softmax,
            mask_threshold: None,
            seed: 0,
        }
    }

    pub fn toy() -> Self {
        NetworkConfig {
            profile: Profile::Toy,
            input: [8, 32, 32],
            actor_classes: 4,
            action_classes: 5,
            ap_channels: 8,
            encoder_widths: vec![12, 24],
            encoder_strides: vec![[2, 2, 2], [1, 2, 2]],
            downsample: Downsample::Conv,
            decoder_width: 12,
            actor_stages: 1,
            mask_stages: 1,
            atrous_rates: vec![1, 2, 4],
            atrous_width: 6,
            pyramid_levels: 2,
            head_kernel: 1,
            features: Features::default(),
            fusion: Fusion::Concat,
            action_activation: ActionActivation::Softmax,
            mask_threshold: None,
            seed: 0,
        }
    }

    pub fn stages(&self) -> usize {
        self.encoder_strides.len()
    }

    /// `(T, H, W)` after encoder stage `i`.
    pub fn stage_dims(&self, i: usize) -> [usize; 3] {
        let mut d = self.input;
        for s in &self.encoder_strides[..=i] {
            for a in 0..3 {
                d[a] /= s[a];
            }
        }
        d
    }

    pub fn encoder_dims(&self) -> [usize; 3] {
        self.stage_dims(self.stages() - 1)
    }

    /// Output extent of a decoder with `upsample_stages` stages.
    pub fn decoder_dims(&self, upsample_stages: usize) -> [usize; 3] {
        self.stage_dims(self.stages() - 1 - upsample_stages)
    }

    pub fn actor_dims(&self) -> [usize; 3] {
        self.decoder_dims(self.actor_stages)
    }

    pub fn mask_dims(&self) -> [usize; 3] {
        self.decoder_dims(self.mask_stages)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |k: &str, m: String| Err(Error::config(k, m));
        if self.input.contains(&0) {
            return err("input", "extents must be positive".into());
        }
        if self.encoder_strides.is_empty() {
            return err("encoder_strides", "need at least one stage".into());
        }
        if self.encoder_widths.len() != self.encoder_strides.len() {
            return err(
                "encoder_widths",
                format!(
                    "{} widths for {} stages",
                    self.encoder_widths.len(),
                    self.encoder_strides.len()
                ),
            );
        }
        if self.encoder_strides.iter().flatten().any(|&s| s == 0) {
            return err("encoder_strides", "strides must be positive".into());
        }
        let mut total = [1usize; 3];
        for s in &self.encoder_strides {
            for a in 0..3 {
                total[a] *= s[a];
            }
        }
        if (0..3).any(|a| !self.input[a].is_multiple_of(total[a])) {
            return err(
                "input",
                format!(
                    "{:?} is not divisible by the encoder's total stride {total:?}",
                    self.input
                ),
            );
        }
        for (k, v) in [
            ("actor_classes", self.actor_classes),
            ("action_classes", self.action_classes),
        ] {
            if v < 2 {
                return err(k, "need background plus at least one class".into());
            }
        }
        for (k, v) in [
            ("ap_channels", self.ap_channels),
            ("decoder_width", self.decoder_width),
            ("head_kernel", self.head_kernel),
        ] {
            if v == 0 {
                return err(k, "must be positive".into());
            }
        }
        if self.encoder_widths.contains(&0) {
            return err("encoder_widths", "widths must be positive".into());
        }
        if self.head_kernel.is_multiple_of(2) {
            return err("head_kernel", "must be odd".into());
        }
        for (k, v) in [("actor_stages", self.actor_stages), ("mask_stages", self.mask_stages)] {
            if v >= self.stages() {
                return err(
                    k,
                    format!("{v} upsampling stages need at least {} encoder stages", v + 1),
                );
            }
        }
        if self.features.atrous && (self.atrous_rates.is_empty() || self.atrous_width == 0) {
            return err("atrous_rates", "atrous block needs rates and a positive width".into());
        }
        if self.atrous_rates.contains(&0) {
            return err("atrous_rates", "rates must be positive".into());
        }
        if self.features.multi_scale {
            let max = self.actor_stages.min(self.mask_stages) + 1;
            if self.pyramid_levels < 2 || self.pyramid_levels > max {
                return err(
                    "pyramid_levels",
                    format!("must lie in 2..={max} for the configured decoder stages"),
                );
            }
        }
        if self.fusion == Fusion::Add && self.ap_channels != self.decoder_width {
            return err(
                "fusion",
                "additive fusion needs ap_channels == decoder_width".into(),
            );
        }
        if let Some(t) = self.mask_threshold {
            if !(0.0..=1.0).contains(&t) {
                return err("mask_threshold", "must lie in [0, 1]".into());
            }
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "profile" => {
                let profile = match value {
                    "paper" => Profile::Paper,
                    "toy" => Profile::Toy,
                    _ => return Err(Error::config(key, format!("unknown profile `{value}`"))),
                };
                // Selecting a profile resets the architecture to its defaults;
                // later keys refine it.
                let seed = self.seed;
                *self = match profile {
                    Profile::Paper => Self::paper(),
                    Profile::Toy => Self::toy(),
                };
                self.seed = seed;
            }
            "input" => self.input = parse_triple(key, value)?,
            "actor_classes" => self.actor_classes = parse(key, value)?,
            "action_classes" => self.action_classes = parse(key, value)?,
            "ap_channels" => self.ap_channels = parse(key, value)?,
            "encoder_widths" => self.encoder_widths = parse_list(key, value)?,
            "encoder_strides" => self.encoder_strides = parse_triples(key, value)?,
            "downsample" => {
                self.downsample = match value {
                    "pool" => Downsample::Pool,
                    "conv" => Downsample::Conv,
                    _ => return Err(Error::config(key, format!("expected pool|conv, got `{value}`"))),
                }
            }
            "decoder_width" => self.decoder_width = parse(key, value)?,
            "actor_stages" => self.actor_stages = parse(key, value)?,
            "mask_stages" => self.mask_stages = parse(key, value)?,
            "atrous_rates" => self.atrous_rates = parse_list(key, value)?,
            "atrous_width" => self.atrous_width = parse(key, value)?,
            "pyramid_levels" => self.pyramid_levels = parse(key, value)?,
            "head_kernel" => self.head_kernel = parse(key, value)?,
            "ap_infusion" => self.features.ap_infusion = parse_bool(key, value)?,
            "ssa_masking" => self.features.ssa_masking = parse_bool(key, value)?,
            "atrous" => self.features.atrous = parse_bool(key, value)?,
            "multi_scale" => self.features.multi_scale = parse_bool(key, value)?,
            "fusion" => {
                self.fusion = match value {
                    "concat" => Fusion::Concat,
                    "add" => Fusion::Add,
                    _ => return Err(Error::config(key, format!("expected concat|add, got `{value}`"))),
                }
            }
            "action_activation" => {
                self.action_activation = match value {
                    "softmax" => ActionActivation::Softmax,
                    "sigmoid" => ActionActivation::Sigmoid,
                    _ => {
                        return Err(Error::config(
                            key,
                            format!("expected softmax|sigmoid, got `{value}`"),
                        ))
                    }
                }
            }
            "mask_threshold" => {
                self.mask_threshold = match value {
                    "none" | "" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "seed" => self.seed = parse(key, value)?,
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    pub fn entries(&self) -> Vec<(String, String)> {
        let profile = match self.profile {
            Profile::Paper => "paper",
            Profile::Toy => "toy",
        };
        let strides = self
            .encoder_strides
            .iter()
            .map(|&s| fmt_triple(s))
            .collect::<Vec<_>>()
            .join(";");
        let kv: Vec<(&str, String)> = vec![
            ("profile", profile.into()),
            ("input", fmt_triple(self.input)),
            ("actor_classes", self.actor_classes.to_string()),
            ("action_classes", self.action_classes.to_string()),
            ("ap_channels", self.ap_channels.to_string()),
            ("encoder_widths", fmt_list(&self.encoder_widths)),
            ("encoder_strides", strides),
            (
                "downsample",
                match self.downsample {
                    Downsample::Pool => "pool",
                    Downsample::Conv => "conv",
                }
                .into(),
            ),
            ("decoder_width", self.decoder_width.to_string()),
            ("actor_stages", self.actor_stages.to_string()),
            ("mask_stages", self.mask_stages.to_string()),
            ("atrous_rates", fmt_list(&self.atrous_rates)),
            ("atrous_width", self.atrous_width.to_string()),
            ("pyramid_levels", self.pyramid_levels.to_string()),
            ("head_kernel", self.head_kernel.to_string()),
            ("ap_infusion", self.features.ap_infusion.to_string()),
            ("ssa_masking", self.features.ssa_masking.to_string()),
            ("atrous", self.features.atrous.to_string()),
            ("multi_scale", self.features.multi_scale.to_string()),
            (
                "fusion",
                match self.fusion {
                    Fusion::Concat => "concat",
                    Fusion::Add => "add",
                }
                .into(),
            ),
            (
                "action_activation",
                match self.action_activation {
                    ActionActivation::Softmax => "softmax",
                    ActionActivation::Sigmoid => "sigmoid",
                }
                .into(),
            ),
            (
                "mask_threshold",
                self.mask_threshold.map_or("none".into(), |t| t.to_string()),
            ),
            ("seed", self.seed.to_string()),
        ];
        kv.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    /// Parses a config previously produced by [`NetworkConfig::entries`].
    pub fn from_entries<'a>(entries: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut cfg = Self::toy();
        for (k, v) in entries {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
