//! The three-branch single-shot actor-action network.
//!
//! One shared encoder feeds three decoders of identical structure but
//! separate weights. The actor branch produces per-pixel actor
//! distributions and, from its last hidden layer, the actor prior. The mask
//! branch predicts a foreground mask. The action branch fuses its own
//! features with the actor prior, gates them with the mask, and keeps the
//! ungated copy alongside before classifying actions. Every output is
//! interpolated back to the input resolution.

mod config;

pub use config::{ActionActivation, Downsample, Features, Fusion, NetworkConfig, Profile};

use std::path::Path;

use crate::autodiff::{Tape, TapeStats, Var};
use crate::data::container::{read_container, write_container, NamedTensor};
use crate::error::{Error, Result};
use crate::layers::{resize_nearest, AtrousBlock, Bound, Conv3d, ConvSpec, Init, ParamStore};
use crate::tensor::{Scalar, Tensor};

/// Checkpoint entry holding the network config as `key=value` text.
pub const CONFIG_ENTRY: &str = "__config__";

struct EncoderStage {
    first: Conv3d,
    second: Conv3d,
    stride: [usize; 3],
    pool: bool,
}

pub struct Encoder {
    stages: Vec<EncoderStage>,
}

impl Encoder {
    fn new<S: Scalar>(cfg: &NetworkConfig, store: &mut ParamStore<S>, init: &mut Init) -> Result<Self> {
        let mut cin = 3;
        let mut stages = Vec::new();
        for (i, (&width, &stride)) in cfg.encoder_widths.iter().zip(&cfg.encoder_strides).enumerate() {
            let name = format!("encoder.stage{i}");
            let pool = cfg.downsample == Downsample::Pool;
            let first = if pool {
                Conv3d::same(store, init, &format!("{name}.conv_a"), (cin, width), 3, 1)?
            } else {
                Conv3d::new(
                    store,
                    init,
                    &format!("{name}.conv_a"),
                    (cin, width),
                    [3; 3],
                    ConvSpec::strided(stride, [1; 3]),
                )?
            };
            let second = Conv3d::same(store, init, &format!("{name}.conv_b"), (width, width), 3, 1)?;
            stages.push(EncoderStage {
                first,
                second,
                stride,
                pool,
            });
            cin = width;
        }
        Ok(Encoder { stages })
    }

    /// Returns the output of every stage; the last one is the encoding.
    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, params: &Bound, video: Var) -> Result<Vec<Var>> {
        let mut h = video;
        let mut outs = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            h = stage.first.forward_relu(tape, params, h)?;
            if stage.pool {
                h = tape.maxpool3d(h, stage.stride, stage.stride)?;
            }
            h = stage.second.forward_relu(tape, params, h)?;
            outs.push(h);
        }
        Ok(outs)
    }
}

struct DecoderStage {
    up: Conv3d,
    fuse: Conv3d,
    skip: usize,
}

struct Pyramid {
    /// `(level index, lateral projection)` for each coarser level merged.
    laterals: Vec<(usize, Conv3d)>,
    fuse: Conv3d,
}

/// Deconvolution stages with encoder skips, then optional atrous context
/// and feature-pyramid merge.
pub struct Decoder {
    stages: Vec<DecoderStage>,
    atrous: Option<AtrousBlock>,
    pyramid: Option<Pyramid>,
    pub out_dims: [usize; 3],
    pub width: usize,
}

impl Decoder {
    fn new<S: Scalar>(
        cfg: &NetworkConfig,
        upsample_stages: usize,
        name: &str,
        store: &mut ParamStore<S>,
        init: &mut Init,
    ) -> Result<Self> {
        let n = cfg.stages();
        let w = cfg.decoder_width;
        let mut stages = Vec::new();
        let mut cin = cfg.encoder_widths[n - 1];
        let mut level_widths = vec![cin];
        for j in 0..upsample_stages {
            let stride = cfg.encoder_strides[n - 1 - j];
            let skip = n - 2 - j;
            let up = Conv3d::transposed(
                store,
                init,
                &format!("{name}.stage{j}.up"),
                (cin, w),
                stride,
                ConvSpec::strided(stride, [0; 3]),
            )?;
            let fuse = Conv3d::same(
                store,
                init,
                &format!("{name}.stage{j}.fuse"),
                (w + cfg.encoder_widths[skip], w),
                3,
                1,
            )?;
            stages.push(DecoderStage { up, fuse, skip });
            cin = w;
            level_widths.push(w);
        }
        let atrous = if cfg.features.atrous {
            Some(AtrousBlock::new(
                store,
                init,
                &format!("{name}.atrous"),
                w,
                cfg.atrous_width,
                w,
                &cfg.atrous_rates,
            )?)
        } else {
            None
        };
        let pyramid = if cfg.features.multi_scale {
            let finest = level_widths.len() - 1;
            let first = level_widths.len() - cfg.pyramid_levels;
            let laterals = (first..finest)
                .map(|lvl| {
                    Conv3d::same(
                        store,
                        init,
                        &format!("{name}.pyramid.lateral{lvl}"),
                        (level_widths[lvl], w),
                        1,
                        1,
                    )
                    .map(|c| (lvl, c))
                })
                .collect::<Result<Vec<_>>>()?;
            let fuse = Conv3d::same(
                store,
                init,
                &format!("{name}.pyramid.fuse"),
                (w * cfg.pyramid_levels, w),
                1,
                1,
            )?;
            Some(Pyramid { laterals, fuse })
        } else {
            None
        };
        Ok(Decoder {
            stages,
            atrous,
            pyramid,
            out_dims: cfg.decoder_dims(upsample_stages),
            width: w,
        })
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, params: &Bound, skips: &[Var]) -> Result<Var> {
        let mut h = *skips.last().ok_or_else(|| Error::Contract("decoder needs encoder features".into()))?;
        let mut levels = vec![h];
        for stage in &self.stages {
            let up = stage.up.forward_relu(tape, params, h)?;
            let skip = skips[stage.skip];
            if tape.shape(up)[..3] != tape.shape(skip)[..3] {
                return Err(Error::config(
                    "encoder_strides",
                    format!(
                        "decoder stage output {:?} does not line up with skip {:?}",
                        tape.shape(up),
                        tape.shape(skip)
                    ),
                ));
            }
            let cat = tape.concat_channels(up, skip)?;
            h = stage.fuse.forward_relu(tape, params, cat)?;
            levels.push(h);
        }
        if let Some(atrous) = &self.atrous {
            h = atrous.forward(tape, params, h)?;
        }
        if let Some(pyr) = &self.pyramid {
            let fine = self.out_dims;
            let mut merged = h;
            for (lvl, lateral) in &pyr.laterals {
                let l = lateral.forward_relu(tape, params, levels[*lvl])?;
                let dims = &tape.shape(l)[..3];
                let factor = [0, 1, 2].map(|a| fine[a] / dims[a]);
                let up = tape.upsample_trilinear(l, factor)?;
                merged = tape.concat_channels(merged, up)?;
            }
            h = pyr.fuse.forward_relu(tape, params, merged)?;
        }
        Ok(h)
    }
}

/// Joins action features with actor-prior features and convolves the
/// result. Without a prior the same convolution sees the action features
/// alone.
pub fn ap_infusion<S: Scalar>(
    tape: &mut Tape<S>,
    params: &Bound,
    fuse: &Conv3d,
    f_a: Var,
    f_ap: Option<Var>,
    fusion: Fusion,
) -> Result<Var> {
    let joined = match f_ap {
        None => f_a,
        Some(f_ap) => {
            if tape.shape(f_a)[..3] != tape.shape(f_ap)[..3] {
                return Err(Error::shape(format!(
                    "actor prior {:?} is not aligned with action features {:?}",
                    tape.shape(f_ap),
                    tape.shape(f_a)
                )));
            }
            match fusion {
                Fusion::Concat => tape.concat_channels(f_a, f_ap)?,
                Fusion::Add => tape.add(f_a, f_ap)?,
            }
        }
    };
    fuse.forward_relu(tape, params, joined)
}

/// Gates `f_act` by a single-channel mask and appends the ungated
/// features: `<f_act ⊙ mask, f_act>`. Without a mask `f_act` passes through.
pub fn ssa_masking<S: Scalar>(tape: &mut Tape<S>, f_act: Var, f_mask: Option<Var>) -> Result<Var> {
    let Some(mask) = f_mask else { return Ok(f_act) };
    let m = tape.shape(mask);
    if m.len() != 4 || m[3] != 1 || m[..3] != tape.shape(f_act)[..3] {
        return Err(Error::shape(format!(
            "mask {:?} is not a single-channel volume aligned with {:?}",
            m,
            tape.shape(f_act)
        )));
    }
    let gated = tape.mul(f_act, mask)?;
    tape.concat_channels(gated, f_act)
}

/// Tape handles of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    /// `[T, H, W, C_actor]` per-pixel actor distribution.
    pub actor_d: Var,
    /// `[T, H, W, C_action]` action scores.
    pub action_d: Var,
    /// `[T, H, W, 2]` background/foreground distribution.
    pub stu_mask: Var,
    /// Foreground probability at the mask decoder's resolution.
    pub f_mask: Var,
    /// Mask actually applied to the action features.
    pub applied_mask: Option<Var>,
    pub f_ap: Var,
    pub f_act: Var,
    pub f_act_masked: Var,
}

/// Network outputs materialized as tensors.
#[derive(Clone, Debug)]
pub struct DetectionOutput<S = f32> {
    pub actor_d: Tensor<S>,
    pub action_d: Tensor<S>,
    pub stu_mask: Tensor<S>,
    pub f_mask: Tensor<S>,
    pub stats: TapeStats,
}

pub struct Ssa2d<S: Scalar = f32> {
    pub cfg: NetworkConfig,
    pub params: ParamStore<S>,
    pub encoder: Encoder,
    pub actor: Decoder,
    pub action: Decoder,
    pub mask: Decoder,
    actor_prior: Conv3d,
    actor_head: Conv3d,
    ap_fuse: Conv3d,
    action_head: Conv3d,
    mask_head: Conv3d,
}

impl<S: Scalar> Ssa2d<S> {
    pub fn new(cfg: NetworkConfig) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        let mut init = Init::new(cfg.seed);
        let store = &mut params;
        let encoder = Encoder::new(&cfg, store, &mut init)?;
        let actor = Decoder::new(&cfg, cfg.actor_stages, "actor", store, &mut init)?;
        let action = Decoder::new(&cfg, cfg.actor_stages, "action", store, &mut init)?;
        let mask = Decoder::new(&cfg, cfg.mask_stages, "mask", store, &mut init)?;
        let w = cfg.decoder_width;
        let hk = cfg.head_kernel;
        let actor_prior = Conv3d::same(store, &mut init, "actor.prior", (w, cfg.ap_channels), 1, 1)?;
        let actor_head = Conv3d::same(store, &mut init, "actor.head", (cfg.ap_channels, cfg.actor_classes), hk, 1)?;
        let fuse_in = match (cfg.features.ap_infusion, cfg.fusion) {
            (true, Fusion::Concat) => w + cfg.ap_channels,
            _ => w,
        };
        let ap_fuse = Conv3d::same(store, &mut init, "action.ap_fuse", (fuse_in, w), 3, 1)?;
        let head_in = if cfg.features.ssa_masking { 2 * w } else { w };
        let action_head = Conv3d::same(store, &mut init, "action.head", (head_in, cfg.action_classes), hk, 1)?;
        let mask_head = Conv3d::same(store, &mut init, "mask.head", (w, 2), hk, 1)?;
        Ok(Ssa2d {
            cfg,
            params,
            encoder,
            actor,
            action,
            mask,
            actor_prior,
            actor_head,
            ap_fuse,
            action_head,
            mask_head,
        })
    }

    fn check_video(&self, shape: &[usize]) -> Result<()> {
        let [t, h, w] = self.cfg.input;
        if shape != [t, h, w, 3] {
            return Err(Error::Contract(format!(
                "video shape {shape:?} does not match the configured input [{t}, {h}, {w}, 3]"
            )));
        }
        Ok(())
    }

    fn upsample_to_input(&self, tape: &mut Tape<S>, x: Var) -> Result<Var> {
        let dims = &tape.shape(x)[..3];
        let factor = [0, 1, 2].map(|a| self.cfg.input[a] / dims[a]);
        tape.upsample_trilinear(x, factor)
    }

    /// Records one forward pass. With `teacher_mask` (`{0,1}` at input
    /// resolution) the ground-truth mask gates the action features;
    /// otherwise the predicted foreground probability does.
    pub fn forward(
        &self,
        tape: &mut Tape<S>,
        params: &Bound,
        video: Var,
        teacher_mask: Option<&Tensor<S>>,
    ) -> Result<ForwardVars> {
        self.check_video(tape.shape(video))?;
        let act_dims = self.action.out_dims;
        let teacher = match teacher_mask {
            Some(m) => Some(self.prepare_teacher(m, act_dims)?),
            None => None,
        };

        let skips = self.encoder.forward(tape, params, video)?;

        let a = self.actor.forward(tape, params, &skips)?;
        let f_ap = self.actor_prior.forward_relu(tape, params, a)?;
        let actor_logits = self.actor_head.forward(tape, params, f_ap)?;
        let actor_p = tape.softmax_channels(actor_logits)?;
        let actor_d = self.upsample_to_input(tape, actor_p)?;

        let m = self.mask.forward(tape, params, &skips)?;
        let mask_logits = self.mask_head.forward(tape, params, m)?;
        let mask_p = tape.softmax_channels(mask_logits)?;
        let f_mask = tape.select_channel(mask_p, 1)?;
        let stu_mask = self.upsample_to_input(tape, mask_p)?;

        let f_a = self.action.forward(tape, params, &skips)?;
        let prior = self.cfg.features.ap_infusion.then_some(f_ap);
        let f_act = ap_infusion(tape, params, &self.ap_fuse, f_a, prior, self.cfg.fusion)?;

        let applied_mask = if self.cfg.features.ssa_masking {
            Some(match teacher {
                Some(t) => tape.constant(t),
                None => match self.cfg.mask_threshold {
                    Some(th) => {
                        let fm = resize_nearest(tape.value(f_mask), act_dims)?;
                        let th = S::of(th);
                        tape.constant(fm.map(|v| if v >= th { S::one() } else { S::zero() }))
                    }
                    None => tape.resize_nearest(f_mask, act_dims)?,
                },
            })
        } else {
            None
        };
        let f_act_masked = ssa_masking(tape, f_act, applied_mask)?;
        let action_logits = self.action_head.forward(tape, params, f_act_masked)?;
        let action_p = match self.cfg.action_activation {
            ActionActivation::Softmax => tape.softmax_channels(action_logits)?,
            ActionActivation::Sigmoid => tape.sigmoid(action_logits),
        };
        let action_d = self.upsample_to_input(tape, action_p)?;

        Ok(ForwardVars {
            actor_d,
            action_d,
            stu_mask,
            f_mask,
            applied_mask,
            f_ap,
            f_act,
            f_act_masked,
        })
    }

    fn prepare_teacher(&self, mask: &Tensor<S>, dims: [usize; 3]) -> Result<Tensor<S>> {
        let [t, h, w] = self.cfg.input;
        let mask = match mask.shape() {
            [a, b, c] if [*a, *b, *c] == [t, h, w] => mask.clone().reshape(&[t, h, w, 1])?,
            [a, b, c, 1] if [*a, *b, *c] == [t, h, w] => mask.clone(),
            other => {
                return Err(Error::Contract(format!(
                    "teacher mask shape {other:?} does not match input [{t}, {h}, {w}]"
                )))
            }
        };
        if mask.data().iter().any(|&v| v != S::zero() && v != S::one()) {
            return Err(Error::Contract("teacher mask must be binary".into()));
        }
        resize_nearest(&mask, dims)
    }

    /// Inference pass without gradient tracking.
    pub fn predict(&self, video: &Tensor<S>) -> Result<DetectionOutput<S>> {
        self.predict_with(video, None)
    }

    pub fn predict_with(&self, video: &Tensor<S>, teacher_mask: Option<&Tensor<S>>) -> Result<DetectionOutput<S>> {
        let mut tape = Tape::new();
        let params = self.params.bind_frozen(&mut tape);
        let v = tape.constant(video.clone());
        let out = self.forward(&mut tape, &params, v, teacher_mask)?;
        Ok(DetectionOutput {
            actor_d: tape.take_value(out.actor_d),
            action_d: tape.take_value(out.action_d),
            stu_mask: tape.take_value(out.stu_mask),
            f_mask: tape.take_value(out.f_mask),
            stats: tape.stats(),
        })
    }

    /// Writes every parameter plus the config into a tensor container.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut entries = vec![NamedTensor::bytes(
            CONFIG_ENTRY,
            self.config_text().into_bytes(),
        )];
        for (name, t) in self.params.iter() {
            entries.push(NamedTensor::float(name, &t.cast::<f32>()));
        }
        write_container(path, &entries)
    }

    pub fn config_text(&self) -> String {
        self.cfg
            .entries()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let entries = read_container(path)?;
        let cfg_bytes = entries
            .iter()
            .find(|e| e.name == CONFIG_ENTRY)
            .ok_or_else(|| Error::Data(format!("{} has no network config", path.display())))?
            .as_bytes()?;
        let text = String::from_utf8(cfg_bytes.to_vec())
            .map_err(|_| Error::Data("network config is not UTF-8".into()))?;
        let kv = crate::config::parse_kv(&text)?;
        let cfg = NetworkConfig::from_entries(kv.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
        let mut model = Self::new(cfg)?;
        let mut tensors = indexmap::IndexMap::new();
        for e in &entries {
            if e.name != CONFIG_ENTRY {
                tensors.insert(e.name.clone(), e.to_float::<S>()?);
            }
        }
        model.params.load_from(&tensors)?;
        Ok(model)
    }
}
