//! Finite-difference cases, one generator per layer or loss. Each case
//! draws its configuration from the seed and returns the relative error.

use rand::Rng;
use ssa2d::layers::{AtrousBlock, Bound, Conv3d, ConvSpec, Init, ParamStore};
use ssa2d::losses::{total_loss, LossWeights};
use ssa2d::network::{ap_infusion, ssa_masking, Fusion, Ssa2d};
use ssa2d::{Scalar, Tape, Tensor, Var};

use super::*;

pub const CONFIGS: u64 = 20;

fn dims(r: &mut ChaCha8Rng, lo: usize, hi: usize) -> [usize; 3] {
    [0; 3].map(|_| r.gen_range(lo..=hi))
}

pub fn conv<S: Scalar>(seed: u64) -> f64 {
    let mut r = rng(seed);
    let k = dims(&mut r, 1, 3);
    let stride = dims(&mut r, 1, 2);
    let dilation = dims(&mut r, 1, 2);
    let padding = [0, 1, 2].map(|a| r.gen_range(0..=(dilation[a] * (k[a] - 1)) / 2 + 1).min(k[a]));
    let span = [0, 1, 2].map(|a| dilation[a] * (k[a] - 1) + 1);
    let input = [0, 1, 2].map(|a| (span[a] + r.gen_range(0..3)).saturating_sub(2 * padding[a]).max(1));
    let (cin, cout) = (r.gen_range(1..=3), r.gen_range(1..=3));
    let spec = ConvSpec {
        stride,
        dilation,
        padding,
    };
    let x = uniform::<S>(&mut r, &[input[0], input[1], input[2], cin], -1.0, 1.0);
    let w = uniform::<S>(&mut r, &[k[0], k[1], k[2], cin, cout], -1.0, 1.0);
    let b = uniform::<S>(&mut r, &[cout], -1.0, 1.0);
    gradcheck(
        &[x, w, b],
        |t, v| {
            let y = t.conv3d(v[0], v[1], Some(v[2]), &spec)?;
            project(t, y, seed)
        },
        step::<S>(),
    )
}

pub fn deconv<S: Scalar>(seed: u64) -> f64 {
    let mut r = rng(seed);
    let k = dims(&mut r, 1, 3);
    let stride = dims(&mut r, 1, 2);
    let dilation = dims(&mut r, 1, 2);
    let input = dims(&mut r, 1, 3);
    let padding = [0, 1, 2].map(|a| {
        let full = (input[a] - 1) * stride[a] + dilation[a] * (k[a] - 1) + 1;
        r.gen_range(0..=(full - 1) / 2).min(1)
    });
    let (cin, cout) = (r.gen_range(1..=3), r.gen_range(1..=3));
    let spec = ConvSpec {
        stride,
        dilation,
        padding,
    };
    let x = uniform::<S>(&mut r, &[input[0], input[1], input[2], cin], -1.0, 1.0);
    let w = uniform::<S>(&mut r, &[k[0], k[1], k[2], cin, cout], -1.0, 1.0);
    let b = uniform::<S>(&mut r, &[cout], -1.0, 1.0);
    gradcheck(
        &[x, w, b],
        |t, v| {
            let y = t.deconv3d(v[0], v[1], Some(v[2]), &spec)?;
            project(t, y, seed)
        },
        step::<S>(),
    )
}

pub fn maxpool<S: Scalar>(seed: u64) -> f64 {
    let mut r = rng(seed);
    let window = dims(&mut r, 1, 2);
    let stride = dims(&mut r, 1, 2);
    let d = [0, 1, 2].map(|a| window[a] + stride[a] * r.gen_range(0..3));
    let c = r.gen_range(1..=2);
    let x = distinct::<S>(&mut r, &[d[0], d[1], d[2], c], 0.05);
    gradcheck(
        &[x],
        |t, v| {
            let y = t.maxpool3d(v[0], window, stride)?;
            project(t, y, seed)
        },
        step::<S>(),
    )
}

pub fn trilinear<S: Scalar>(seed: u64) -> f64 {
    let mut r = rng(seed);
    let d = dims(&mut r, 1, 3);
    let factor = dims(&mut r, 1, 3);
    let c = r.gen_range(1..=3);
    let x = uniform::<S>(&mut r, &[d[0], d[1], d[2], c], -1.0, 1.0);
    gradcheck(
        &[x],
        |t, v| {
            let y = t.upsample_trilinear(v[0], factor)?;
            project(t, y, seed)
        },
        step::<S>(),
    )
}

pub fn nearest<S: Scalar>(seed: u64) -> f64 {
    let mut r = rng(seed);
    let d = dims(&mut r, 1, 5);
    let out = dims(&mut r, 1, 5);
    let x = uniform::<S>(&mut r, &[d[0], d[1], d[2], 1], -1.0, 1.0);
    gradcheck(
        &[x],
        |t, v| {
            let y = t.resize_nearest(v[0], out)?;
            project(t, y, seed)
        },
        step::<S>(),
    )
}

fn small_shape(r: &mut ChaCha8Rng) -> Vec<usize> {
    let d = dims(r, 1, 3);
    vec![d[0], d[1], d[2], r.gen_range(1..=4)]
}

pub fn relu<S: Scalar>(seed: u64) -> f64 {
    let mut r = rng(seed);
    let shape = small_shape(&mut r);
    let x = off_zero::<S>(&mut r, &shape, 0.05);
    gradcheck(
        &[x],
        |t, v| {
            let y = t.relu(v[0]);
            project(t, y, seed)
        },
        step::<S>(),
    )
}

pub fn sigmoid<S: Scalar>(seed: u64) -> f64 {
    let mut r = rng(seed);
    let shape = small_shape(&mut r);
    let x = uniform::<S>(&mut r, &shape, -3.0, 3.0);
    gradcheck(
        &[x],
        |t, v| {
            let y = t.sigmoid(v[0]);
            project(t, y, seed)
        },
        step::<S>(),
    )
}

pub fn softmax<S: Scalar>(seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut shape = small_shape(&mut r);
    shape[3] += 1;
    let x = uniform::<S>(&mut r, &shape, -3.0, 3.0);
    gradcheck(
        &[x],
        |t, v| {
            let y = t.softmax_channels(v[0])?;
            project(t, y, seed)
        },
        step::<S>(),
    )
}

pub fn mul<S: Scalar>(seed: u64) -> f64 {
    let mut r = rng(seed);
    let shape = small_shape(&mut r);
    let a = uniform::<S>(&mut r, &shape, -1.0, 1.0);
    let mut bshape = shape.clone();
    if seed % 2 == 1 {
        bshape[3] = 1;
    }
    let b = uniform::<S>(&mut r, &bshape, -1.0, 1.0);
    gradcheck(
        &[a, b],
        |t, v| {
            let y = t.mul(v[0], v[1])?;
            project(t, y, seed)
        },
        step::<S>(),
    )
}

pub fn concat_select<S: Scalar>(seed: u64) -> f64 {
    let mut r = rng(seed);
    let shape = small_shape(&mut r);
    let mut other = shape.clone();
    other[3] = r.gen_range(1..=3);
    let pick = r.gen_range(0..shape[3] + other[3]);
    let a = uniform::<S>(&mut r, &shape, -1.0, 1.0);
    let b = uniform::<S>(&mut r, &other, -1.0, 1.0);
    gradcheck(
        &[a, b],
        |t, v| {
            let c = t.concat_channels(v[0], v[1])?;
            let s = t.select_channel(c, pick)?;
            let p1 = project(t, c, seed)?;
            let p2 = project(t, s, seed + 1)?;
            t.add(p1, p2)
        },
        step::<S>(),
    )
}

pub fn add_scale_mean<S: Scalar>(seed: u64) -> f64 {
    let mut r = rng(seed);
    let shape = small_shape(&mut r);
    let c: f64 = r.gen_range(-2.0..2.0);
    let a = uniform::<S>(&mut r, &shape, -1.0, 1.0);
    let b = uniform::<S>(&mut r, &shape, -1.0, 1.0);
    gradcheck(
        &[a, b],
        |t, v| {
            let s = t.add(v[0], v[1])?;
            let s = t.scale(s, S::of(c));
            let sq = t.mul(s, v[0])?;
            Ok(t.mean(sq))
        },
        step::<S>(),
    )
}

fn loss_shape(r: &mut ChaCha8Rng) -> Vec<usize> {
    let d = dims(r, 1, 4);
    vec![d[0], d[1], d[2], r.gen_range(2..=5)]
}

pub fn dice<S: Scalar>(seed: u64) -> f64 {
    let mut r = rng(seed);
    let shape = loss_shape(&mut r);
    let p = distributions::<S>(&mut r, &shape);
    let q = one_hot_random::<S>(&mut r, &shape);
    gradcheck(&[p], |t, v| t.dice_loss(v[0], &q, 1e-6), fine_step::<S>())
}

pub fn cross_entropy<S: Scalar>(seed: u64) -> f64 {
    let mut r = rng(seed);
    let shape = loss_shape(&mut r);
    let p = distributions::<S>(&mut r, &shape);
    let q = one_hot_random::<S>(&mut r, &shape);
    gradcheck(&[p], |t, v| t.cross_entropy(v[0], &q), fine_step::<S>())
}

pub fn bce<S: Scalar>(seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut shape = loss_shape(&mut r);
    shape[3] = 1;
    let p = uniform::<S>(&mut r, &shape, 0.05, 0.95);
    let q = binary::<S>(&mut r, &shape);
    gradcheck(
        &[p],
        |t, v| {
            let b = t.binary_cross_entropy(v[0], &q)?;
            let d = t.dice_loss(v[0], &q, 1e-6)?;
            t.add(b, d)
        },
        fine_step::<S>(),
    )
}

/// The weighted objective through softmax heads, so that all three branch
/// losses meet in one scalar.
pub fn total<S: Scalar>(seed: u64) -> f64 {
    let mut r = rng(seed);
    let d = dims(&mut r, 1, 3);
    let (ca, cb) = (r.gen_range(2..=4), r.gen_range(2..=4));
    let la = uniform::<S>(&mut r, &[d[0], d[1], d[2], ca], -2.0, 2.0);
    let lb = uniform::<S>(&mut r, &[d[0], d[1], d[2], cb], -2.0, 2.0);
    let lm = uniform::<S>(&mut r, &[d[0], d[1], d[2], 2], -2.0, 2.0);
    let ta = one_hot_random::<S>(&mut r, &[d[0], d[1], d[2], ca]);
    let tb = one_hot_random::<S>(&mut r, &[d[0], d[1], d[2], cb]);
    let tm = binary::<S>(&mut r, &[d[0], d[1], d[2], 1]);
    let w = LossWeights::default();
    gradcheck(
        &[la, lb, lm],
        |t, v| {
            let pa = t.softmax_channels(v[0])?;
            let pb = t.softmax_channels(v[1])?;
            let pm = t.softmax_channels(v[2])?;
            let fg = t.select_channel(pm, 1)?;
            let a = ssa2d::losses::actor_loss(t, pa, &ta, w.dice_epsilon)?;
            let b = ssa2d::losses::action_loss(t, pb, &tb, w.dice_epsilon)?;
            let m = ssa2d::losses::mask_loss(t, fg, &tm, w.dice_epsilon)?;
            total_loss(t, a, b, m, &w)
        },
        step::<S>(),
    )
}

/// Checks a layer built into a [`ParamStore`]: inputs are the data tensors
/// followed by every stored parameter.
fn with_params<S: Scalar>(
    data: Vec<Tensor<S>>,
    store: &ParamStore<S>,
    f: impl Fn(&mut Tape<S>, &[Var], &Bound) -> ssa2d::Result<Var>,
) -> f64 {
    let n = data.len();
    let mut inputs = data;
    inputs.extend(store.iter().map(|(_, t)| t.clone()));
    gradcheck_kinked(
        &inputs,
        |t, v| {
            let bound = Bound::new(v[n..].to_vec());
            f(t, &v[..n], &bound)
        },
        fine_step::<S>(),
    )
}

pub fn atrous<S: Scalar>(seed: u64) -> f64 {
    let mut r = rng(seed);
    let d = dims(&mut r, 2, 4);
    let cin = r.gen_range(1..=2);
    let rates: Vec<usize> = (1..=r.gen_range(1..=3)).collect();
    let mut store = ParamStore::new();
    let mut init = Init::new(seed);
    let block = AtrousBlock::new(&mut store, &mut init, "a", cin, 2, 2, &rates).unwrap();
    let x = off_zero::<S>(&mut r, &[d[0], d[1], d[2], cin], 0.05);
    with_params(vec![x], &store, |t, v, b| {
        let parts = block.forward_parts(t, b, v[0])?;
        let p1 = project(t, parts.fused, seed)?;
        let mut acc = p1;
        for (i, &br) in parts.branches.iter().enumerate() {
            let p = project(t, br, seed + 10 + i as u64)?;
            acc = t.add(acc, p)?;
        }
        Ok(acc)
    })
}

pub fn ssa_mask<S: Scalar>(seed: u64) -> f64 {
    let mut r = rng(seed);
    let shape = small_shape(&mut r);
    let f = uniform::<S>(&mut r, &shape, -1.0, 1.0);
    let m = uniform::<S>(&mut r, &[shape[0], shape[1], shape[2], 1], 0.0, 1.0);
    gradcheck(
        &[f, m],
        |t, v| {
            let y = ssa_masking(t, v[0], Some(v[1]))?;
            project(t, y, seed)
        },
        step::<S>(),
    )
}

pub fn infusion<S: Scalar>(seed: u64) -> f64 {
    let mut r = rng(seed);
    let d = dims(&mut r, 1, 3);
    let (ca, cp) = (r.gen_range(1..=3), r.gen_range(1..=3));
    let fusion = if seed.is_multiple_of(2) { Fusion::Concat } else { Fusion::Add };
    let cp = if fusion == Fusion::Add { ca } else { cp };
    let fuse_in = if fusion == Fusion::Concat { ca + cp } else { ca };
    let mut store = ParamStore::new();
    let mut init = Init::new(seed);
    let fuse = Conv3d::same(&mut store, &mut init, "fuse", (fuse_in, 2), 1, 1).unwrap();
    let fa = uniform::<S>(&mut r, &[d[0], d[1], d[2], ca], -1.0, 1.0);
    let fp = uniform::<S>(&mut r, &[d[0], d[1], d[2], cp], -1.0, 1.0);
    with_params(vec![fa, fp], &store, |t, v, b| {
        let y = ap_infusion(t, b, &fuse, v[0], Some(v[1]), fusion)?;
        project(t, y, seed)
    })
}

pub type Case = (&'static str, fn(u64) -> f64, fn(u64) -> f64);

pub fn cases() -> Vec<Case> {
    vec![
        ("conv3d", conv::<f32>, conv::<f64>),
        ("deconv3d", deconv::<f32>, deconv::<f64>),
        ("maxpool3d", maxpool::<f32>, maxpool::<f64>),
        ("upsample_trilinear", trilinear::<f32>, trilinear::<f64>),
        ("resize_nearest", nearest::<f32>, nearest::<f64>),
        ("relu", relu::<f32>, relu::<f64>),
        ("sigmoid", sigmoid::<f32>, sigmoid::<f64>),
        ("softmax", softmax::<f32>, softmax::<f64>),
        ("mul", mul::<f32>, mul::<f64>),
        ("concat_select", concat_select::<f32>, concat_select::<f64>),
        ("add_scale_mean", add_scale_mean::<f32>, add_scale_mean::<f64>),
        ("dice_loss", dice::<f32>, dice::<f64>),
        ("cross_entropy", cross_entropy::<f32>, cross_entropy::<f64>),
        ("mask_loss", bce::<f32>, bce::<f64>),
        ("total_loss", total::<f32>, total::<f64>),
        ("atrous_block", atrous::<f32>, atrous::<f64>),
        ("ssa_masking", ssa_mask::<f32>, ssa_mask::<f64>),
        ("ap_infusion", infusion::<f32>, infusion::<f64>),
    ]
}

/// Worst single- and double-precision error of one case over all configs.
pub fn worst(case: &Case) -> (f64, f64) {
    (0..CONFIGS).fold((0.0f64, 0.0f64), |(a, b), s| (a.max((case.1)(s)), b.max((case.2)(s))))
}

/// The tiny network with fixed inputs, targets and nudged biases.
pub struct NetCase<S: Scalar> {
    pub model: Ssa2d<S>,
    video: Tensor<S>,
    teacher: Tensor<S>,
    actor: Tensor<S>,
    action: Tensor<S>,
    pub params: Vec<Tensor<S>>,
}

impl<S: Scalar> NetCase<S> {
    pub fn new() -> Self {
        let cfg = tiny_network();
        let model = Ssa2d::<S>::new(cfg.clone()).unwrap();
        let mut r = rng(3);
        let [t, h, w] = cfg.input;
        let video = uniform::<S>(&mut r, &[t, h, w, 3], 0.0, 1.0);
        let teacher = binary::<S>(&mut r, &[t, h, w, 1]);
        let actor = one_hot_random::<S>(&mut r, &[t, h, w, cfg.actor_classes]);
        let action = one_hot_random::<S>(&mut r, &[t, h, w, cfg.action_classes]);
        let mut params: Vec<Tensor<S>> = model.params.iter().map(|(_, t)| t.clone()).collect();
        // Biases start at zero, which is exactly where ReLU has its kink for
        // zero-padded borders; nudge them.
        for p in params.iter_mut().filter(|p| p.rank() == 1) {
            for v in p.data_mut() {
                *v = S::of(r.gen_range(0.01..0.1));
            }
        }
        NetCase {
            model,
            video,
            teacher,
            actor,
            action,
            params,
        }
    }

    /// Teacher-forced total loss and, with `track`, its parameter gradients.
    pub fn loss(&self, params: &[Tensor<S>], track: bool) -> (f64, Vec<Vec<f64>>) {
        let weights = ssa2d::LossWeights::default();
        let mut tape = Tape::new();
        let vars: Vec<_> = params
            .iter()
            .map(|p| if track { tape.param(p.clone()) } else { tape.constant(p.clone()) })
            .collect();
        let bound = ssa2d::layers::Bound::new(vars.clone());
        let v = tape.constant(self.video.clone());
        let out = self.model.forward(&mut tape, &bound, v, Some(&self.teacher)).unwrap();
        let eps = weights.dice_epsilon;
        let la = ssa2d::losses::actor_loss(&mut tape, out.actor_d, &self.actor, eps).unwrap();
        let lb = ssa2d::losses::action_loss(&mut tape, out.action_d, &self.action, eps).unwrap();
        let fg = tape.select_channel(out.stu_mask, 1).unwrap();
        let lm = ssa2d::losses::mask_loss(&mut tape, fg, &self.teacher, eps).unwrap();
        let total = ssa2d::losses::total_loss(&mut tape, la, lb, lm, &weights).unwrap();
        let value = tape.value(total).item().as_f64();
        if !track {
            return (value, Vec::new());
        }
        tape.backward(total).unwrap();
        let grads = vars
            .iter()
            .map(|&v| tape.grad(v).unwrap().iter().map(|g| g.as_f64()).collect())
            .collect();
        (value, grads)
    }
}

/// Analytic against Richardson central differences on a sample of
/// parameter coordinates. Returns the error and the coordinates kept.
pub fn network_error<S: Scalar>(h: f64) -> (f64, usize) {
    let case = NetCase::<S>::new();
    let mut params = case.params.clone();
    let (f0, grads) = case.loss(&params, true);
    let noise = S::epsilon().as_f64() * f0.abs() / h;
    let mut dropped = 0;
    let (mut a, mut n) = (Vec::new(), Vec::new());
    for (i, p) in case.params.iter().enumerate() {
        for s in 0..p.numel().min(12) {
            let j = (s * 7919 + i) % p.numel();
            let orig = p.data()[j];
            let mut central = |step: f64| {
                let (up_v, down_v) = (orig + S::of(step), orig - S::of(step));
                params[i].data_mut()[j] = up_v;
                let up = case.loss(&params, false).0;
                params[i].data_mut()[j] = down_v;
                let down = case.loss(&params, false).0;
                params[i].data_mut()[j] = orig;
                (up - down) / (up_v.as_f64() - down_v.as_f64())
            };
            let (coarse, fine) = (central(h), central(h / 2.0));
            // A kink inside the stencil makes the two widths disagree by far
            // more than their O(h²) truncation gap.
            if (coarse - fine).abs() > 2e-2 * fine.abs() + 8.0 * noise {
                dropped += 1;
                continue;
            }
            a.push(grads[i][j]);
            n.push((4.0 * fine - coarse) / 3.0);
        }
    }
    assert!(dropped * 4 <= a.len() + dropped, "{dropped} kinked coordinates");
    (rel_err(&a, &n), a.len())
}
