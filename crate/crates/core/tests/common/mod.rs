#![allow(dead_code)]

pub mod equivalence;
pub mod gradsuite;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ssa2d::layers::ConvSpec;
use ssa2d::network::{Features, NetworkConfig};
use ssa2d::{Result, Scalar, Tape, Tensor, Var};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform<S: Scalar>(r: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<S> {
    Tensor::from_fn(shape, |_| S::of(r.gen_range(lo..hi)))
}

/// Values bounded away from zero so ReLU has no kink within `gap`.
pub fn off_zero<S: Scalar>(r: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor<S> {
    Tensor::from_fn(shape, |_| {
        let v: f64 = r.gen_range(gap..1.0);
        S::of(if r.gen_bool(0.5) { v } else { -v })
    })
}

/// Distinct values spaced `gap` apart in random order, so max pooling has
/// a strict winner in every window.
pub fn distinct<S: Scalar>(r: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor<S> {
    use rand::seq::SliceRandom;
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 * gap).collect();
    v.shuffle(r);
    Tensor::new(shape, v.into_iter().map(S::of).collect()).unwrap()
}

/// Per-position distributions from random logits.
pub fn distributions<S: Scalar>(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<S> {
    let c = *shape.last().unwrap();
    let mut data = Vec::new();
    for _ in 0..shape.iter().product::<usize>() / c {
        let e: Vec<f64> = (0..c).map(|_| r.gen_range(-1.5f64..1.5).exp()).collect();
        let z: f64 = e.iter().sum();
        data.extend(e.iter().map(|v| S::of(v / z)));
    }
    Tensor::new(shape, data).unwrap()
}

pub fn one_hot_random<S: Scalar>(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<S> {
    let c = *shape.last().unwrap();
    let labels: Vec<i32> = (0..shape.iter().product::<usize>() / c)
        .map(|_| r.gen_range(0..c as i32))
        .collect();
    ssa2d::losses::one_hot(&labels, &shape[..shape.len() - 1], c).unwrap()
}

pub fn binary<S: Scalar>(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<S> {
    Tensor::from_fn(shape, |_| if r.gen_bool(0.5) { S::one() } else { S::zero() })
}

/// `Σ y ⊙ R` for a fixed pseudo-random `R`, turning any output into a
/// scalar whose gradient exercises every output element.
pub fn project<S: Scalar>(tape: &mut Tape<S>, y: Var, seed: u64) -> Result<Var> {
    let mut r = rng(seed ^ 0xABCD);
    let w = uniform::<S>(&mut r, tape.shape(y), -1.0, 1.0);
    let w = tape.constant(w);
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

fn is_f64<S: Scalar>() -> bool {
    std::mem::size_of::<S>() == 8
}

/// Finite-difference step at precision `S` for inputs of unbounded range.
pub fn step<S: Scalar>() -> f64 {
    if is_f64::<S>() {
        1e-6
    } else {
        3e-2
    }
}

/// Smaller step for probabilities and for functions with kinks.
pub fn fine_step<S: Scalar>() -> f64 {
    if is_f64::<S>() {
        1e-6
    } else {
        1e-2
    }
}

/// Relative error `‖a − n‖ / max(‖a‖, ‖n‖)` between the tape gradient and
/// central differences, over every element of every input.
pub fn gradcheck<S: Scalar>(
    inputs: &[Tensor<S>],
    f: impl Fn(&mut Tape<S>, &[Var]) -> Result<Var>,
    h: f64,
) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &vars).unwrap();
    tape.backward(loss).unwrap();
    let analytic: Vec<f64> = vars
        .iter()
        .flat_map(|&v| tape.grad(v).unwrap().iter().map(|g| g.as_f64()).collect::<Vec<_>>())
        .collect();

    let eval = |xs: &[Tensor<S>]| -> f64 {
        let mut t = Tape::new();
        let vs: Vec<Var> = xs.iter().map(|x| t.constant(x.clone())).collect();
        let l = f(&mut t, &vs).unwrap();
        t.value(l).item().as_f64()
    };
    let mut numeric = Vec::with_capacity(analytic.len());
    let mut xs = inputs.to_vec();
    for i in 0..xs.len() {
        for j in 0..xs[i].numel() {
            let d1 = central(&mut xs, i, j, h, &eval);
            let d2 = central(&mut xs, i, j, h / 2.0, &eval);
            // Richardson extrapolation cancels the h² term.
            numeric.push((4.0 * d2 - d1) / 3.0);
        }
    }
    rel_err(&analytic, &numeric)
}

/// Central difference along one coordinate, dividing by the step actually
/// representable at precision `S`.
fn central<S: Scalar>(xs: &mut [Tensor<S>], i: usize, j: usize, h: f64, eval: &impl Fn(&[Tensor<S>]) -> f64) -> f64 {
    let orig = xs[i].data()[j];
    let hi = S::of(orig.as_f64() + h);
    let lo = S::of(orig.as_f64() - h);
    xs[i].data_mut()[j] = hi;
    let up = eval(xs);
    xs[i].data_mut()[j] = lo;
    let down = eval(xs);
    xs[i].data_mut()[j] = orig;
    (up - down) / (hi.as_f64() - lo.as_f64())
}

/// Like [`gradcheck`] for piecewise-smooth functions with ReLU kinks.
/// Coordinates whose forward and backward slopes disagree have a kink
/// within the step and are left out; at most a quarter may be dropped.
pub fn gradcheck_kinked<S: Scalar>(
    inputs: &[Tensor<S>],
    f: impl Fn(&mut Tape<S>, &[Var]) -> Result<Var>,
    h: f64,
) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &vars).unwrap();
    let f0 = tape.value(loss).item().as_f64();
    tape.backward(loss).unwrap();
    let analytic: Vec<f64> = vars
        .iter()
        .flat_map(|&v| tape.grad(v).unwrap().iter().map(|g| g.as_f64()).collect::<Vec<_>>())
        .collect();
    let eval = |xs: &[Tensor<S>]| -> f64 {
        let mut t = Tape::new();
        let vs: Vec<Var> = xs.iter().map(|x| t.constant(x.clone())).collect();
        let l = f(&mut t, &vs).unwrap();
        t.value(l).item().as_f64()
    };
    let unit = if is_f64::<S>() { f64::EPSILON } else { f32::EPSILON as f64 };
    let noise = 4.0 * unit * f0.abs().max(1.0) / h;
    let (mut a_kept, mut n_kept) = (Vec::new(), Vec::new());
    let mut xs = inputs.to_vec();
    let mut k = 0;
    for i in 0..xs.len() {
        for j in 0..xs[i].numel() {
            let orig = xs[i].data()[j];
            let hi = S::of(orig.as_f64() + h);
            let lo = S::of(orig.as_f64() - h);
            xs[i].data_mut()[j] = hi;
            let up = eval(&xs);
            xs[i].data_mut()[j] = lo;
            let down = eval(&xs);
            xs[i].data_mut()[j] = orig;
            let fwd = (up - f0) / (hi.as_f64() - orig.as_f64());
            let bwd = (f0 - down) / (orig.as_f64() - lo.as_f64());
            if (fwd - bwd).abs() <= 1e-3 * (fwd.abs() + bwd.abs()) + noise {
                a_kept.push(analytic[k]);
                n_kept.push((up - down) / (hi.as_f64() - lo.as_f64()));
            }
            k += 1;
        }
    }
    let dropped = analytic.len() - a_kept.len();
    assert!(
        dropped * 4 <= analytic.len(),
        "{dropped} of {} coordinates straddle kinks",
        analytic.len()
    );
    rel_err(&a_kept, &n_kept)
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

// ---------------------------------------------------------------------------
// Loop oracles
// ---------------------------------------------------------------------------

fn idx(dims: &[usize], at: &[usize]) -> usize {
    at.iter().zip(dims).fold(0, |acc, (&i, &d)| acc * d + i)
}

pub fn out_len(n: usize, k: usize, s: usize, p: usize, d: usize) -> usize {
    (n + 2 * p - d * (k - 1) - 1) / s + 1
}

/// Direct seven-loop cross-correlation in f64.
pub fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&[f64]>, spec: &ConvSpec) -> Tensor<f64> {
    let xs = x.shape();
    let ks = w.shape();
    let (cin, cout) = (ks[3], ks[4]);
    let od: Vec<usize> = (0..3)
        .map(|a| out_len(xs[a], ks[a], spec.stride[a], spec.padding[a], spec.dilation[a]))
        .collect();
    let mut y = vec![0.0; od[0] * od[1] * od[2] * cout];
    for ot in 0..od[0] {
        for oh in 0..od[1] {
            for ow in 0..od[2] {
                for co in 0..cout {
                    let mut acc = b.map_or(0.0, |b| b[co]);
                    for kt in 0..ks[0] {
                        for kh in 0..ks[1] {
                            for kw in 0..ks[2] {
                                let pos = [(ot, kt), (oh, kh), (ow, kw)]
                                    .iter()
                                    .enumerate()
                                    .map(|(a, &(o, k))| {
                                        (o * spec.stride[a] + k * spec.dilation[a]) as i64 - spec.padding[a] as i64
                                    })
                                    .collect::<Vec<_>>();
                                if (0..3).any(|a| pos[a] < 0 || pos[a] >= xs[a] as i64) {
                                    continue;
                                }
                                for ci in 0..cin {
                                    let xi = idx(xs, &[pos[0] as usize, pos[1] as usize, pos[2] as usize, ci]);
                                    let wi = idx(ks, &[kt, kh, kw, ci, co]);
                                    acc += x.data()[xi] * w.data()[wi];
                                }
                            }
                        }
                    }
                    y[idx(&[od[0], od[1], od[2], cout], &[ot, oh, ow, co])] = acc;
                }
            }
        }
    }
    Tensor::new(&[od[0], od[1], od[2], cout], y).unwrap()
}

/// Transposed convolution as a scatter: each input voxel adds `x · K` at
/// `i·s − p + k·d`.
pub fn naive_deconv(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&[f64]>, spec: &ConvSpec) -> Tensor<f64> {
    let xs = x.shape();
    let ks = w.shape();
    let (cin, cout) = (ks[3], ks[4]);
    let od: Vec<usize> = (0..3)
        .map(|a| (xs[a] - 1) * spec.stride[a] + spec.dilation[a] * (ks[a] - 1) + 1 - 2 * spec.padding[a])
        .collect();
    let oshape = [od[0], od[1], od[2], cout];
    let mut y = vec![0.0; od.iter().product::<usize>() * cout];
    for it in 0..xs[0] {
        for ih in 0..xs[1] {
            for iw in 0..xs[2] {
                for kt in 0..ks[0] {
                    for kh in 0..ks[1] {
                        for kw in 0..ks[2] {
                            let pos: Vec<i64> = [(it, kt), (ih, kh), (iw, kw)]
                                .iter()
                                .enumerate()
                                .map(|(a, &(i, k))| {
                                    (i * spec.stride[a] + k * spec.dilation[a]) as i64 - spec.padding[a] as i64
                                })
                                .collect();
                            if (0..3).any(|a| pos[a] < 0 || pos[a] >= od[a] as i64) {
                                continue;
                            }
                            for ci in 0..cin {
                                let xv = x.data()[idx(xs, &[it, ih, iw, ci])];
                                for co in 0..cout {
                                    let o = idx(&oshape, &[pos[0] as usize, pos[1] as usize, pos[2] as usize, co]);
                                    y[o] += xv * w.data()[idx(ks, &[kt, kh, kw, ci, co])];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    if let Some(b) = b {
        for (i, v) in y.iter_mut().enumerate() {
            *v += b[i % cout];
        }
    }
    Tensor::new(&oshape, y).unwrap()
}

/// Unpadded max pooling.
pub fn naive_maxpool(x: &Tensor<f64>, window: [usize; 3], stride: [usize; 3]) -> Tensor<f64> {
    let xs = x.shape();
    let c = xs[3];
    let od: Vec<usize> = (0..3).map(|a| (xs[a] - window[a]) / stride[a] + 1).collect();
    let oshape = [od[0], od[1], od[2], c];
    let mut y = vec![f64::NEG_INFINITY; od.iter().product::<usize>() * c];
    for ot in 0..od[0] {
        for oh in 0..od[1] {
            for ow in 0..od[2] {
                for ch in 0..c {
                    let o = idx(&oshape, &[ot, oh, ow, ch]);
                    for a in 0..window[0] {
                        for b in 0..window[1] {
                            for d in 0..window[2] {
                                let v = x.data()[idx(
                                    xs,
                                    &[ot * stride[0] + a, oh * stride[1] + b, ow * stride[2] + d, ch],
                                )];
                                y[o] = y[o].max(v);
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&oshape, y).unwrap()
}

/// Per-class counts by brute force over `(pred, gt)` pairs.
pub struct CountOracle {
    pub glo: f64,
    pub class_acc: Vec<Option<f64>>,
    pub class_iou: Vec<Option<f64>>,
}

pub fn count_oracle(pred: &[i32], gt: &[i32], classes: usize) -> CountOracle {
    let mut class_acc = Vec::new();
    let mut class_iou = Vec::new();
    for c in 0..classes as i32 {
        let in_gt = gt.iter().filter(|&&g| g == c).count();
        let both = pred.iter().zip(gt).filter(|&(&p, &g)| p == c && g == c).count();
        let either = pred.iter().zip(gt).filter(|&(&p, &g)| p == c || g == c).count();
        class_acc.push((in_gt > 0).then(|| both as f64 / in_gt as f64));
        class_iou.push((either > 0).then(|| both as f64 / either as f64));
    }
    let correct = pred.iter().zip(gt).filter(|(p, g)| p == g).count();
    CountOracle {
        glo: correct as f64 / gt.len() as f64,
        class_acc,
        class_iou,
    }
}

/// A network small enough for finite differences over its parameters.
pub fn tiny_network() -> NetworkConfig {
    NetworkConfig {
        input: [4, 16, 16],
        actor_classes: 2,
        action_classes: 2,
        ap_channels: 2,
        encoder_widths: vec![3, 4],
        encoder_strides: vec![[2, 2, 2], [1, 2, 2]],
        decoder_width: 3,
        actor_stages: 1,
        mask_stages: 1,
        atrous_rates: vec![1, 2],
        atrous_width: 2,
        pyramid_levels: 2,
        features: Features::default(),
        seed: 5,
        ..NetworkConfig::toy()
    }
}
