//! Layer and metric implementations against the loop oracles in
//! [`super`]. Each check returns the worst error over its random configs.

use rand::Rng;
use ssa2d::layers::ConvSpec;
use ssa2d::metrics::{evaluate, MetricOptions, Task};
use ssa2d::{Tape, Tensor};

use super::*;

pub const CONFIGS: u64 = 20;

struct ConvCase {
    x: Tensor<f64>,
    w: Tensor<f64>,
    b: Vec<f64>,
    spec: ConvSpec,
}

fn conv_case(seed: u64, transposed: bool) -> ConvCase {
    let mut r = rng(seed);
    let mut k = [0; 3];
    let mut spec = ConvSpec::default();
    let mut dims = [0; 3];
    for a in 0..3 {
        k[a] = r.gen_range(1..=3);
        spec.stride[a] = r.gen_range(1..=2);
        spec.dilation[a] = r.gen_range(1..=2);
        let span = spec.dilation[a] * (k[a] - 1);
        if transposed {
            dims[a] = r.gen_range(2..=4);
            spec.padding[a] = r.gen_range(0..=span / 2);
        } else {
            spec.padding[a] = r.gen_range(0..=span / 2);
            dims[a] = r.gen_range(span + 1..=span + 5).saturating_sub(2 * spec.padding[a]).max(1);
        }
    }
    let cin = r.gen_range(1..=3);
    let cout = r.gen_range(1..=3);
    let x = uniform(&mut r, &[dims[0], dims[1], dims[2], cin], -1.0, 1.0);
    let w = uniform(&mut r, &[k[0], k[1], k[2], cin, cout], -1.0, 1.0);
    let b = (0..cout).map(|_| r.gen_range(-0.5..0.5)).collect();
    ConvCase { x, w, b, spec }
}

fn run(c: &ConvCase, transposed: bool) -> Tensor<f64> {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(c.x.clone());
    let w = tape.constant(c.w.clone());
    let b = tape.constant(Tensor::new(&[c.b.len()], c.b.clone()).unwrap());
    let y = if transposed {
        tape.deconv3d(x, w, Some(b), &c.spec)
    } else {
        tape.conv3d(x, w, Some(b), &c.spec)
    }
    .unwrap();
    tape.take_value(y)
}

fn compare(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    rel_err(a.data(), b.data())
}

pub fn conv_worst() -> f64 {
    (0..CONFIGS)
        .map(|s| {
            let c = conv_case(s, false);
            compare(&run(&c, false), &naive_conv(&c.x, &c.w, Some(&c.b), &c.spec))
        })
        .fold(0.0, f64::max)
}

pub fn deconv_worst() -> f64 {
    (0..CONFIGS)
        .map(|s| {
            let c = conv_case(100 + s, true);
            compare(&run(&c, true), &naive_deconv(&c.x, &c.w, Some(&c.b), &c.spec))
        })
        .fold(0.0, f64::max)
}

pub fn maxpool_worst() -> f64 {
    (0..CONFIGS)
        .map(|s| {
            let mut r = rng(200 + s);
            let window = [0; 3].map(|_| r.gen_range(1..=3));
            let stride = [0; 3].map(|_| r.gen_range(1..=3));
            let shape = [
                window[0] + r.gen_range(0..4),
                window[1] + r.gen_range(0..4),
                window[2] + r.gen_range(0..4),
                r.gen_range(1..=3),
            ];
            let x = uniform::<f64>(&mut r, &shape, -1.0, 1.0);
            let mut tape = Tape::new();
            let v = tape.constant(x.clone());
            let y = tape.maxpool3d(v, window, stride).unwrap();
            compare(tape.value(y), &naive_maxpool(&x, window, stride))
        })
        .fold(0.0, f64::max)
}

/// `<deconv(x), y>` against `<x, conv(y)>` where the conv kernel is the
/// deconv kernel with its channel axes swapped.
pub fn adjoint_worst() -> f64 {
    (0..CONFIGS)
        .map(|s| {
            let c = conv_case(300 + s, true);
            let k = c.w.shape().to_vec();
            let (cin, cout) = (k[3], k[4]);
            let mut swapped = vec![0.0; c.w.numel()];
            for tap in 0..k[0] * k[1] * k[2] {
                for ci in 0..cin {
                    for co in 0..cout {
                        swapped[(tap * cout + co) * cin + ci] = c.w.data()[(tap * cin + ci) * cout + co];
                    }
                }
            }
            let wt = Tensor::new(&[k[0], k[1], k[2], cout, cin], swapped).unwrap();

            let mut tape = Tape::<f64>::new();
            let xv = tape.constant(c.x.clone());
            let wv = tape.constant(c.w.clone());
            let dx = tape.deconv3d(xv, wv, None, &c.spec).unwrap();
            let mut r = rng(400 + s);
            let y = uniform::<f64>(&mut r, tape.shape(dx), -1.0, 1.0);
            let yv = tape.constant(y);
            let wtv = tape.constant(wt);
            let cy = tape.conv3d(yv, wtv, None, &c.spec).unwrap();
            assert_eq!(tape.shape(cy), c.x.shape());

            let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
            let lhs = dot(tape.value(dx).data(), tape.value(yv).data());
            let rhs = dot(c.x.data(), tape.value(cy).data());
            (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-12)
        })
        .fold(0.0, f64::max)
}

fn mean_of(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    if v.is_empty() {
        1.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Number of random label volumes on which `evaluate` disagrees with the
/// counting oracle in any field.
pub fn metric_mismatches(volumes: u64) -> usize {
    let opts = MetricOptions::default();
    (0..volumes)
        .filter(|&s| {
            let mut r = rng(500 + s);
            let classes = r.gen_range(2..=6);
            let n = r.gen_range(1..=400);
            // Skewed draws so some classes go missing from one side or both.
            let draw = |r: &mut rand_chacha::ChaCha8Rng| {
                let hi = r.gen_range(1..=classes as i32);
                r.gen_range(0..hi)
            };
            let gt: Vec<i32> = (0..n).map(|_| draw(&mut r)).collect();
            let pred: Vec<i32> = (0..n).map(|_| draw(&mut r)).collect();
            let m = evaluate(&pred, &gt, classes, Task::Actor, &opts).unwrap();
            let o = count_oracle(&pred, &gt, classes);
            let ave = mean_of(o.class_acc.iter().flatten().copied());
            let miou = mean_of(o.class_iou.iter().skip(1).flatten().copied());
            m.glo != o.glo || m.class_accuracy != o.class_acc || m.class_iou != o.class_iou || m.ave != ave || m.miou != miou
        })
        .count()
}
