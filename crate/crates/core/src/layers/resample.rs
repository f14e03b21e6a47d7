//! Separable resampling of `[T, H, W, C]` volumes: trilinear upsampling
//! and nearest-neighbour resizing.

use crate::autodiff::{Op, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{volume_dims, Scalar, Tensor};

/// For every output index of one axis, the input indices and weights it
/// blends.
type AxisWeights = Vec<Vec<(usize, f64)>>;

#[derive(Clone, Debug)]
pub struct ResamplePlan {
    in_dims: [usize; 3],
    out_dims: [usize; 3],
    channels: usize,
    axes: [AxisWeights; 3],
}

/// Linear weights with half-pixel centres: output `o` samples input
/// coordinate `(o + 0.5) / factor − 0.5`, clamped to the valid range.
fn linear_axis(n: usize, factor: usize) -> AxisWeights {
    (0..n * factor)
        .map(|o| {
            let src = ((o as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            let lambda = src - i0 as f64;
            if i0 == i1 || lambda == 0.0 {
                vec![(i0, 1.0)]
            } else {
                vec![(i0, 1.0 - lambda), (i1, lambda)]
            }
        })
        .collect()
}

fn nearest_axis(n: usize, m: usize) -> AxisWeights {
    (0..m)
        .map(|o| {
            let i = (((o as f64 + 0.5) * n as f64 / m as f64).floor() as usize).min(n - 1);
            vec![(i, 1.0)]
        })
        .collect()
}

impl ResamplePlan {
    pub fn trilinear(in_dims: [usize; 3], channels: usize, factor: [usize; 3]) -> Result<Self> {
        if factor.contains(&0) {
            return Err(Error::shape(format!("upsample factor {factor:?} must be >= 1")));
        }
        Ok(ResamplePlan {
            in_dims,
            out_dims: [0, 1, 2].map(|a| in_dims[a] * factor[a]),
            channels,
            axes: [0, 1, 2].map(|a| linear_axis(in_dims[a], factor[a])),
        })
    }

    pub fn nearest(in_dims: [usize; 3], channels: usize, out_dims: [usize; 3]) -> Result<Self> {
        if out_dims.contains(&0) {
            return Err(Error::shape(format!("resize target {out_dims:?} is empty")));
        }
        Ok(ResamplePlan {
            in_dims,
            out_dims,
            channels,
            axes: [0, 1, 2].map(|a| nearest_axis(in_dims[a], out_dims[a])),
        })
    }

    pub fn out_dims(&self) -> [usize; 3] {
        self.out_dims
    }

    /// Dims of the intermediate volume after resampling axes `..=axis`.
    fn dims_after(&self, axis: Option<usize>) -> [usize; 3] {
        let mut d = self.in_dims;
        if let Some(axis) = axis {
            d[..=axis].copy_from_slice(&self.out_dims[..=axis]);
        }
        d
    }

    fn flops(&self) -> u64 {
        (0..3)
            .map(|a| {
                let d = self.dims_after(Some(a));
                let pairs: usize = self.axes[a].iter().map(Vec::len).sum();
                let rest: usize = d.iter().enumerate().filter(|&(i, _)| i != a).map(|(_, &v)| v).product();
                (2 * pairs * rest * self.channels) as u64
            })
            .sum()
    }

    pub fn apply<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        let mut cur = x.to_vec();
        for a in 0..3usize {
            let dims = self.dims_after(a.checked_sub(1));
            cur = self.axis_forward(&cur, dims, a);
        }
        cur
    }

    pub fn adjoint<S: Scalar>(&self, g: &[S]) -> Vec<S> {
        let mut cur = g.to_vec();
        for a in (0..3usize).rev() {
            let dims = self.dims_after(a.checked_sub(1));
            cur = self.axis_adjoint(&cur, dims, a);
        }
        cur
    }

    fn split(&self, dims: [usize; 3], axis: usize) -> (usize, usize) {
        let outer: usize = dims[..axis].iter().product();
        let inner: usize = dims[axis + 1..].iter().product::<usize>() * self.channels;
        (outer, inner)
    }

    fn axis_forward<S: Scalar>(&self, x: &[S], dims: [usize; 3], axis: usize) -> Vec<S> {
        let (outer, inner) = self.split(dims, axis);
        let (n, m) = (dims[axis], self.out_dims[axis]);
        let weights: Vec<Vec<(usize, S)>> = self.axes[axis]
            .iter()
            .map(|ws| ws.iter().map(|&(i, w)| (i, S::of(w))).collect())
            .collect();
        let mut out = vec![S::zero(); outer * m * inner];
        for b in 0..outer {
            for (o, ws) in weights.iter().enumerate() {
                let dst = &mut out[(b * m + o) * inner..(b * m + o + 1) * inner];
                for &(i, w) in ws {
                    let src = &x[(b * n + i) * inner..(b * n + i + 1) * inner];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d += w * s;
                    }
                }
            }
        }
        out
    }

    fn axis_adjoint<S: Scalar>(&self, g: &[S], dims: [usize; 3], axis: usize) -> Vec<S> {
        let (outer, inner) = self.split(dims, axis);
        let (n, m) = (dims[axis], self.out_dims[axis]);
        let mut dx = vec![S::zero(); outer * n * inner];
        for b in 0..outer {
            for (o, ws) in self.axes[axis].iter().enumerate() {
                let src = &g[(b * m + o) * inner..(b * m + o + 1) * inner];
                for &(i, w) in ws {
                    let w = S::of(w);
                    let dst = &mut dx[(b * n + i) * inner..(b * n + i + 1) * inner];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d += w * s;
                    }
                }
            }
        }
        dx
    }
}

/// Nearest-neighbour resize outside any tape, used for label and mask volumes.
pub fn resize_nearest<S: Scalar>(x: &Tensor<S>, out_dims: [usize; 3]) -> Result<Tensor<S>> {
    let (dims, c) = volume_dims(x.shape(), "resize_nearest")?;
    let plan = ResamplePlan::nearest(dims, c, out_dims)?;
    Tensor::new(&[out_dims[0], out_dims[1], out_dims[2], c], plan.apply(x.data()))
}

impl<S: Scalar> Tape<S> {
    fn resample(&mut self, x: Var, plan: ResamplePlan) -> Result<Var> {
        let [t, h, w] = plan.out_dims();
        let data = plan.apply(self.value(x).data());
        let out = Tensor::new(&[t, h, w, plan.channels], data)?;
        let flops = plan.flops();
        Ok(self.push(
            out,
            Op::Resample {
                x,
                plan: plan.into(),
            },
            flops,
        ))
    }

    /// Trilinear upsampling by integer factors per axis.
    pub fn upsample_trilinear(&mut self, x: Var, factor: [usize; 3]) -> Result<Var> {
        let (dims, c) = volume_dims(self.shape(x), "upsample_trilinear")?;
        self.resample(x, ResamplePlan::trilinear(dims, c, factor)?)
    }

    pub fn resize_nearest(&mut self, x: Var, out_dims: [usize; 3]) -> Result<Var> {
        let (dims, c) = volume_dims(self.shape(x), "resize_nearest")?;
        self.resample(x, ResamplePlan::nearest(dims, c, out_dims)?)
    }
}
