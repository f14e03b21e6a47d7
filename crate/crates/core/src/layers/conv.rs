//! 3D convolution and transposed convolution on channels-last volumes.
//!
//! Both layers reduce to the same gather: every output voxel sums
//! `x[i] · K[k]` over the tap/input pairs that reach it. Which pairs reach
//! which output is decided per axis by an [`AxisMap`], so the forward pass,
//! the input gradient and the kernel gradient share one engine and differ
//! only in how the maps were built.

use rayon::prelude::*;

use crate::autodiff::{Op, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{volume_dims, Scalar, Tensor};

/// Stride, dilation and zero padding of a 3D (transposed) convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: [usize; 3],
    pub dilation: [usize; 3],
    pub padding: [usize; 3],
}

impl Default for ConvSpec {
    fn default() -> Self {
        ConvSpec {
            stride: [1; 3],
            dilation: [1; 3],
            padding: [0; 3],
        }
    }
}

impl ConvSpec {
    /// Stride 1 with the padding that keeps every axis the same size.
    pub fn same(kernel: [usize; 3], dilation: [usize; 3]) -> Self {
        ConvSpec {
            stride: [1; 3],
            dilation,
            padding: [0, 1, 2].map(|a| dilation[a] * (kernel[a] - 1) / 2),
        }
    }

    pub fn strided(stride: [usize; 3], padding: [usize; 3]) -> Self {
        ConvSpec {
            stride,
            dilation: [1; 3],
            padding,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.stride.contains(&0) || self.dilation.contains(&0) {
            return Err(Error::shape(format!(
                "stride {:?} and dilation {:?} must be >= 1",
                self.stride, self.dilation
            )));
        }
        Ok(())
    }
}

/// Output length of a convolution along one axis, if at least one.
pub fn conv_out_len(input: usize, k: usize, stride: usize, dilation: usize, pad: usize) -> Option<usize> {
    let span = dilation * (k - 1) + 1;
    let padded = input + 2 * pad;
    (padded >= span).then(|| (padded - span) / stride + 1)
}

/// Output length of a transposed convolution along one axis, if at least one.
pub fn deconv_out_len(input: usize, k: usize, stride: usize, dilation: usize, pad: usize) -> Option<usize> {
    let full = (input - 1) * stride + dilation * (k - 1) + 1;
    (full > 2 * pad).then(|| full - 2 * pad)
}

/// Tap/input/output incidence along one axis.
#[derive(Clone, Debug)]
pub struct AxisMap {
    pub in_len: usize,
    pub out_len: usize,
    pub k_len: usize,
    by_out: Vec<Vec<(u32, u32)>>,
    by_in: Vec<Vec<(u32, u32)>>,
    by_k: Vec<Vec<(u32, u32)>>,
}

impl AxisMap {
    fn from_triples(in_len: usize, out_len: usize, k_len: usize, triples: &[(usize, usize, usize)]) -> Self {
        let mut by_out = vec![Vec::new(); out_len];
        let mut by_in = vec![Vec::new(); in_len];
        let mut by_k = vec![Vec::new(); k_len];
        for &(k, i, o) in triples {
            by_out[o].push((k as u32, i as u32));
            by_in[i].push((k as u32, o as u32));
            by_k[k].push((i as u32, o as u32));
        }
        AxisMap {
            in_len,
            out_len,
            k_len,
            by_out,
            by_in,
            by_k,
        }
    }

    /// Cross-correlation: input `o·stride − pad + k·dilation` feeds output `o`.
    pub fn conv(in_len: usize, k: usize, stride: usize, dilation: usize, pad: usize) -> Result<Self> {
        let out_len = conv_out_len(in_len, k, stride, dilation, pad).ok_or_else(|| {
            Error::shape(format!(
                "kernel {k} (dilation {dilation}) does not fit input {in_len} with padding {pad}"
            ))
        })?;
        let mut triples = Vec::new();
        for o in 0..out_len {
            for kk in 0..k {
                let i = (o * stride + kk * dilation) as isize - pad as isize;
                if (0..in_len as isize).contains(&i) {
                    triples.push((kk, i as usize, o));
                }
            }
        }
        Ok(Self::from_triples(in_len, out_len, k, &triples))
    }

    /// Transposed convolution: input `i` feeds output `i·stride − pad + k·dilation`.
    pub fn transposed(in_len: usize, k: usize, stride: usize, dilation: usize, pad: usize) -> Result<Self> {
        let out_len = deconv_out_len(in_len, k, stride, dilation, pad).ok_or_else(|| {
            Error::shape(format!(
                "transposed kernel {k} with padding {pad} leaves no output from input {in_len}"
            ))
        })?;
        let mut triples = Vec::new();
        for i in 0..in_len {
            for kk in 0..k {
                let o = (i * stride + kk * dilation) as isize - pad as isize;
                if (0..out_len as isize).contains(&o) {
                    triples.push((kk, i, o as usize));
                }
            }
        }
        triples.sort_by_key(|&(k, i, o)| (o, k, i));
        Ok(Self::from_triples(in_len, out_len, k, &triples))
    }

    pub(crate) fn inputs_of(&self, o: usize) -> &[(u32, u32)] {
        &self.by_out[o]
    }

    fn pairs(&self) -> u64 {
        self.by_out.iter().map(|v| v.len() as u64).sum()
    }
}

/// Everything the engine needs to run one (transposed) convolution.
#[derive(Clone, Debug)]
pub struct Geometry {
    pub axes: [AxisMap; 3],
    pub cin: usize,
    pub cout: usize,
}

impl Geometry {
    pub fn conv(input: [usize; 3], kernel: [usize; 3], cin: usize, cout: usize, spec: &ConvSpec) -> Result<Self> {
        spec.validate()?;
        let axes = [
            AxisMap::conv(input[0], kernel[0], spec.stride[0], spec.dilation[0], spec.padding[0])?,
            AxisMap::conv(input[1], kernel[1], spec.stride[1], spec.dilation[1], spec.padding[1])?,
            AxisMap::conv(input[2], kernel[2], spec.stride[2], spec.dilation[2], spec.padding[2])?,
        ];
        Ok(Geometry { axes, cin, cout })
    }

    pub fn transposed(input: [usize; 3], kernel: [usize; 3], cin: usize, cout: usize, spec: &ConvSpec) -> Result<Self> {
        spec.validate()?;
        let axes = [
            AxisMap::transposed(input[0], kernel[0], spec.stride[0], spec.dilation[0], spec.padding[0])?,
            AxisMap::transposed(input[1], kernel[1], spec.stride[1], spec.dilation[1], spec.padding[1])?,
            AxisMap::transposed(input[2], kernel[2], spec.stride[2], spec.dilation[2], spec.padding[2])?,
        ];
        Ok(Geometry { axes, cin, cout })
    }

    pub fn in_dims(&self) -> [usize; 3] {
        self.axes.each_ref().map(|a| a.in_len)
    }

    pub fn out_dims(&self) -> [usize; 3] {
        self.axes.each_ref().map(|a| a.out_len)
    }

    fn k_dims(&self) -> [usize; 3] {
        self.axes.each_ref().map(|a| a.k_len)
    }

    /// Multiply-adds of the forward pass, counted as two operations each.
    pub fn flops(&self) -> u64 {
        let taps: u64 = self.axes.iter().map(AxisMap::pairs).product();
        let out: u64 = self.out_dims().iter().map(|&d| d as u64).product();
        2 * taps * (self.cin * self.cout) as u64 + out * self.cout as u64
    }

    pub fn forward<S: Scalar>(&self, x: &[S], kernel: &[S], bias: Option<&[S]>) -> Vec<S> {
        let [ti, hi, wi] = self.in_dims();
        let [_, ho, wo] = self.out_dims();
        let [_, kh, kw] = self.k_dims();
        let (cin, cout) = (self.cin, self.cout);
        let [at, ah, aw] = &self.axes;
        debug_assert_eq!(x.len(), ti * hi * wi * cin);
        let mut out = vec![S::zero(); self.out_dims().iter().product::<usize>() * cout];
        if cout == 0 {
            return out;
        }
        out.par_chunks_mut(wo * cout).enumerate().for_each(|(row, chunk)| {
            let (ot, oh) = (row / ho, row % ho);
            for (ow, acc) in chunk.chunks_exact_mut(cout).enumerate() {
                if let Some(b) = bias {
                    acc.copy_from_slice(b);
                }
                for &(kt_, it) in &at.by_out[ot] {
                    for &(kh_, ih) in &ah.by_out[oh] {
                        for &(kw_, iw) in &aw.by_out[ow] {
                            let xo = ((it as usize * hi + ih as usize) * wi + iw as usize) * cin;
                            let ko = ((kt_ as usize * kh + kh_ as usize) * kw + kw_ as usize) * cin * cout;
                            let xrow = &x[xo..xo + cin];
                            let kmat = &kernel[ko..ko + cin * cout];
                            for (&xv, krow) in xrow.iter().zip(kmat.chunks_exact(cout)) {
                                for (a, &k) in acc.iter_mut().zip(krow) {
                                    *a += xv * k;
                                }
                            }
                        }
                    }
                }
            }
        });
        out
    }

    pub fn grad_input<S: Scalar>(&self, dout: &[S], kernel: &[S]) -> Vec<S> {
        let [ti, hi, wi] = self.in_dims();
        let [_, ho, wo] = self.out_dims();
        let [_, kh, kw] = self.k_dims();
        let (cin, cout) = (self.cin, self.cout);
        let [at, ah, aw] = &self.axes;
        let mut dx = vec![S::zero(); ti * hi * wi * cin];
        if cin == 0 {
            return dx;
        }
        dx.par_chunks_mut(wi * cin).enumerate().for_each(|(row, chunk)| {
            let (it, ih) = (row / hi, row % hi);
            for (iw, acc) in chunk.chunks_exact_mut(cin).enumerate() {
                for &(kt_, ot) in &at.by_in[it] {
                    for &(kh_, oh) in &ah.by_in[ih] {
                        for &(kw_, ow) in &aw.by_in[iw] {
                            let go = ((ot as usize * ho + oh as usize) * wo + ow as usize) * cout;
                            let ko = ((kt_ as usize * kh + kh_ as usize) * kw + kw_ as usize) * cin * cout;
                            let grow = &dout[go..go + cout];
                            let kmat = &kernel[ko..ko + cin * cout];
                            for (a, krow) in acc.iter_mut().zip(kmat.chunks_exact(cout)) {
                                let mut s = S::zero();
                                for (&k, &gv) in krow.iter().zip(grow) {
                                    s += k * gv;
                                }
                                *a += s;
                            }
                        }
                    }
                }
            }
        });
        dx
    }

    pub fn grad_kernel<S: Scalar>(&self, x: &[S], dout: &[S]) -> Vec<S> {
        let [_, hi, wi] = self.in_dims();
        let [_, ho, wo] = self.out_dims();
        let [kt, kh, kw] = self.k_dims();
        let (cin, cout) = (self.cin, self.cout);
        let [at, ah, aw] = &self.axes;
        let mut dk = vec![S::zero(); kt * kh * kw * cin * cout];
        if cin * cout == 0 {
            return dk;
        }
        dk.par_chunks_mut(cin * cout).enumerate().for_each(|(tap, acc)| {
            let (kt_, rest) = (tap / (kh * kw), tap % (kh * kw));
            let (kh_, kw_) = (rest / kw, rest % kw);
            for &(it, ot) in &at.by_k[kt_] {
                for &(ih, oh) in &ah.by_k[kh_] {
                    for &(iw, ow) in &aw.by_k[kw_] {
                        let xo = ((it as usize * hi + ih as usize) * wi + iw as usize) * cin;
                        let go = ((ot as usize * ho + oh as usize) * wo + ow as usize) * cout;
                        let xrow = &x[xo..xo + cin];
                        let grow = &dout[go..go + cout];
                        for (&xv, arow) in xrow.iter().zip(acc.chunks_exact_mut(cout)) {
                            for (a, &gv) in arow.iter_mut().zip(grow) {
                                *a += xv * gv;
                            }
                        }
                    }
                }
            }
        });
        dk
    }

    pub fn grad_bias<S: Scalar>(&self, dout: &[S]) -> Vec<S> {
        let mut db = vec![S::zero(); self.cout];
        for row in dout.chunks_exact(self.cout) {
            for (a, &g) in db.iter_mut().zip(row) {
                *a += g;
            }
        }
        db
    }
}

fn kernel_dims(shape: &[usize]) -> Result<([usize; 3], usize, usize)> {
    match *shape {
        [kt, kh, kw, ci, co] if kt * kh * kw > 0 => Ok(([kt, kh, kw], ci, co)),
        _ => Err(Error::shape(format!(
            "kernel must be [kt, kh, kw, in, out] with positive extents, got {shape:?}"
        ))),
    }
}

/// Parameters of a standalone 3D convolution layer.
#[derive(Clone, Debug)]
pub struct Conv3dParams<S = f32> {
    /// `[kt, kh, kw, in_ch, out_ch]`.
    pub kernel: Tensor<S>,
    /// `[out_ch]`.
    pub bias: Tensor<S>,
    pub spec: ConvSpec,
}

impl<S: Scalar> Conv3dParams<S> {
    pub fn conv3d(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let w = tape.constant(self.kernel.clone());
        let b = tape.constant(self.bias.clone());
        let y = tape.conv3d(xv, w, Some(b), &self.spec)?;
        Ok(tape.take_value(y))
    }

    pub fn deconv3d(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let w = tape.constant(self.kernel.clone());
        let b = tape.constant(self.bias.clone());
        let y = tape.deconv3d(xv, w, Some(b), &self.spec)?;
        Ok(tape.take_value(y))
    }
}

impl<S: Scalar> Tape<S> {
    fn conv_like(&mut self, x: Var, w: Var, b: Option<Var>, spec: &ConvSpec, transposed: bool) -> Result<Var> {
        let what = if transposed { "deconv3d" } else { "conv3d" };
        let (dims, cin) = volume_dims(self.shape(x), what)?;
        let (k, kin, kout) = kernel_dims(self.shape(w))?;
        if kin != cin {
            return Err(Error::shape(format!(
                "{what}: input has {cin} channels but kernel expects {kin}"
            )));
        }
        if let Some(b) = b {
            if self.shape(b) != [kout] {
                return Err(Error::shape(format!(
                    "{what}: bias shape {:?} does not match {kout} output channels",
                    self.shape(b)
                )));
            }
        }
        let geom = if transposed {
            Geometry::transposed(dims, k, cin, kout, spec)?
        } else {
            Geometry::conv(dims, k, cin, kout, spec)?
        };
        let data = geom.forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
        );
        let [to, ho, wo] = geom.out_dims();
        let out = Tensor::new(&[to, ho, wo, kout], data)?;
        let flops = geom.flops();
        Ok(self.push(
            out,
            Op::Conv {
                x,
                w,
                b,
                geom: geom.into(),
            },
            flops,
        ))
    }

    /// 3D cross-correlation of a `[T, H, W, Cin]` volume with a
    /// `[kt, kh, kw, Cin, Cout]` kernel plus optional bias.
    pub fn conv3d(&mut self, x: Var, w: Var, b: Option<Var>, spec: &ConvSpec) -> Result<Var> {
        self.conv_like(x, w, b, spec, false)
    }

    /// 3D transposed convolution; the kernel keeps the `[.., Cin, Cout]`
    /// layout of [`Tape::conv3d`].
    pub fn deconv3d(&mut self, x: Var, w: Var, b: Option<Var>, spec: &ConvSpec) -> Result<Var> {
        self.conv_like(x, w, b, spec, true)
    }
}
