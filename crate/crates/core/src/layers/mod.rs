//! Spatio-temporal layers built on the tape: (transposed) 3D convolution,
//! max pooling, resampling and the multi-rate atrous block.

pub mod conv;
pub mod params;
pub mod pool;
pub mod resample;

pub use conv::{conv_out_len, deconv_out_len, Conv3dParams, ConvSpec, Geometry};
pub use params::{Bound, Init, ParamId, ParamStore};
pub use resample::{resize_nearest, ResamplePlan};

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::tensor::{Scalar, Tensor};

/// A learned convolution (or transposed convolution) with bias.
#[derive(Clone, Debug)]
pub struct Conv3d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub kernel: [usize; 3],
    pub cin: usize,
    pub cout: usize,
    pub spec: ConvSpec,
    pub transposed: bool,
}

impl Conv3d {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        init: &mut Init,
        name: &str,
        (cin, cout): (usize, usize),
        kernel: [usize; 3],
        spec: ConvSpec,
    ) -> Result<Self> {
        Self::build(store, init, name, (cin, cout), kernel, spec, false)
    }

    pub fn transposed<S: Scalar>(
        store: &mut ParamStore<S>,
        init: &mut Init,
        name: &str,
        (cin, cout): (usize, usize),
        kernel: [usize; 3],
        spec: ConvSpec,
    ) -> Result<Self> {
        Self::build(store, init, name, (cin, cout), kernel, spec, true)
    }

    fn build<S: Scalar>(
        store: &mut ParamStore<S>,
        init: &mut Init,
        name: &str,
        (cin, cout): (usize, usize),
        kernel: [usize; 3],
        spec: ConvSpec,
        transposed: bool,
    ) -> Result<Self> {
        let fan_in = kernel.iter().product::<usize>() * cin;
        let w = init.he_uniform(&[kernel[0], kernel[1], kernel[2], cin, cout], fan_in);
        let weight = store.add(format!("{name}.weight"), w)?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[cout]))?;
        Ok(Conv3d {
            weight,
            bias,
            kernel,
            cin,
            cout,
            spec,
            transposed,
        })
    }

    /// Same-padded stride-1 convolution with a cubic kernel.
    pub fn same<S: Scalar>(
        store: &mut ParamStore<S>,
        init: &mut Init,
        name: &str,
        channels: (usize, usize),
        k: usize,
        dilation: usize,
    ) -> Result<Self> {
        Self::new(
            store,
            init,
            name,
            channels,
            [k; 3],
            ConvSpec::same([k; 3], [dilation; 3]),
        )
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, params: &Bound, x: Var) -> Result<Var> {
        let (w, b) = (params.var(self.weight), params.var(self.bias));
        if self.transposed {
            tape.deconv3d(x, w, Some(b), &self.spec)
        } else {
            tape.conv3d(x, w, Some(b), &self.spec)
        }
    }

    /// Convolution followed by ReLU.
    pub fn forward_relu<S: Scalar>(&self, tape: &mut Tape<S>, params: &Bound, x: Var) -> Result<Var> {
        let y = self.forward(tape, params, x)?;
        Ok(tape.relu(y))
    }
}

/// Parallel same-padded dilated convolutions, one per rate, concatenated on
/// channels and fused by a 1×1×1 convolution. Output extent equals input
/// extent.
#[derive(Clone, Debug)]
pub struct AtrousBlock {
    pub rates: Vec<usize>,
    pub branches: Vec<Conv3d>,
    pub fuse: Conv3d,
}

/// Intermediate values of one [`AtrousBlock`] pass.
#[derive(Clone, Debug)]
pub struct AtrousParts {
    /// Pre-activation output of each dilated branch.
    pub branches: Vec<Var>,
    /// Activated branches concatenated on channels.
    pub concat: Var,
    /// Fusion convolution output, before any activation.
    pub fused: Var,
}

impl AtrousBlock {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        init: &mut Init,
        name: &str,
        cin: usize,
        branch_ch: usize,
        fuse_ch: usize,
        rates: &[usize],
    ) -> Result<Self> {
        let branches = rates
            .iter()
            .map(|&r| Conv3d::same(store, init, &format!("{name}.rate{r}"), (cin, branch_ch), 3, r))
            .collect::<Result<Vec<_>>>()?;
        let fuse = Conv3d::same(
            store,
            init,
            &format!("{name}.fuse"),
            (branch_ch * rates.len(), fuse_ch),
            1,
            1,
        )?;
        Ok(AtrousBlock {
            rates: rates.to_vec(),
            branches,
            fuse,
        })
    }

    pub fn forward_parts<S: Scalar>(&self, tape: &mut Tape<S>, params: &Bound, x: Var) -> Result<AtrousParts> {
        let mut pre = Vec::with_capacity(self.branches.len());
        let mut concat: Option<Var> = None;
        for branch in &self.branches {
            let y = branch.forward(tape, params, x)?;
            pre.push(y);
            let a = tape.relu(y);
            concat = Some(match concat {
                Some(c) => tape.concat_channels(c, a)?,
                None => a,
            });
        }
        let concat = concat.expect("atrous block has at least one rate");
        let fused = self.fuse.forward(tape, params, concat)?;
        Ok(AtrousParts {
            branches: pre,
            concat,
            fused,
        })
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, params: &Bound, x: Var) -> Result<Var> {
        let parts = self.forward_parts(tape, params, x)?;
        Ok(tape.relu(parts.fused))
    }
}
