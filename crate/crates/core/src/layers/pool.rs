use crate::autodiff::{Op, Tape, Var};
use crate::error::Result;
use crate::layers::conv::AxisMap;
use crate::tensor::{volume_dims, Scalar, Tensor};

impl<S: Scalar> Tape<S> {
    /// Max pooling over `window` with `stride`, no padding. The gradient of
    /// each window goes to its first maximal element in scan order.
    pub fn maxpool3d(&mut self, x: Var, window: [usize; 3], stride: [usize; 3]) -> Result<Var> {
        let ([ti, hi, wi], c) = volume_dims(self.shape(x), "maxpool3d")?;
        let axes = [
            AxisMap::conv(ti, window[0], stride[0].max(1), 1, 0)?,
            AxisMap::conv(hi, window[1], stride[1].max(1), 1, 0)?,
            AxisMap::conv(wi, window[2], stride[2].max(1), 1, 0)?,
        ];
        let [to, ho, wo] = axes.each_ref().map(|a| a.out_len);
        let input = self.value(x).data();
        let mut data = Vec::with_capacity(to * ho * wo * c);
        let mut argmax = Vec::with_capacity(to * ho * wo * c);
        for ot in 0..to {
            for oh in 0..ho {
                for ow in 0..wo {
                    for ch in 0..c {
                        let mut best = S::neg_infinity();
                        let mut at = usize::MAX;
                        for &(_, it) in axes[0].inputs_of(ot) {
                            for &(_, ih) in axes[1].inputs_of(oh) {
                                for &(_, iw) in axes[2].inputs_of(ow) {
                                    let idx = ((it as usize * hi + ih as usize) * wi + iw as usize) * c + ch;
                                    if at == usize::MAX || input[idx] > best {
                                        best = input[idx];
                                        at = idx;
                                    }
                                }
                            }
                        }
                        data.push(best);
                        argmax.push(at as u32);
                    }
                }
            }
        }
        let flops = (window.iter().product::<usize>() * data.len()) as u64;
        let out = Tensor::new(&[to, ho, wo, c], data)?;
        Ok(self.push(out, Op::MaxPool { x, argmax }, flops))
    }
}
