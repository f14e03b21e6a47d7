use crate::error::{Error, Result};
use crate::layers::ParamStore;
use crate::tensor::Scalar;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam moments for every parameter of one store.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
    pub lr: f64,
}

impl OptimState {
    pub fn new<S: Scalar>(params: &ParamStore<S>, lr: f64) -> Self {
        let sizes: Vec<usize> = params.iter().map(|(_, t)| t.numel()).collect();
        OptimState {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
            lr,
        }
    }

    /// One bias-corrected Adam update from the gradients held in `params`.
    /// Parameters without a gradient are treated as having zero gradient.
    pub fn step<S: Scalar>(&mut self, params: &mut ParamStore<S>) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} parameters, store has {}",
                self.m.len(),
                params.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        for (i, (name, p)) in params.iter_mut().enumerate() {
            if p.numel() != self.m[i].len() {
                return Err(Error::Contract(format!(
                    "`{name}` has {} elements, moments have {}",
                    p.numel(),
                    self.m[i].len()
                )));
            }
            let grad: Vec<f64> = match p.grad() {
                Some(g) => g.iter().map(|v| v.as_f64()).collect(),
                None => vec![0.0; p.numel()],
            };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, x) in p.data_mut().iter_mut().enumerate() {
                let g = grad[j];
                m[j] = BETA1 * m[j] + (1.0 - BETA1) * g;
                v[j] = BETA2 * v[j] + (1.0 - BETA2) * g * g;
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                *x -= S::of(self.lr * mhat / (vhat.sqrt() + ADAM_EPS));
            }
        }
        Ok(())
    }
}
