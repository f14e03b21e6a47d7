use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Named model parameters in registration order. Names are hierarchical
/// (`encoder.stage0.conv_a.weight`) and stable across runs, so they double
/// as checkpoint keys.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<S = f32> {
    params: IndexMap<String, Tensor<S>>,
}

/// Tape variables for every parameter of a store, indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bound(Vec<Var>);

impl Bound {
    /// Binds vars recorded elsewhere, in store order.
    pub fn new(vars: Vec<Var>) -> Self {
        Bound(vars)
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore {
            params: IndexMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<S>) -> Result<ParamId> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate parameter name `{name}`")));
        }
        let (idx, _) = self.params.insert_full(name, tensor.with_requires_grad(true));
        Ok(ParamId(idx))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<S>> {
        self.params.get(name)
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.params.get_index_of(name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<S>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Records every parameter on `tape` as a gradient-tracking leaf.
    pub fn bind(&self, tape: &mut Tape<S>) -> Bound {
        Bound(self.params.values().map(|t| tape.param(t.clone())).collect())
    }

    /// Like [`ParamStore::bind`] but without gradient tracking.
    pub fn bind_frozen(&self, tape: &mut Tape<S>) -> Bound {
        Bound(self.params.values().map(|t| tape.constant(t.clone())).collect())
    }

    /// Adds the gradients collected on `tape` into the stored parameters.
    pub fn pull_grads(&mut self, tape: &Tape<S>, bound: &Bound) {
        for (param, &var) in self.params.values_mut().zip(&bound.0) {
            if let Some(g) = tape.grad(var) {
                param.accumulate_grad(g);
            }
        }
    }

    pub fn zero_grads(&mut self) {
        self.params.values_mut().for_each(Tensor::zero_grad);
    }

    /// Euclidean norm over all stored gradients.
    pub fn grad_norm(&self) -> f64 {
        self.params
            .values()
            .filter_map(Tensor::grad)
            .flat_map(|g| g.iter().map(|v| v.as_f64() * v.as_f64()))
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale_grads(&mut self, factor: S) {
        for p in self.params.values_mut() {
            if let Some(g) = p.grad() {
                let scaled: Vec<S> = g.iter().map(|&v| v * factor).collect();
                p.zero_grad();
                p.accumulate_grad(&scaled);
            }
        }
    }

    /// Replaces every value with the tensor of the same name in `other`.
    pub fn load_from(&mut self, other: &IndexMap<String, Tensor<S>>) -> Result<()> {
        for (name, p) in self.params.iter_mut() {
            let src = other
                .get(name)
                .ok_or_else(|| Error::Data(format!("checkpoint lacks parameter `{name}`")))?;
            if src.shape() != p.shape() {
                return Err(Error::Data(format!(
                    "parameter `{name}` has shape {:?} in checkpoint, model expects {:?}",
                    src.shape(),
                    p.shape()
                )));
            }
            p.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }
}

/// Seeded parameter initializer.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Uniform on `±sqrt(6 / fan_in)`.
    pub fn he_uniform<S: Scalar>(&mut self, shape: &[usize], fan_in: usize) -> Tensor<S> {
        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
        Tensor::from_fn(shape, |_| S::of(self.rng.gen_range(-bound..bound)))
    }
}
