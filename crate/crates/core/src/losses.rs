//! Training objective: generalized 3D dice loss plus pixel-wise
//! (binary) cross-entropy per branch, combined with per-task weights.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Op, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Probabilities are clamped into `[PROB_FLOOR, 1 − PROB_FLOOR]` before any
/// log or overlap term; clamped entries receive no gradient.
pub const PROB_FLOOR: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub actor: f64,
    pub action: f64,
    pub mask: f64,
    pub dice_epsilon: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            actor: 1.3,
            action: 1.3,
            mask: 0.3,
            dice_epsilon: 1e-6,
        }
    }
}

fn clamp_prob<S: Scalar>(p: S) -> (S, bool) {
    let lo = S::of(PROB_FLOOR);
    let hi = S::of(1.0 - PROB_FLOOR);
    if p < lo {
        (lo, false)
    } else if p > hi {
        (hi, false)
    } else {
        (p, true)
    }
}

fn check_target<S: Scalar>(pred: &Tensor<S>, target: &Tensor<S>, what: &str) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(format!(
            "{what}: prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    Ok(())
}

/// Overlap sums `(Σ p·q, Σ p² + Σ q² + C·ε)` over all classes and positions.
fn dice_terms<S: Scalar>(pred: &[S], target: &[S], classes: usize, eps: f64) -> (f64, f64) {
    let mut inter = 0.0;
    let mut denom = classes as f64 * eps;
    for (&q, &p) in pred.iter().zip(target) {
        let q = clamp_prob(q).0.as_f64();
        let p = p.as_f64();
        inter += p * q;
        denom += p * p + q * q;
    }
    (inter, denom)
}

pub(crate) fn dice_grad<S: Scalar>(pred: &Tensor<S>, target: &[S], eps: S, g: S) -> Vec<S> {
    let (inter, denom) = dice_terms(pred.data(), target, pred.channels(), eps.as_f64());
    let g = g.as_f64();
    pred.data()
        .iter()
        .zip(target)
        .map(|(&q, &p)| {
            let (qc, live) = clamp_prob(q);
            if !live {
                return S::zero();
            }
            let (p, q) = (p.as_f64(), qc.as_f64());
            S::of(g * (-2.0 * p / denom + 4.0 * inter * q / (denom * denom)))
        })
        .collect()
}

pub(crate) fn cross_entropy_grad<S: Scalar>(pred: &Tensor<S>, target: &[S], g: S) -> Vec<S> {
    let n = pred.positions() as f64;
    let g = g.as_f64();
    pred.data()
        .iter()
        .zip(target)
        .map(|(&q, &p)| {
            let (qc, live) = clamp_prob(q);
            if !live || p == S::zero() {
                return S::zero();
            }
            S::of(-g * p.as_f64() / (qc.as_f64() * n))
        })
        .collect()
}

pub(crate) fn bce_grad<S: Scalar>(pred: &Tensor<S>, target: &[S], g: S) -> Vec<S> {
    let n = pred.numel() as f64;
    let g = g.as_f64();
    pred.data()
        .iter()
        .zip(target)
        .map(|(&q, &p)| {
            let (qc, live) = clamp_prob(q);
            if !live {
                return S::zero();
            }
            let (p, q) = (p.as_f64(), qc.as_f64());
            S::of(-g * (p / q - (1.0 - p) / (1.0 - q)) / n)
        })
        .collect()
}

impl<S: Scalar> Tape<S> {
    /// `1 − 2 Σ_c Σ_i p·q / Σ_c (Σ_i p² + Σ_i q² + ε)` with classes on the
    /// trailing axis.
    pub fn dice_loss(&mut self, pred: Var, target: &Tensor<S>, eps: f64) -> Result<Var> {
        let p = self.value(pred);
        check_target(p, target, "dice_loss")?;
        let (inter, denom) = dice_terms(p.data(), target.data(), p.channels(), eps);
        let loss = 1.0 - 2.0 * inter / denom;
        let flops = 6 * p.numel() as u64;
        Ok(self.push(
            Tensor::scalar(S::of(loss)),
            Op::Dice {
                pred,
                target: target.data().to_vec(),
                eps: S::of(eps),
            },
            flops,
        ))
    }

    /// Categorical cross-entropy of per-position distributions against a
    /// one-hot target, averaged over positions.
    pub fn cross_entropy(&mut self, pred: Var, target: &Tensor<S>) -> Result<Var> {
        let p = self.value(pred);
        check_target(p, target, "cross_entropy")?;
        let n = p.positions() as f64;
        let total: f64 = p
            .data()
            .iter()
            .zip(target.data())
            .filter(|(_, &t)| t != S::zero())
            .map(|(&q, &t)| t.as_f64() * clamp_prob(q).0.as_f64().ln())
            .sum();
        let flops = 3 * p.numel() as u64;
        Ok(self.push(
            Tensor::scalar(S::of(-total / n)),
            Op::CrossEntropy {
                pred,
                target: target.data().to_vec(),
            },
            flops,
        ))
    }

    /// Binary cross-entropy averaged over all elements.
    pub fn binary_cross_entropy(&mut self, pred: Var, target: &Tensor<S>) -> Result<Var> {
        let p = self.value(pred);
        check_target(p, target, "binary_cross_entropy")?;
        let n = p.numel() as f64;
        let total: f64 = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(&q, &t)| {
                let q = clamp_prob(q).0.as_f64();
                let t = t.as_f64();
                t * q.ln() + (1.0 - t) * (1.0 - q).ln()
            })
            .sum();
        let flops = 6 * p.numel() as u64;
        Ok(self.push(
            Tensor::scalar(S::of(-total / n)),
            Op::BinaryCrossEntropy {
                pred,
                target: target.data().to_vec(),
            },
            flops,
        ))
    }
}

/// Cross-entropy plus dice over the actor channels.
pub fn actor_loss<S: Scalar>(tape: &mut Tape<S>, actor_d: Var, gt_onehot: &Tensor<S>, eps: f64) -> Result<Var> {
    let ce = tape.cross_entropy(actor_d, gt_onehot)?;
    let dice = tape.dice_loss(actor_d, gt_onehot, eps)?;
    tape.add(ce, dice)
}

/// Same form as [`actor_loss`] over the action channels.
pub fn action_loss<S: Scalar>(tape: &mut Tape<S>, action_d: Var, gt_onehot: &Tensor<S>, eps: f64) -> Result<Var> {
    actor_loss(tape, action_d, gt_onehot, eps)
}

/// Binary cross-entropy plus dice on the foreground mask probability.
pub fn mask_loss<S: Scalar>(tape: &mut Tape<S>, fg: Var, gt_mask: &Tensor<S>, eps: f64) -> Result<Var> {
    let bce = tape.binary_cross_entropy(fg, gt_mask)?;
    let dice = tape.dice_loss(fg, gt_mask, eps)?;
    tape.add(bce, dice)
}

/// `w_actor·l_actor + w_action·l_action + w_mask·l_mask`.
pub fn total_loss<S: Scalar>(
    tape: &mut Tape<S>,
    l_actor: Var,
    l_action: Var,
    l_mask: Var,
    w: &LossWeights,
) -> Result<Var> {
    let a = tape.scale(l_actor, S::of(w.actor));
    let b = tape.scale(l_action, S::of(w.action));
    let m = tape.scale(l_mask, S::of(w.mask));
    let ab = tape.add(a, b)?;
    tape.add(ab, m)
}

/// One-hot encodes integer labels into a `[.., classes]` tensor.
pub fn one_hot<S: Scalar>(labels: &[i32], dims: &[usize], classes: usize) -> Result<Tensor<S>> {
    let mut data = vec![S::zero(); labels.len() * classes];
    for (i, &l) in labels.iter().enumerate() {
        if l < 0 || l as usize >= classes {
            return Err(Error::Data(format!("label {l} outside 0..{classes}")));
        }
        data[i * classes + l as usize] = S::one();
    }
    let mut shape = dims.to_vec();
    shape.push(classes);
    Tensor::new(&shape, data)
}
