//! Categorical latents: uniform mixing, sampling, straight-through, KL balancing.

use ndarray::{ArrayD, Axis};

use super::config::SampleMode;
use crate::error::Result;
use crate::scalar::{cast, to_f64, Scalar};
use crate::substrate::{Rng, Var};

/// Weight of the uniform component in every latent distribution.
pub const UNIFORM_MIX: f64 = 0.01;

/// A categorical latent: logits of shape (.., G, K) and its one-hot sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState<T> {
    pub logits: ArrayD<T>,
    pub sample: ArrayD<T>,
}

/// `0.99 softmax(logits) + 0.01 / K` over the last axis.
pub fn mix_probs<'t, T: Scalar>(logits: Var<'t, T>) -> Var<'t, T> {
    let k = *logits.shape().last().expect("non-scalar logits") as f64;
    logits.softmax().scale(1.0 - UNIFORM_MIX).add_scalar(UNIFORM_MIX / k)
}

/// Same mixture on plain arrays.
pub fn mix_probs_array<T: Scalar>(logits: &ArrayD<T>) -> ArrayD<T> {
    let last = Axis(logits.ndim() - 1);
    let k = logits.len_of(last);
    let mut out = logits.clone();
    for mut row in out.lanes_mut(last) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum: T = row.iter().copied().sum();
        let floor: T = cast(UNIFORM_MIX / k as f64);
        let keep: T = cast(1.0 - UNIFORM_MIX);
        row.mapv_inplace(|v| keep * v / sum + floor);
    }
    out
}

/// One-hot samples (or argmax) along the last axis of `probs`.
pub fn sample_one_hot<T: Scalar>(probs: &ArrayD<T>, mode: SampleMode, rng: &mut Rng) -> ArrayD<T> {
    let last = Axis(probs.ndim() - 1);
    let mut out = ArrayD::zeros(probs.raw_dim());
    for (p, mut o) in probs.lanes(last).into_iter().zip(out.lanes_mut(last)) {
        let idx = match mode {
            SampleMode::Sample => {
                let u = rng.uniform();
                let mut acc = 0.0;
                let mut pick = p.len() - 1;
                for (i, &v) in p.iter().enumerate() {
                    acc += to_f64(v);
                    if u < acc {
                        pick = i;
                        break;
                    }
                }
                pick
            }
            _ => {
                let mut best = 0;
                for (i, &v) in p.iter().enumerate() {
                    if v > p[best] {
                        best = i;
                    }
                }
                best
            }
        };
        o[idx] = T::one();
    }
    out
}

/// Value `one_hot`, gradient passed to `probs` unchanged.
pub fn straight_through<'t, T: Scalar>(probs: Var<'t, T>, one_hot: ArrayD<T>) -> Var<'t, T> {
    probs.tape().custom(&[probs], one_hot, Box::new(|g, _, _, _| vec![Some(g.clone())]))
}

/// Latents for the given mixed probabilities under `mode`.
pub fn latents<'t, T: Scalar>(probs: Var<'t, T>, mode: SampleMode, rng: &mut Rng) -> Var<'t, T> {
    match mode {
        SampleMode::Relaxed => probs,
        _ => {
            let one_hot = sample_one_hot(&probs.value(), mode, rng);
            straight_through(probs, one_hot)
        }
    }
}

/// `KL(q || p)` summed over the last two axes (groups and classes).
pub fn kl<'t, T: Scalar>(q: Var<'t, T>, p: Var<'t, T>) -> Result<Var<'t, T>> {
    let nd = q.shape().len();
    let per = q.mul(q.log().sub(p.log())?)?;
    per.sum_axis(nd - 1)?.sum_axis(nd - 2)
}

/// `alpha KL(sg(q) || p) + (1 - alpha) KL(q || sg(p))`.
///
/// The value equals `KL(q || p)` for every alpha; alpha only routes gradients.
pub fn kl_balanced<'t, T: Scalar>(q: Var<'t, T>, p: Var<'t, T>, alpha: f64) -> Result<Var<'t, T>> {
    if alpha >= 1.0 {
        return kl(q.stop_grad(), p);
    }
    if alpha <= 0.0 {
        return kl(q, p.stop_grad());
    }
    let prior_side = kl(q.stop_grad(), p)?.scale(alpha);
    let post_side = kl(q, p.stop_grad())?.scale(1.0 - alpha);
    prior_side.add(post_side)
}
