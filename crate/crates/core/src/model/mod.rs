//! Latent-variable world models: the SSM-backed model and the recurrent baseline.

pub mod config;
pub mod latent;
pub mod rssm;
pub mod s4wm;

use ndarray::{Array2, ArrayD, Axis, IxDyn};

pub use config::{PosteriorMode, SampleMode, WorldModelConfig};
pub use latent::{kl_balanced, mix_probs, LatentState};
pub use rssm::{Gru, Rssm, RssmRollout};
pub use s4wm::S4wm;

use crate::error::{shape_err, Error, Result};
use crate::scalar::{to_f64, Scalar};
use crate::substrate::{adamw_step, AdamWConfig, ParamStore, Rng, StepStats, Tape, Var};

/// A batch of episodes: frames `(B, T+1, H, W, 3)` in [0, 1], actions `(B, T)`,
/// rewards `(B, T)` for steps 1..T.
#[derive(Debug, Clone)]
pub struct Batch<T: Scalar> {
    pub frames: ArrayD<T>,
    pub actions: Array2<usize>,
    pub rewards: Option<Array2<T>>,
}

impl<T: Scalar> Batch<T> {
    pub fn size(&self) -> usize {
        self.actions.nrows()
    }

    pub fn steps(&self) -> usize {
        self.actions.ncols()
    }

    pub fn validate(&self, cfg: &WorldModelConfig) -> Result<()> {
        let (b, t) = self.actions.dim();
        let want = [b, t + 1, cfg.frame_height, cfg.frame_width, 3];
        if self.frames.shape() != want {
            return Err(shape_err("batch.frames", self.frames.shape(), &want));
        }
        if let Some(r) = &self.rewards {
            if r.dim() != (b, t) {
                return Err(shape_err("batch.rewards", r.shape(), &[b, t]));
            }
        }
        if let Some(&a) = self.actions.iter().find(|&&a| a >= cfg.num_actions) {
            return Err(Error::Invalid(format!("action {a} out of range for {} actions", cfg.num_actions)));
        }
        Ok(())
    }
}

/// One-hot encoding `(B, T) -> (B, T, n)`.
pub fn one_hot_actions<T: Scalar>(actions: &Array2<usize>, n: usize) -> ArrayD<T> {
    let (b, t) = actions.dim();
    let mut out = ArrayD::zeros(IxDyn(&[b, t, n]));
    for ((i, j), &a) in actions.indexed_iter() {
        out[[i, j, a]] = T::one();
    }
    out
}

/// Negative ELBO and its parts, averaged over the batch and summed over time.
pub struct LossTerms<'t, T: Scalar> {
    pub total: Var<'t, T>,
    pub recon: f64,
    pub kl: f64,
    pub reward: f64,
}

/// Teacher-forced outputs, all detached.
#[derive(Debug, Clone)]
pub struct TeacherForced<T: Scalar> {
    /// (B, T+1, G, K)
    pub posterior_logits: ArrayD<T>,
    /// (B, T, G, K), entry t-1 is the prior for step t.
    pub prior_logits: ArrayD<T>,
    /// (B, T, H, W, 3) reconstructions of steps 1..T.
    pub recon: ArrayD<T>,
    /// (B, T)
    pub reward_logits: Option<Array2<T>>,
}

/// Output of an imagination rollout over the query steps.
#[derive(Debug, Clone)]
pub struct ImaginationResult<T: Scalar> {
    /// (B, Q, H, W, 3)
    pub frames: ArrayD<T>,
    /// (B, Q, G*K) one-hot (or relaxed) latents.
    pub latents: ArrayD<T>,
    /// (B, Q, G, K)
    pub prior_logits: ArrayD<T>,
    /// (B, Q)
    pub reward_logits: Option<Array2<T>>,
    /// Per-step MSE on the 0-255 scale, when ground truth is supplied.
    pub mse_per_step: Option<Vec<f64>>,
}

impl<T: Scalar> ImaginationResult<T> {
    pub fn horizon(&self) -> usize {
        self.frames.shape()[1]
    }

    /// Fills `mse_per_step` against frames `(B, Q, H, W, 3)` in [0, 1].
    pub fn with_truth(mut self, truth: &ArrayD<T>) -> Result<Self> {
        self.mse_per_step = Some(per_step_mse(&self.frames, truth)?);
        Ok(self)
    }
}

/// Mean squared error per step on the 0-255 scale; predictions are clipped to [0, 1].
pub fn per_step_mse<T: Scalar>(pred: &ArrayD<T>, truth: &ArrayD<T>) -> Result<Vec<f64>> {
    if pred.shape() != truth.shape() || pred.ndim() < 2 {
        return Err(shape_err("per_step_mse", truth.shape(), pred.shape()));
    }
    let steps = pred.shape()[1];
    Ok((0..steps)
        .map(|t| {
            let p = pred.index_axis(Axis(1), t);
            let x = truth.index_axis(Axis(1), t);
            let n = p.len() as f64;
            p.iter()
                .zip(x.iter())
                .map(|(&a, &b)| {
                    let d = 255.0 * (to_f64(a).clamp(0.0, 1.0) - to_f64(b));
                    d * d
                })
                .sum::<f64>()
                / n
        })
        .collect())
}

/// Common interface of the world models, so evaluation is backbone-agnostic.
pub trait WorldModel<T: Scalar> {
    fn config(&self) -> &WorldModelConfig;

    fn loss<'t>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        batch: &Batch<T>,
        mode: SampleMode,
        rng: &mut Rng,
    ) -> Result<LossTerms<'t, T>>;

    fn teacher_forced(&self, store: &ParamStore<T>, batch: &Batch<T>, mode: SampleMode, rng: &mut Rng) -> Result<TeacherForced<T>>;

    /// Encodes `context_frames` `(B, C+1, H, W, 3)` with `context_actions` `(B, C)`
    /// and rolls the prior forward over `query_actions` `(B, Q)`.
    fn imagine(
        &self,
        store: &ParamStore<T>,
        context_frames: &ArrayD<T>,
        context_actions: &Array2<usize>,
        query_actions: &Array2<usize>,
        mode: SampleMode,
        rng: &mut Rng,
    ) -> Result<ImaginationResult<T>>;
}

/// Decoded frames, reward logits and the negative ELBO from per-step features.
///
/// `h`: (B, T, D), `z`: (B, T, G*K), `q`/`p`: (B, T, G, K) mixed probabilities.
pub(crate) struct Heads<'t, T: Scalar> {
    pub recon: Var<'t, T>,
    pub reward_logits: Option<Var<'t, T>>,
}

pub(crate) fn decode_heads<'t, T: Scalar>(
    tape: &'t Tape<T>,
    store: &ParamStore<T>,
    cfg: &WorldModelConfig,
    decoder: &crate::nn::ConvDecoder,
    reward: Option<&crate::nn::Mlp>,
    h: Var<'t, T>,
    z: Var<'t, T>,
) -> Result<Heads<'t, T>> {
    let hs = h.shape();
    let (b, t) = (hs[0], hs[1]);
    let hz = tape.concat(&[h, z], 2)?;
    let width = hz.shape()[2];
    let flat = hz.reshape(&[b * t, width])?;
    let recon = decoder
        .forward(tape, store, flat)?
        .reshape(&[b, t, cfg.frame_height, cfg.frame_width, 3])?;
    let reward_logits = match reward {
        Some(mlp) => Some(mlp.forward(tape, store, hz)?.reshape(&[b, t])?),
        None => None,
    };
    Ok(Heads { recon, reward_logits })
}

pub(crate) fn elbo<'t, T: Scalar>(
    tape: &'t Tape<T>,
    cfg: &WorldModelConfig,
    batch: &Batch<T>,
    heads: &Heads<'t, T>,
    q: Var<'t, T>,
    p: Var<'t, T>,
) -> Result<LossTerms<'t, T>> {
    let (b, t) = batch.actions.dim();
    let target = tape.constant(batch.frames.slice_axis(Axis(1), (1..t + 1).into()).to_owned());
    let pixels = cfg.frame_height * cfg.frame_width * 3;
    let sse = heads.recon.sub(target)?.square().reshape(&[b, t, pixels])?.sum_axis(2)?.scale(0.5);
    let kl = kl_balanced(q, p, cfg.alpha)?;
    let inv_b = 1.0 / b as f64;
    let recon_v = to_f64(sse.value().sum()) * inv_b;
    let kl_v = to_f64(kl.value().sum()) * inv_b;
    let mut per_step = sse.add(kl)?;
    let mut reward_v = 0.0;
    if let (Some(logits), Some(r)) = (heads.reward_logits, &batch.rewards) {
        let y = tape.constant(r.clone().into_dyn());
        let bce = logits.softplus().sub(logits.mul(y)?)?;
        reward_v = to_f64(bce.value().sum()) * inv_b;
        per_step = per_step.add(bce)?;
    }
    Ok(LossTerms { total: per_step.sum().scale(inv_b), recon: recon_v, kl: kl_v, reward: reward_v })
}

/// Statistics of one optimizer step.
#[derive(Debug, Clone, Copy)]
pub struct TrainStats {
    pub loss: f64,
    pub recon: f64,
    pub kl: f64,
    pub reward: f64,
    pub grad_norm: f64,
    pub lr: f64,
}

/// Forward, backward and one AdamW update.
pub fn train_step<T: Scalar, M: WorldModel<T>>(
    model: &M,
    store: &mut ParamStore<T>,
    batch: &Batch<T>,
    lr: f64,
    opt: &AdamWConfig,
    rng: &mut Rng,
) -> Result<TrainStats> {
    let tape = Tape::new();
    let terms = model.loss(&tape, store, batch, SampleMode::Sample, rng)?;
    let loss = to_f64(terms.total.item());
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss {
            step: store.step,
            detail: format!("recon {} kl {} reward {}", terms.recon, terms.kl, terms.reward),
        });
    }
    let mut grads = tape.backward(terms.total)?;
    grads.ensure_finite(store)?;
    let StepStats { grad_norm, .. } = adamw_step(store, &mut grads, lr, opt)?;
    Ok(TrainStats { loss, recon: terms.recon, kl: terms.kl, reward: terms.reward, grad_norm, lr })
}

/// Evaluates the loss without sampling noise or parameter updates.
pub fn eval_loss<T: Scalar, M: WorldModel<T>>(model: &M, store: &ParamStore<T>, batch: &Batch<T>) -> Result<f64> {
    let tape = Tape::new();
    let terms = model.loss(&tape, store, batch, SampleMode::Mode, &mut Rng::new(0))?;
    Ok(to_f64(terms.total.item()))
}

pub(crate) fn check_imagine_args<T: Scalar>(
    cfg: &WorldModelConfig,
    context_frames: &ArrayD<T>,
    context_actions: &Array2<usize>,
    query_actions: &Array2<usize>,
) -> Result<(usize, usize, usize)> {
    let (b, c) = context_actions.dim();
    let q = query_actions.ncols();
    let want = [b, c + 1, cfg.frame_height, cfg.frame_width, 3];
    if context_frames.shape() != want {
        return Err(shape_err("imagine.context", context_frames.shape(), &want));
    }
    if query_actions.nrows() != b {
        return Err(shape_err("imagine.query", query_actions.shape(), &[b, q]));
    }
    if q == 0 {
        return Err(Error::Invalid("imagination needs at least one query step".into()));
    }
    if q > cfg.max_horizon {
        return Err(Error::HorizonTooLong { requested: q, max: cfg.max_horizon });
    }
    Ok((b, c, q))
}

pub(crate) fn detached<T: Scalar>(v: Var<'_, T>) -> ArrayD<T> {
    (*v.value()).clone()
}

pub(crate) fn to_array2<T: Scalar>(v: ArrayD<T>) -> Array2<T> {
    v.into_dimensionality().expect("rank 2")
}

