//! Recurrent baseline: a GRU over `MLP(concat[z_{t-1}, a_t])`, trained with
//! truncated backpropagation through time.

use ndarray::{Array2, ArrayD, Axis, IxDyn};

use super::config::{SampleMode, WorldModelConfig};
use super::latent::{latents, mix_probs, mix_probs_array, sample_one_hot};
use super::{
    check_imagine_args, decode_heads, detached, elbo, one_hot_actions, to_array2, Batch, ImaginationResult,
    LossTerms, TeacherForced, WorldModel,
};
use crate::error::{Error, Result};
use crate::nn::{ConvDecoder, ConvEncoder, Linear, Mlp};
use crate::scalar::Scalar;
use crate::substrate::{ParamStore, Reshaped, Rng, Tape, Var};

/// Gated recurrent unit with reset gate applied to the hidden projection.
#[derive(Debug, Clone)]
pub struct Gru {
    pub wx: Linear,
    pub wh: Linear,
    pub hidden: usize,
}

impl Gru {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, input: usize, hidden: usize, rng: &mut Rng) -> Self {
        Self {
            wx: Linear::new(store, &format!("{name}.wx"), input, 3 * hidden, rng),
            wh: Linear::new(store, &format!("{name}.wh"), hidden, 3 * hidden, rng),
            hidden,
        }
    }

    /// `r, u = sigmoid(..)`, `n = tanh(x W_n + r * (h U_n))`, `h' = (1 - u) n + u h`.
    pub fn forward<'t, T: Scalar>(&self, tape: &'t Tape<T>, store: &ParamStore<T>, x: Var<'t, T>, h: Var<'t, T>) -> Result<Var<'t, T>> {
        let n = self.hidden;
        let last = x.shape().len() - 1;
        let gx = self.wx.forward(tape, store, x)?;
        let gh = self.wh.forward(tape, store, h)?;
        let r = gx.slice_axis(last, 0, n)?.add(gh.slice_axis(last, 0, n)?)?.sigmoid();
        let u = gx.slice_axis(last, n, 2 * n)?.add(gh.slice_axis(last, n, 2 * n)?)?.sigmoid();
        let cand = gx.slice_axis(last, 2 * n, 3 * n)?.add(r.mul(gh.slice_axis(last, 2 * n, 3 * n)?)?)?.tanh();
        let keep = u.neg().add_scalar(1.0);
        keep.mul(cand)?.add(u.mul(h)?)
    }
}

#[derive(Debug, Clone)]
pub struct Rssm {
    pub cfg: WorldModelConfig,
    /// Truncation length for backpropagation through time.
    pub tbtt_k: usize,
    encoder: ConvEncoder,
    input: Mlp,
    gru: Gru,
    prior: Mlp,
    posterior: Mlp,
    decoder: ConvDecoder,
    reward: Option<Mlp>,
}

/// Teacher-forced rollout, still on the tape. Posterior logits cover steps
/// `0..=T`, everything else steps `1..=T`.
pub struct RssmRollout<'t, T: Scalar> {
    pub post_logits: Var<'t, T>,
    pub q: Var<'t, T>,
    pub prior_logits: Var<'t, T>,
    pub p: Var<'t, T>,
    pub h: Var<'t, T>,
    pub z: Var<'t, T>,
}

impl Rssm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, cfg: WorldModelConfig, tbtt_k: usize, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        if tbtt_k == 0 {
            return Err(Error::Invalid("tbtt_k must be at least 1".into()));
        }
        let gk = cfg.latent_dim();
        let hid = cfg.rssm_hidden;
        let (units, layers) = (cfg.mlp_units, cfg.mlp_layers);
        let encoder = ConvEncoder::new(store, "enc", cfg.conv_shape(), rng)?;
        let embed = cfg.conv_shape().embed_dim();
        let input = Mlp::new(store, "in", gk + cfg.num_actions, units, layers, units, rng);
        let gru = Gru::new(store, "gru", units, hid, rng);
        let prior = Mlp::new(store, "prior", hid, units, layers, gk, rng);
        let posterior = Mlp::new(store, "post", hid + embed, units, layers, gk, rng);
        let decoder = ConvDecoder::new(store, "dec", hid + gk, cfg.conv_shape(), rng)?;
        let reward = cfg.reward_head.then(|| Mlp::new(store, "reward", hid + gk, units, layers, 1, rng));
        Ok(Self { cfg, tbtt_k, encoder, input, gru, prior, posterior, decoder, reward })
    }

    fn encode<'t, T: Scalar>(&self, tape: &'t Tape<T>, store: &ParamStore<T>, frames: Var<'t, T>) -> Result<Var<'t, T>> {
        let s = frames.shape();
        let flat = frames.reshape(&[s[0] * s[1], s[2], s[3], s[4]])?;
        let e = self.encoder.forward(tape, store, flat)?;
        let width = e.shape()[1];
        e.reshape(&[s[0], s[1], width])
    }

    fn post<'t, T: Scalar>(&self, tape: &'t Tape<T>, store: &ParamStore<T>, h: Var<'t, T>, e: Var<'t, T>) -> Result<Var<'t, T>> {
        let b = h.shape()[0];
        let x = tape.concat(&[h, e], 1)?;
        self.posterior.forward(tape, store, x)?.reshape(&[b, self.cfg.groups, self.cfg.classes])
    }

    /// One recurrent update `h_t = GRU(h_{t-1}, MLP(concat[z_{t-1}, a_t]))`.
    pub fn rssm_step<'t, T: Scalar>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        h: Var<'t, T>,
        z: Var<'t, T>,
        a: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let x = self.input.forward(tape, store, tape.concat(&[z, a], 1)?)?;
        self.gru.forward(tape, store, x, h)
    }

    pub fn prior_logits<'t, T: Scalar>(&self, tape: &'t Tape<T>, store: &ParamStore<T>, h: Var<'t, T>) -> Result<Var<'t, T>> {
        let b = h.shape()[0];
        self.prior.forward(tape, store, h)?.reshape(&[b, self.cfg.groups, self.cfg.classes])
    }

    /// Posterior logits `q(z_t | h_t, e_t)` for `h` `(B, hidden)` and frames `(B, H, W, 3)`.
    pub fn posterior_logits<'t, T: Scalar>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        h: Var<'t, T>,
        frame: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let e = self.encoder.forward(tape, store, frame)?;
        self.post(tape, store, h, e)
    }

    /// Teacher-forced rollout with gradients cut every `tbtt_k` steps.
    pub fn rollout<'t, T: Scalar>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        frames: Var<'t, T>,
        actions: &Array2<usize>,
        mode: SampleMode,
        rng: &mut Rng,
    ) -> Result<RssmRollout<'t, T>> {
        let (b, t) = actions.dim();
        let gk = self.cfg.latent_dim();
        let e = self.encode(tape, store, frames)?;
        let a_all = one_hot_actions::<T>(actions, self.cfg.num_actions);
        let e_at = |i: usize| -> Result<Var<'t, T>> {
            let width = e.shape()[2];
            e.slice_axis(1, i, i + 1)?.reshape(&[b, width])
        };
        let mut h = tape.constant(ArrayD::zeros(IxDyn(&[b, self.cfg.rssm_hidden])));
        let post0 = self.post(tape, store, h, e_at(0)?)?;
        let q0 = mix_probs(post0);
        let mut z = latents(q0, mode, rng).reshape(&[b, gk])?;
        let (mut posts, mut qs, mut priors, mut ps, mut hs, mut zs) =
            (vec![post0], Vec::new(), Vec::new(), Vec::new(), Vec::new(), vec![z]);
        for step in 1..=t {
            if step > 1 && (step - 1) % self.tbtt_k == 0 {
                h = h.stop_grad();
                z = z.stop_grad();
            }
            let a = tape.constant(a_all.index_axis(Axis(1), step - 1).to_owned());
            h = self.rssm_step(tape, store, h, z, a)?;
            let prior = self.prior_logits(tape, store, h)?;
            let post = self.post(tape, store, h, e_at(step)?)?;
            let q = mix_probs(post);
            z = latents(q, mode, rng).reshape(&[b, gk])?;
            ps.push(mix_probs(prior));
            priors.push(prior);
            posts.push(post);
            qs.push(q);
            hs.push(h);
            zs.push(z);
        }
        let stack = |xs: &[Var<'t, T>]| -> Result<Var<'t, T>> {
            let lifted: Vec<Var<'t, T>> = xs
                .iter()
                .map(|v| {
                    let mut s = v.shape();
                    s.insert(1, 1);
                    v.reshape(&s)
                })
                .collect::<Result<_>>()?;
            tape.concat(&lifted, 1)
        };
        Ok(RssmRollout {
            post_logits: stack(&posts)?,
            q: stack(&qs)?,
            prior_logits: stack(&priors)?,
            p: stack(&ps)?,
            h: stack(&hs)?,
            z: stack(&zs[1..])?,
        })
    }
}

impl<T: Scalar> WorldModel<T> for Rssm {
    fn config(&self) -> &WorldModelConfig {
        &self.cfg
    }

    fn loss<'t>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        batch: &Batch<T>,
        mode: SampleMode,
        rng: &mut Rng,
    ) -> Result<LossTerms<'t, T>> {
        batch.validate(&self.cfg)?;
        let r = self.rollout(tape, store, tape.constant(batch.frames.clone()), &batch.actions, mode, rng)?;
        let heads = decode_heads(tape, store, &self.cfg, &self.decoder, self.reward.as_ref(), r.h, r.z)?;
        elbo(tape, &self.cfg, batch, &heads, r.q, r.p)
    }

    fn teacher_forced(&self, store: &ParamStore<T>, batch: &Batch<T>, mode: SampleMode, rng: &mut Rng) -> Result<TeacherForced<T>> {
        batch.validate(&self.cfg)?;
        let tape = Tape::new();
        let r = self.rollout(&tape, store, tape.constant(batch.frames.clone()), &batch.actions, mode, rng)?;
        let heads = decode_heads(&tape, store, &self.cfg, &self.decoder, self.reward.as_ref(), r.h, r.z)?;
        Ok(TeacherForced {
            posterior_logits: detached(r.post_logits),
            prior_logits: detached(r.prior_logits),
            recon: detached(heads.recon),
            reward_logits: heads.reward_logits.map(|v| to_array2(detached(v))),
        })
    }

    fn imagine(
        &self,
        store: &ParamStore<T>,
        context_frames: &ArrayD<T>,
        context_actions: &Array2<usize>,
        query_actions: &Array2<usize>,
        mode: SampleMode,
        rng: &mut Rng,
    ) -> Result<ImaginationResult<T>> {
        let (b, _, q) = check_imagine_args(&self.cfg, context_frames, context_actions, query_actions)?;
        let (g, k) = (self.cfg.groups, self.cfg.classes);
        let (mut h, mut z) = {
            let tape = Tape::new();
            if context_actions.ncols() == 0 {
                // Only x_0: z_0 from the posterior with h_0 = 0.
                let h0 = tape.constant(ArrayD::zeros(IxDyn(&[b, self.cfg.rssm_hidden])));
                let e = self.encode(&tape, store, tape.constant(context_frames.clone()))?;
                let width = e.shape()[2];
                let post = self.post(&tape, store, h0, e.reshape(&[b, width])?)?;
                let probs = mix_probs_array(&detached(post));
                let z0 = match mode {
                    SampleMode::Relaxed => probs,
                    _ => sample_one_hot(&probs, mode, rng),
                };
                (detached(h0), z0.reshaped(&[b, g * k]))
            } else {
                let r = self.rollout(&tape, store, tape.constant(context_frames.clone()), context_actions, mode, rng)?;
                let last = |v: Var<'_, T>| -> ArrayD<T> {
                    let val = v.value();
                    let n = val.shape()[1];
                    val.index_axis(Axis(1), n - 1).to_owned()
                };
                (last(r.h), last(r.z))
            }
        };
        let a_all = one_hot_actions::<T>(query_actions, self.cfg.num_actions);
        let (mut hs, mut zs, mut priors) = (Vec::with_capacity(q), Vec::with_capacity(q), Vec::with_capacity(q));
        for step in 0..q {
            let tape = Tape::new();
            let a = tape.constant(a_all.index_axis(Axis(1), step).to_owned());
            let h_next = self.rssm_step(&tape, store, tape.constant(h.clone()), tape.constant(z.clone()), a)?;
            let logits = detached(self.prior_logits(&tape, store, h_next)?);
            let probs = mix_probs_array(&logits);
            let z_next = match mode {
                SampleMode::Relaxed => probs,
                _ => sample_one_hot(&probs, mode, rng),
            }
            .reshaped(&[b, g * k]);
            h = detached(h_next);
            z = z_next;
            hs.push(h.clone());
            zs.push(z.clone());
            priors.push(logits);
        }
        let stack = |xs: &[ArrayD<T>]| -> ArrayD<T> {
            let views: Vec<_> = xs.iter().map(|x| x.view()).collect();
            ndarray::stack(Axis(1), &views).expect("stack")
        };
        let z_all = stack(&zs);
        let tape = Tape::new();
        let heads = decode_heads(
            &tape,
            store,
            &self.cfg,
            &self.decoder,
            self.reward.as_ref(),
            tape.constant(stack(&hs)),
            tape.constant(z_all.clone()),
        )?;
        Ok(ImaginationResult {
            frames: detached(heads.recon),
            latents: z_all,
            prior_logits: stack(&priors),
            reward_logits: heads.reward_logits.map(|v| to_array2(detached(v))),
            mse_per_step: None,
        })
    }
}
