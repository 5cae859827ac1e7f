//! World model with an SSM block stack as the sequence backbone.

use ndarray::{Array2, ArrayD, Axis, IxDyn};

use super::config::{PosteriorMode, SampleMode, WorldModelConfig};
use super::latent::{latents, mix_probs, mix_probs_array, sample_one_hot};
use super::{
    check_imagine_args, decode_heads, detached, elbo, one_hot_actions, to_array2, Batch, ImaginationResult,
    LossTerms, TeacherForced, WorldModel,
};
use crate::blocks::{BlockConfig, BlockStack, PssmState};
use crate::error::{Error, Result};
use crate::nn::{ConvDecoder, ConvEncoder, Mlp};
use crate::scalar::Scalar;
use crate::substrate::{ParamStore, Reshaped, Rng, Tape, Var};

#[derive(Debug, Clone)]
pub struct S4wm {
    pub cfg: WorldModelConfig,
    encoder: ConvEncoder,
    posterior: Mlp,
    full: Option<(Mlp, BlockStack)>,
    input: Mlp,
    blocks: BlockStack,
    prior: Mlp,
    decoder: ConvDecoder,
    reward: Option<Mlp>,
}

/// Teacher-forced forward pass, still on the tape.
pub(crate) struct Forward<'t, T: Scalar> {
    pub post_logits: Var<'t, T>,
    pub q: Var<'t, T>,
    pub prior_logits: Var<'t, T>,
    pub p: Var<'t, T>,
    pub heads: super::Heads<'t, T>,
}

impl S4wm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, cfg: WorldModelConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let gk = cfg.latent_dim();
        let (units, layers) = (cfg.mlp_units, cfg.mlp_layers);
        let encoder = ConvEncoder::new(store, "enc", cfg.conv_shape(), rng)?;
        let embed = cfg.conv_shape().embed_dim();
        let mut block_cfg = BlockConfig::new(cfg.flavor, cfg.d_model, cfg.d_ff, cfg.n_blocks, cfg.state_size);
        block_cfg.no_mlp = cfg.no_mlp;
        block_cfg.max_kernel_len = cfg.max_kernel_len;
        let (posterior, full) = match cfg.posterior_mode {
            PosteriorMode::Factorized => (Mlp::new(store, "post", embed, units, layers, gk, rng), None),
            PosteriorMode::FullHistory => {
                let inp = Mlp::new(store, "post_in", embed + cfg.num_actions, units, layers, cfg.d_model, rng);
                let stack = BlockStack::new(store, "post_blocks", block_cfg.clone(), rng)?;
                (Mlp::new(store, "post", cfg.d_model, units, layers, gk, rng), Some((inp, stack)))
            }
        };
        let input = Mlp::new(store, "in", gk + cfg.num_actions, units, layers, cfg.d_model, rng);
        let blocks = BlockStack::new(store, "blocks", block_cfg, rng)?;
        let prior = Mlp::new(store, "prior", cfg.d_model, units, layers, gk, rng);
        let decoder = ConvDecoder::new(store, "dec", cfg.d_model + gk, cfg.conv_shape(), rng)?;
        let reward = cfg
            .reward_head
            .then(|| Mlp::new(store, "reward", cfg.d_model + gk, units, layers, 1, rng));
        Ok(Self { cfg, encoder, posterior, full, input, blocks, prior, decoder, reward })
    }

    pub fn blocks(&self) -> &BlockStack {
        &self.blocks
    }

    /// CNN embeddings of frames `(B, L, H, W, 3)` -> `(B, L, E)`.
    pub fn encode<'t, T: Scalar>(&self, tape: &'t Tape<T>, store: &ParamStore<T>, frames: Var<'t, T>) -> Result<Var<'t, T>> {
        let s = frames.shape();
        if s.len() != 5 {
            return Err(crate::error::shape_err("encode", &s, &[0, 0, self.cfg.frame_height, self.cfg.frame_width, 3]));
        }
        let flat = frames.reshape(&[s[0] * s[1], s[2], s[3], s[4]])?;
        let e = self.encoder.forward(tape, store, flat)?;
        let width = e.shape()[1];
        e.reshape(&[s[0], s[1], width])
    }

    /// Factorized posterior logits `(B, L, G, K)` from embeddings `(B, L, E)`.
    pub fn posterior_logits<'t, T: Scalar>(&self, tape: &'t Tape<T>, store: &ParamStore<T>, e: Var<'t, T>) -> Result<Var<'t, T>> {
        if self.full.is_some() {
            return Err(Error::Invalid("model uses the full-history posterior".into()));
        }
        let s = e.shape();
        self.posterior.forward(tape, store, e)?.reshape(&[s[0], s[1], self.cfg.groups, self.cfg.classes])
    }

    /// Full-history posterior logits from embeddings `(B, L, E)` and actions
    /// `(B, L-1)`; step 0 uses an all-zero dummy action.
    pub fn posterior_logits_full<'t, T: Scalar>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        e: Var<'t, T>,
        actions: &Array2<usize>,
    ) -> Result<Var<'t, T>> {
        let (inp, stack) = self
            .full
            .as_ref()
            .ok_or_else(|| Error::Invalid("model uses the factorized posterior".into()))?;
        let s = e.shape();
        let (b, l) = (s[0], s[1]);
        let mut a = ArrayD::<T>::zeros(IxDyn(&[b, l, self.cfg.num_actions]));
        a.slice_axis_mut(Axis(1), (1..l).into())
            .assign(&one_hot_actions::<T>(actions, self.cfg.num_actions));
        let x = tape.concat(&[e, tape.constant(a)], 2)?;
        let g = inp.forward(tape, store, x)?;
        let (h, _) = stack.forward(tape, store, g, &stack.zero_state(b))?;
        self.posterior.forward(tape, store, h)?.reshape(&[b, l, self.cfg.groups, self.cfg.classes])
    }

    fn posterior_any<'t, T: Scalar>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        frames: &ArrayD<T>,
        actions: &Array2<usize>,
    ) -> Result<Var<'t, T>> {
        let e = self.encode(tape, store, tape.constant(frames.clone()))?;
        match self.cfg.posterior_mode {
            PosteriorMode::Factorized => self.posterior_logits(tape, store, e),
            PosteriorMode::FullHistory => self.posterior_logits_full(tape, store, e, actions),
        }
    }

    /// `g_t = MLP(concat[z_{t-1}, a_t])` for `z` `(B, L, G*K)` and one-hot actions `(B, L, A)`.
    fn inputs<'t, T: Scalar>(&self, tape: &'t Tape<T>, store: &ParamStore<T>, z: Var<'t, T>, a: Var<'t, T>) -> Result<Var<'t, T>> {
        let axis = z.shape().len() - 1;
        self.input.forward(tape, store, tape.concat(&[z, a], axis)?)
    }

    pub(crate) fn forward<'t, T: Scalar>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        batch: &Batch<T>,
        mode: SampleMode,
        rng: &mut Rng,
    ) -> Result<Forward<'t, T>> {
        batch.validate(&self.cfg)?;
        let (b, t) = batch.actions.dim();
        let (g, k) = (self.cfg.groups, self.cfg.classes);
        let post_logits = self.posterior_any(tape, store, &batch.frames, &batch.actions)?;
        let q = mix_probs(post_logits);
        let z = latents(q, mode, rng).reshape(&[b, t + 1, g * k])?;
        let a = tape.constant(one_hot_actions::<T>(&batch.actions, self.cfg.num_actions));
        let inputs = self.inputs(tape, store, z.slice_axis(1, 0, t)?, a)?;
        let (h, _) = self.blocks.forward(tape, store, inputs, &self.blocks.zero_state(b))?;
        let prior_logits = self.prior.forward(tape, store, h)?.reshape(&[b, t, g, k])?;
        let p = mix_probs(prior_logits);
        let heads = decode_heads(tape, store, &self.cfg, &self.decoder, self.reward.as_ref(), h, z.slice_axis(1, 1, t + 1)?)?;
        Ok(Forward { post_logits, q: q.slice_axis(1, 1, t + 1)?, prior_logits, p, heads })
    }

    fn prior_step<T: Scalar>(&self, store: &ParamStore<T>, h: &ArrayD<T>) -> Result<ArrayD<T>> {
        let tape = Tape::new();
        let b = h.shape()[0];
        let logits = self.prior.forward(&tape, store, tape.constant(h.clone()))?;
        Ok(detached(logits).reshaped(&[b, self.cfg.groups, self.cfg.classes]))
    }
}

fn pick_latent<T: Scalar>(logits: &ArrayD<T>, mode: SampleMode, rng: &mut Rng) -> ArrayD<T> {
    let probs = mix_probs_array(logits);
    let z = match mode {
        SampleMode::Relaxed => probs,
        _ => sample_one_hot(&probs, mode, rng),
    };
    let b = z.shape()[0];
    let n = z.len() / b;
    z.reshaped(&[b, n])
}

impl<T: Scalar> WorldModel<T> for S4wm {
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
        let fwd = self.forward(tape, store, batch, mode, rng)?;
        elbo(tape, &self.cfg, batch, &fwd.heads, fwd.q, fwd.p)
    }

    fn teacher_forced(&self, store: &ParamStore<T>, batch: &Batch<T>, mode: SampleMode, rng: &mut Rng) -> Result<TeacherForced<T>> {
        let tape = Tape::new();
        let fwd = self.forward(&tape, store, batch, mode, rng)?;
        Ok(TeacherForced {
            posterior_logits: detached(fwd.post_logits),
            prior_logits: detached(fwd.prior_logits),
            recon: detached(fwd.heads.recon),
            reward_logits: fwd.heads.reward_logits.map(|r| to_array2(detached(r))),
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
        let (b, c, q) = check_imagine_args(&self.cfg, context_frames, context_actions, query_actions)?;
        let (g, k) = (self.cfg.groups, self.cfg.classes);
        let gk = g * k;
        let n_act = self.cfg.num_actions;
        // Context pass over g_1..g_{C+1}: posteriors for x_0..x_C, actions a_1..a_{C+1}.
        let (mut h_last, mut state) = {
            let tape = Tape::new();
            let post = self.posterior_any(&tape, store, context_frames, context_actions)?;
            let z_ctx = latents(mix_probs(post), mode, rng).reshape(&[b, c + 1, gk])?;
            let mut acts = Array2::<usize>::zeros((b, c + 1));
            acts.slice_mut(ndarray::s![.., ..c]).assign(context_actions);
            acts.column_mut(c).assign(&query_actions.column(0));
            let a = tape.constant(one_hot_actions::<T>(&acts, n_act));
            let inputs = self.inputs(&tape, store, z_ctx, a)?;
            let (h, s) = self.blocks.forward(&tape, store, inputs, &self.blocks.zero_state(b))?;
            let last = h.slice_axis(1, c, c + 1)?.reshape(&[b, self.cfg.d_model])?;
            (detached(last), s)
        };
        let cache = self.blocks.step_cache(store)?;
        let mut hs = Vec::with_capacity(q);
        let mut zs = Vec::with_capacity(q);
        let mut priors = Vec::with_capacity(q);
        for step in 0..q {
            let logits = self.prior_step(store, &h_last)?;
            let z = pick_latent(&logits, mode, rng);
            if step + 1 < q {
                let tape = Tape::new();
                let a = one_hot_actions::<T>(&query_actions.slice(ndarray::s![.., step + 1..step + 2]).to_owned(), n_act)
                    .reshaped(&[b, n_act]);
                let inputs = self.inputs(&tape, store, tape.constant(z.clone()), tape.constant(a))?;
                let (h, s): (Var<'_, T>, PssmState<T>) = self.blocks.step(&tape, store, &cache, inputs, &state)?;
                hs.push(std::mem::replace(&mut h_last, detached(h)));
                state = s;
            } else {
                hs.push(h_last.clone());
            }
            zs.push(z);
            priors.push(logits);
        }
        let stack = |xs: &[ArrayD<T>]| -> ArrayD<T> {
            let views: Vec<_> = xs.iter().map(|x| x.view()).collect();
            ndarray::stack(Axis(1), &views).expect("stack")
        };
        let h_all = stack(&hs);
        let z_all = stack(&zs);
        let tape = Tape::new();
        let heads = decode_heads(
            &tape,
            store,
            &self.cfg,
            &self.decoder,
            self.reward.as_ref(),
            tape.constant(h_all),
            tape.constant(z_all.clone()),
        )?;
        Ok(ImaginationResult {
            frames: detached(heads.recon),
            latents: z_all,
            prior_logits: stack(&priors),
            reward_logits: heads.reward_logits.map(|r| to_array2(detached(r))),
            mse_per_step: None,
        })
    }
}
