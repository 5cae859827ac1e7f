//! Stacks of SSM blocks with parallel and single-step execution.
//!
//! Block wiring (pre-norm):
//! `x += mix(silu(ssm(ln(x))))` twice, then `x += down(glu(up(ln(x))))`
//! unless the MLP is disabled. A final layer norm follows the stack.

use ndarray::Array2;

use crate::error::{shape_err, Result};
use crate::nn::{LayerNorm, Linear};
use crate::scalar::Scalar;
use crate::ssm::{DiscreteSsm, Flavor, LayerState, SsmLayer, SsmLayerConfig, DEFAULT_MAX_KERNEL_LEN};
use crate::substrate::{ParamStore, Rng, Tape, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct BlockConfig {
    pub flavor: Flavor,
    pub d_model: usize,
    pub d_ff: usize,
    pub n_blocks: usize,
    /// Real SSM state size per system.
    pub state_size: usize,
    pub no_mlp: bool,
    pub max_kernel_len: usize,
}

impl BlockConfig {
    pub fn new(flavor: Flavor, d_model: usize, d_ff: usize, n_blocks: usize, state_size: usize) -> Self {
        Self {
            flavor,
            d_model,
            d_ff,
            n_blocks,
            state_size,
            no_mlp: false,
            max_kernel_len: DEFAULT_MAX_KERNEL_LEN,
        }
    }
}

#[derive(Debug, Clone)]
struct Block {
    norms: [LayerNorm; 2],
    ssms: [SsmLayer; 2],
    mixes: [Linear; 2],
    mlp: Option<(LayerNorm, Linear, Linear)>,
}

/// Hidden states of every SSM layer, block-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PssmState<T: Scalar> {
    pub layers: Vec<LayerState<T>>,
}

impl<T: Scalar> PssmState<T> {
    pub fn batch(&self) -> usize {
        self.layers.first().map(|l| l.batch()).unwrap_or(0)
    }

    /// Layer shapes, for structural comparison.
    pub fn shapes(&self) -> Vec<(usize, usize, usize)> {
        self.layers.iter().map(|l| l.s.dim()).collect()
    }
}

/// Precomputed discretizations used by [`BlockStack::step`].
pub struct StepCache<T: Scalar> {
    layers: Vec<Vec<DiscreteSsm<T>>>,
}

#[derive(Debug, Clone)]
pub struct BlockStack {
    pub cfg: BlockConfig,
    blocks: Vec<Block>,
    final_norm: LayerNorm,
}

impl BlockStack {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, cfg: BlockConfig, rng: &mut Rng) -> Result<Self> {
        let d = cfg.d_model;
        let mut blocks = Vec::with_capacity(cfg.n_blocks);
        for bi in 0..cfg.n_blocks {
            let name = |s: &str| format!("{prefix}.b{bi}.{s}");
            let mut layer_cfg = SsmLayerConfig::new(cfg.flavor, d, cfg.state_size);
            layer_cfg.max_kernel_len = cfg.max_kernel_len;
            let norms = [LayerNorm::new(store, &name("ln0"), d), LayerNorm::new(store, &name("ln1"), d)];
            let ssms = [
                SsmLayer::new(store, &name("ssm0"), layer_cfg.clone(), rng)?,
                SsmLayer::new(store, &name("ssm1"), layer_cfg, rng)?,
            ];
            let mixes = [Linear::new(store, &name("mix0"), d, d, rng), Linear::new(store, &name("mix1"), d, d, rng)];
            let mlp = (!cfg.no_mlp).then(|| {
                (
                    LayerNorm::new(store, &name("ln_mlp"), d),
                    Linear::new(store, &name("up"), d, 2 * cfg.d_ff, rng),
                    Linear::new(store, &name("down"), cfg.d_ff, d, rng),
                )
            });
            blocks.push(Block { norms, ssms, mixes, mlp });
        }
        let final_norm = LayerNorm::new(store, &format!("{prefix}.ln_out"), d);
        Ok(Self { cfg, blocks, final_norm })
    }

    pub fn zero_state<T: Scalar>(&self, batch: usize) -> PssmState<T> {
        PssmState {
            layers: self.blocks.iter().flat_map(|b| b.ssms.iter().map(move |s| s.zero_state(batch))).collect(),
        }
    }

    pub fn ssm_layers(&self) -> impl Iterator<Item = &SsmLayer> {
        self.blocks.iter().flat_map(|b| b.ssms.iter())
    }

    fn check_state<T: Scalar>(&self, state: &PssmState<T>, batch: usize) -> Result<()> {
        let expected = self.zero_state::<T>(batch).shapes();
        if state.shapes() != expected {
            return Err(shape_err("blocks.state", &[state.layers.len(), state.batch()], &[expected.len(), batch]));
        }
        Ok(())
    }

    fn mlp<'t, T: Scalar>(&self, block: &Block, tape: &'t Tape<T>, store: &ParamStore<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        match &block.mlp {
            Some((ln, up, down)) => {
                let h = up.forward(tape, store, ln.forward(tape, store, x)?)?.glu()?;
                x.add(down.forward(tape, store, h)?)
            }
            None => Ok(x),
        }
    }

    /// Parallel pass over `g` of shape (B, T, d_model).
    pub fn forward<'t, T: Scalar>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        g: Var<'t, T>,
        s0: &PssmState<T>,
    ) -> Result<(Var<'t, T>, PssmState<T>)> {
        let gs = g.shape();
        if gs.len() != 3 || gs[2] != self.cfg.d_model {
            return Err(shape_err("blocks_parallel", &gs, &[s0.batch(), 0, self.cfg.d_model]));
        }
        self.check_state(s0, gs[0])?;
        let mut x = g;
        let mut states = Vec::with_capacity(s0.layers.len());
        let mut li = 0;
        for block in &self.blocks {
            for j in 0..2 {
                let h = block.norms[j].forward(tape, store, x)?;
                let (h, s) = block.ssms[j].forward(tape, store, h, &s0.layers[li])?;
                states.push(s);
                li += 1;
                x = x.add(block.mixes[j].forward(tape, store, h.silu())?)?;
            }
            x = self.mlp(block, tape, store, x)?;
        }
        Ok((self.final_norm.forward(tape, store, x)?, PssmState { layers: states }))
    }

    pub fn step_cache<T: Scalar>(&self, store: &ParamStore<T>) -> Result<StepCache<T>> {
        Ok(StepCache {
            layers: self.ssm_layers().map(|l| l.discretize(store)).collect::<Result<_>>()?,
        })
    }

    /// One recurrent step on `g` of shape (B, d_model). The SSM recurrences are
    /// evaluated outside the tape, so no gradient flows through this path.
    pub fn step<'t, T: Scalar>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        cache: &StepCache<T>,
        g: Var<'t, T>,
        state: &PssmState<T>,
    ) -> Result<(Var<'t, T>, PssmState<T>)> {
        let gs = g.shape();
        if gs.len() != 2 || gs[1] != self.cfg.d_model {
            return Err(shape_err("blocks_step", &gs, &[state.batch(), self.cfg.d_model]));
        }
        self.check_state(state, gs[0])?;
        let mut x = g;
        let mut states = Vec::with_capacity(state.layers.len());
        let mut li = 0;
        for block in &self.blocks {
            for j in 0..2 {
                let h = block.norms[j].forward(tape, store, x)?;
                let hv = h.value();
                let h2: Array2<T> = hv.view().into_dimensionality().expect("rank 2").to_owned();
                let (y, s) = block.ssms[j].step(&cache.layers[li], h2.view(), &state.layers[li])?;
                states.push(s);
                li += 1;
                let y = tape.constant(y.into_dyn());
                x = x.add(block.mixes[j].forward(tape, store, y.silu())?)?;
            }
            x = self.mlp(block, tape, store, x)?;
        }
        Ok((self.final_norm.forward(tape, store, x)?, PssmState { layers: states }))
    }
}
