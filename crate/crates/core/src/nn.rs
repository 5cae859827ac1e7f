//! Dense, normalization and convolutional building blocks.

use ndarray::ArrayD;

use crate::error::{shape_err, Result};
use crate::scalar::{cast, Scalar};
use crate::substrate::{ParamId, ParamStore, Rng, Tape, Var};

pub const LN_EPS: f64 = 1e-5;

pub(crate) fn normal_array<T: Scalar>(shape: &[usize], std: f64, rng: &mut Rng) -> ArrayD<T> {
    let n: usize = shape.iter().product();
    ArrayD::from_shape_vec(shape.to_vec(), (0..n).map(|_| cast(rng.normal() * std)).collect()).expect("shape")
}

/// `y = x W + b` over the last axis.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let std = 1.0 / (fan_in as f64).sqrt();
        let w = store.add(format!("{name}.w"), normal_array(&[fan_in, fan_out], std, rng));
        let b = store.add_no_decay(format!("{name}.b"), ArrayD::zeros(vec![fan_out]));
        Self { w, b: Some(b), fan_in, fan_out }
    }

    pub fn forward<'t, T: Scalar>(&self, tape: &'t Tape<T>, store: &ParamStore<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let y = x.matmul(tape.param(store, self.w))?;
        match self.b {
            Some(b) => y.add(tape.param(store, b)),
            None => Ok(y),
        }
    }
}

/// Layer normalization over the last axis with a learned gain and bias.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Self {
        let gain = store.add_no_decay(format!("{name}.g"), ArrayD::ones(vec![dim]));
        let bias = store.add_no_decay(format!("{name}.b"), ArrayD::zeros(vec![dim]));
        Self { gain, bias }
    }

    pub fn forward<'t, T: Scalar>(&self, tape: &'t Tape<T>, store: &ParamStore<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.layer_norm(LN_EPS).mul(tape.param(store, self.gain))?.add(tape.param(store, self.bias))
    }
}

/// Hidden layers of `Linear -> LayerNorm -> SiLU`, then a plain output projection.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub hidden: Vec<(Linear, LayerNorm)>,
    pub out: Linear,
}

impl Mlp {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        fan_in: usize,
        units: usize,
        layers: usize,
        fan_out: usize,
        rng: &mut Rng,
    ) -> Self {
        let mut hidden = Vec::with_capacity(layers);
        let mut width = fan_in;
        for i in 0..layers {
            let lin = Linear::new(store, &format!("{name}.l{i}"), width, units, rng);
            let ln = LayerNorm::new(store, &format!("{name}.n{i}"), units);
            hidden.push((lin, ln));
            width = units;
        }
        let out = Linear::new(store, &format!("{name}.out"), width, fan_out, rng);
        Self { hidden, out }
    }

    pub fn forward<'t, T: Scalar>(&self, tape: &'t Tape<T>, store: &ParamStore<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let mut h = x;
        for (lin, ln) in &self.hidden {
            h = ln.forward(tape, store, lin.forward(tape, store, h)?)?.silu();
        }
        self.out.forward(tape, store, h)
    }
}

/// Spatial geometry shared by the encoder and decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub height: usize,
    pub width: usize,
    pub layers: usize,
    pub multiplier: usize,
}

impl ConvShape {
    pub fn channels(&self, layer: usize) -> usize {
        self.multiplier << layer
    }

    pub fn final_hw(&self) -> (usize, usize) {
        (self.height >> self.layers, self.width >> self.layers)
    }

    pub fn embed_dim(&self) -> usize {
        let (h, w) = self.final_hw();
        h * w * self.channels(self.layers - 1)
    }

    pub fn validate(&self) -> Result<()> {
        let unit = 1usize << self.layers;
        if self.layers == 0 || self.height % unit != 0 || self.width % unit != 0 || self.multiplier == 0 {
            return Err(crate::Error::Invalid(format!(
                "frame {}x{} must be divisible by 2^{} with a positive multiplier",
                self.height, self.width, self.layers
            )));
        }
        Ok(())
    }
}

/// Strided convolutions (k=4, s=2) with LayerNorm and SiLU, then flatten.
#[derive(Debug, Clone)]
pub struct ConvEncoder {
    pub shape: ConvShape,
    layers: Vec<(ParamId, ParamId, LayerNorm)>,
}

impl ConvEncoder {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, shape: ConvShape, rng: &mut Rng) -> Result<Self> {
        shape.validate()?;
        let mut layers = Vec::new();
        let mut cin = 3;
        for i in 0..shape.layers {
            let cout = shape.channels(i);
            let std = 1.0 / ((16 * cin) as f64).sqrt();
            let w = store.add(format!("{name}.conv{i}.w"), normal_array(&[4, 4, cin, cout], std, rng));
            let b = store.add_no_decay(format!("{name}.conv{i}.b"), ArrayD::zeros(vec![cout]));
            let ln = LayerNorm::new(store, &format!("{name}.norm{i}"), cout);
            layers.push((w, b, ln));
            cin = cout;
        }
        Ok(Self { shape, layers })
    }

    /// `x`: (B, H, W, 3) in [0, 1]; returns (B, embed_dim).
    pub fn forward<'t, T: Scalar>(&self, tape: &'t Tape<T>, store: &ParamStore<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let xs = x.shape();
        if xs.len() != 4 || xs[1] != self.shape.height || xs[2] != self.shape.width || xs[3] != 3 {
            return Err(shape_err("encoder", &xs, &[xs.first().copied().unwrap_or(0), self.shape.height, self.shape.width, 3]));
        }
        let mut h = x.add_scalar(-0.5);
        for (w, b, ln) in &self.layers {
            h = h.conv2d(tape.param(store, *w), 2, 1)?.add(tape.param(store, *b))?;
            h = ln.forward(tape, store, h)?.silu();
        }
        h.reshape(&[xs[0], self.shape.embed_dim()])
    }
}

/// Linear projection to the coarsest grid followed by transposed convolutions.
#[derive(Debug, Clone)]
pub struct ConvDecoder {
    pub shape: ConvShape,
    proj: Linear,
    layers: Vec<(ParamId, ParamId, Option<LayerNorm>)>,
}

impl ConvDecoder {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, fan_in: usize, shape: ConvShape, rng: &mut Rng) -> Result<Self> {
        shape.validate()?;
        let proj = Linear::new(store, &format!("{name}.proj"), fan_in, shape.embed_dim(), rng);
        let mut layers = Vec::new();
        for i in (0..shape.layers).rev() {
            let cin = shape.channels(i);
            let last = i == 0;
            let cout = if last { 3 } else { shape.channels(i - 1) };
            let std = 1.0 / ((4 * cin) as f64).sqrt();
            let w = store.add(format!("{name}.tconv{i}.w"), normal_array(&[4, 4, cout, cin], std, rng));
            let b = store.add_no_decay(format!("{name}.tconv{i}.b"), ArrayD::zeros(vec![cout]));
            let ln = (!last).then(|| LayerNorm::new(store, &format!("{name}.norm{i}"), cout));
            layers.push((w, b, ln));
        }
        Ok(Self { shape, proj, layers })
    }

    /// `x`: (B, fan_in); returns frames (B, H, W, 3) centred on 0.5.
    pub fn forward<'t, T: Scalar>(&self, tape: &'t Tape<T>, store: &ParamStore<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let bsz = x.shape()[0];
        let (fh, fw) = self.shape.final_hw();
        let mut h = self
            .proj
            .forward(tape, store, x)?
            .reshape(&[bsz, fh, fw, self.shape.channels(self.shape.layers - 1)])?;
        for (w, b, ln) in &self.layers {
            h = h.conv_transpose2d(tape.param(store, *w), 2, 1)?.add(tape.param(store, *b))?;
            if let Some(ln) = ln {
                h = ln.forward(tape, store, h)?.silu();
            }
        }
        Ok(h.add_scalar(0.5))
    }
}
