//! SSM layers over `(batch, time, channels)` tensors, recorded on a tape.
//!
//! The DPLR flavor runs one SISO system per channel; the diagonal flavor runs
//! one MIMO system across all channels. Both keep conjugate-pair halves of
//! the state and differentiate the complex recurrences by hand.

use std::sync::Arc;

use ndarray::{Array1, Array2, Array3, ArrayD, ArrayView2, Axis, Ix1, Ix2, Ix3};
use num_complex::Complex;
use num_traits::Zero;

use super::discretize::{bilinear_dplr, expm1_over, zoh_diagonal, BilinearParts};
use super::hippo::hippo_init;
use super::kernel::scan_states;
use super::linalg::{self, Cx};
use super::{DiscreteSsm, Flavor, SsmParams, StateMatrix, DEFAULT_MAX_KERNEL_LEN};
use crate::error::{shape_err, Error, Result};
use crate::scalar::{cast, Scalar};
use crate::substrate::fft::FftConvolver;
use crate::substrate::tape::{sigmoid, softplus};
use crate::substrate::{ParamId, ParamStore, Rng, Tape, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct SsmLayerConfig {
    pub flavor: Flavor,
    /// Number of channels H.
    pub channels: usize,
    /// Real state size N; N/2 complex conjugate-pair states are stored.
    pub state_size: usize,
    pub dt_min: f64,
    pub dt_max: f64,
    pub max_kernel_len: usize,
}

impl SsmLayerConfig {
    pub fn new(flavor: Flavor, channels: usize, state_size: usize) -> Self {
        Self {
            flavor,
            channels,
            state_size,
            dt_min: 1e-3,
            dt_max: 1e-1,
            max_kernel_len: DEFAULT_MAX_KERNEL_LEN,
        }
    }

    /// Stored complex states per system.
    pub fn half(&self) -> usize {
        self.state_size / 2
    }

    /// Independent systems: H for DPLR, 1 for diagonal MIMO.
    pub fn groups(&self) -> usize {
        match self.flavor {
            Flavor::Dplr => self.channels,
            Flavor::DiagonalMimo => 1,
        }
    }
}

/// Carried hidden state of one layer, shape (batch, groups, N/2).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerState<T: Scalar> {
    pub s: Array3<Complex<T>>,
}

impl<T: Scalar> LayerState<T> {
    pub fn zeros(batch: usize, groups: usize, half: usize) -> Self {
        Self { s: Array3::zeros((batch, groups, half)) }
    }

    pub fn is_zero(&self) -> bool {
        self.s.iter().all(|z| z.is_zero())
    }

    pub fn batch(&self) -> usize {
        self.s.dim().0
    }
}

#[derive(Debug, Clone)]
pub struct SsmLayer {
    pub cfg: SsmLayerConfig,
    lambda_re: ParamId,
    lambda_im: ParamId,
    c_re: ParamId,
    c_im: ParamId,
    d: ParamId,
    log_dt: ParamId,
    b_re: ParamId,
    b_im: ParamId,
    p_re: Option<ParamId>,
    p_im: Option<ParamId>,
}

fn inv_softplus(y: f64) -> f64 {
    (y.exp() - 1.0).ln()
}

fn arr<T: Scalar>(shape: &[usize], f: impl FnMut(usize) -> f64) -> ArrayD<T> {
    let n: usize = shape.iter().product();
    ArrayD::from_shape_vec(shape.to_vec(), (0..n).map(f).map(cast::<T>).collect()).expect("shape")
}

impl SsmLayer {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, cfg: SsmLayerConfig, rng: &mut Rng) -> Result<Self> {
        if cfg.state_size < 2 || cfg.state_size % 2 != 0 {
            return Err(Error::Invalid(format!("SSM state size must be even and >= 2, got {}", cfg.state_size)));
        }
        if cfg.channels == 0 || !(cfg.dt_min > 0.0 && cfg.dt_min <= cfg.dt_max) {
            return Err(Error::Invalid("SSM layer needs channels > 0 and 0 < dt_min <= dt_max".into()));
        }
        let h = cfg.channels;
        let m = cfg.half();
        let init = hippo_init(cfg.state_size).conjugate_half();
        let raw = inv_softplus(0.5);
        let (lo, hi) = (cfg.dt_min.ln(), cfg.dt_max.ln());
        let name = |s: &str| format!("{prefix}.{s}");
        let layer = match cfg.flavor {
            Flavor::Dplr => {
                let shape = [h, m];
                let lambda_re = store.add_no_decay(name("lambda_re"), arr(&shape, |_| raw));
                let lambda_im = store.add_no_decay(name("lambda_im"), arr(&shape, |i| init.lambda[i % m].im));
                let p_re = store.add_frozen(name("p_re"), arr(&shape, |i| init.p[i % m].re));
                let p_im = store.add_frozen(name("p_im"), arr(&shape, |i| init.p[i % m].im));
                let b_re = store.add_frozen(name("b_re"), arr(&shape, |i| init.b[i % m].re));
                let b_im = store.add_frozen(name("b_im"), arr(&shape, |i| init.b[i % m].im));
                let std = 0.5f64.sqrt();
                let c_re = store.add(name("c_re"), arr(&shape, |_| rng.normal() * std));
                let c_im = store.add(name("c_im"), arr(&shape, |_| rng.normal() * std));
                let d = store.add_no_decay(name("d"), arr(&[h], |_| rng.normal()));
                let log_dt = store.add_no_decay(name("log_dt"), arr(&[h], |_| rng.uniform_range(lo, hi)));
                SsmLayer { cfg, lambda_re, lambda_im, c_re, c_im, d, log_dt, b_re, b_im, p_re: Some(p_re), p_im: Some(p_im) }
            }
            Flavor::DiagonalMimo => {
                let lambda_re = store.add_no_decay(name("lambda_re"), arr(&[m], |_| raw));
                let lambda_im = store.add_no_decay(name("lambda_im"), arr(&[m], |i| init.lambda[i].im));
                let b_std = (1.0 / (2.0 * h as f64)).sqrt();
                let b_re = store.add(name("b_re"), arr(&[m, h], |_| rng.normal() * b_std));
                let b_im = store.add(name("b_im"), arr(&[m, h], |_| rng.normal() * b_std));
                let c_std = (1.0 / (2.0 * m as f64)).sqrt();
                let c_re = store.add(name("c_re"), arr(&[h, m], |_| rng.normal() * c_std));
                let c_im = store.add(name("c_im"), arr(&[h, m], |_| rng.normal() * c_std));
                let d = store.add_no_decay(name("d"), arr(&[h], |_| rng.normal()));
                let log_dt = store.add_no_decay(name("log_dt"), arr(&[m], |_| rng.uniform_range(lo, hi)));
                SsmLayer { cfg, lambda_re, lambda_im, c_re, c_im, d, log_dt, b_re, b_im, p_re: None, p_im: None }
            }
        };
        Ok(layer)
    }

    pub fn zero_state<T: Scalar>(&self, batch: usize) -> LayerState<T> {
        LayerState::zeros(batch, self.cfg.groups(), self.cfg.half())
    }

    /// Continuous-time parameters of every independent system in the layer.
    pub fn params<T: Scalar>(&self, store: &ParamStore<T>) -> Vec<SsmParams<T>> {
        let v2 = |id: ParamId| store.value(id).view().into_dimensionality::<Ix2>().expect("rank 2").to_owned();
        let v1 = |id: ParamId| store.value(id).view().into_dimensionality::<Ix1>().expect("rank 1").to_owned();
        let cplx2 = |re: &Array2<T>, im: &Array2<T>| Array2::from_shape_fn(re.dim(), |ix| Complex::new(re[ix], im[ix]));
        let d = v1(self.d);
        let log_dt = v1(self.log_dt);
        match self.cfg.flavor {
            Flavor::Dplr => {
                let (lr, li) = (v2(self.lambda_re), v2(self.lambda_im));
                let lambda = Array2::from_shape_fn(lr.dim(), |ix| Complex::new(-softplus(lr[ix]), li[ix]));
                let p = cplx2(&v2(self.p_re.unwrap()), &v2(self.p_im.unwrap()));
                let b = cplx2(&v2(self.b_re), &v2(self.b_im));
                let c = cplx2(&v2(self.c_re), &v2(self.c_im));
                (0..self.cfg.channels)
                    .map(|h| SsmParams {
                        flavor: Flavor::Dplr,
                        lambda: lambda.row(h).to_owned(),
                        p: Some(p.row(h).to_owned()),
                        b: b.row(h).to_owned().insert_axis(Axis(1)),
                        c: c.row(h).to_owned().insert_axis(Axis(0)),
                        d: Array1::from_elem(1, d[h]),
                        log_dt: Array1::from_elem(1, log_dt[h]),
                        conjugate: true,
                    })
                    .collect()
            }
            Flavor::DiagonalMimo => {
                let (lr, li) = (v1(self.lambda_re), v1(self.lambda_im));
                let lambda = Array1::from_shape_fn(lr.len(), |i| Complex::new(-softplus(lr[i]), li[i]));
                vec![SsmParams {
                    flavor: Flavor::DiagonalMimo,
                    lambda,
                    p: None,
                    b: cplx2(&v2(self.b_re), &v2(self.b_im)),
                    c: cplx2(&v2(self.c_re), &v2(self.c_im)),
                    d,
                    log_dt,
                    conjugate: true,
                }]
            }
        }
    }

    pub fn discretize<T: Scalar>(&self, store: &ParamStore<T>) -> Result<Vec<DiscreteSsm<T>>> {
        self.params(store).iter().map(super::discretize).collect()
    }

    /// One recurrent step on `u` of shape (batch, H).
    pub fn step<T: Scalar>(
        &self,
        disc: &[DiscreteSsm<T>],
        u: ArrayView2<T>,
        state: &LayerState<T>,
    ) -> Result<(Array2<T>, LayerState<T>)> {
        let (bsz, h) = u.dim();
        if h != self.cfg.channels || state.s.dim() != (bsz, self.cfg.groups(), self.cfg.half()) {
            return Err(shape_err("ssm.step", u.shape(), &[state.batch(), self.cfg.channels]));
        }
        let mut y = Array2::zeros((bsz, h));
        let mut next = state.clone();
        for b in 0..bsz {
            match self.cfg.flavor {
                Flavor::Dplr => {
                    for c in 0..h {
                        let s = state.s.slice(ndarray::s![b, c, ..]).to_owned();
                        let (yc, sc) = super::pssm_step(&disc[c], u.slice(ndarray::s![b, c..c + 1]), &s);
                        y[[b, c]] = yc[0];
                        next.s.slice_mut(ndarray::s![b, c, ..]).assign(&sc);
                    }
                }
                Flavor::DiagonalMimo => {
                    let s = state.s.slice(ndarray::s![b, 0, ..]).to_owned();
                    let (yb, sb) = super::pssm_step(&disc[0], u.row(b), &s);
                    y.row_mut(b).assign(&yb);
                    next.s.slice_mut(ndarray::s![b, 0, ..]).assign(&sb);
                }
            }
        }
        Ok((y, next))
    }

    /// Parallel evaluation of `u` (batch, T, H) starting from `s0`; returns the
    /// output and the final state.
    pub fn forward<'t, T: Scalar>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        u: Var<'t, T>,
        s0: &LayerState<T>,
    ) -> Result<(Var<'t, T>, LayerState<T>)> {
        let shape = u.shape();
        if shape.len() != 3 || shape[2] != self.cfg.channels || shape[1] == 0 {
            return Err(shape_err("ssm.forward", &shape, &[s0.batch(), 0, self.cfg.channels]));
        }
        if s0.s.dim() != (shape[0], self.cfg.groups(), self.cfg.half()) {
            return Err(shape_err("ssm.forward.state", s0.s.shape(), &[shape[0], self.cfg.groups(), self.cfg.half()]));
        }
        if shape[1] > self.cfg.max_kernel_len {
            return Err(Error::KernelTooLong { len: shape[1], max: self.cfg.max_kernel_len });
        }
        match self.cfg.flavor {
            Flavor::Dplr => self.forward_dplr(tape, store, u, s0),
            Flavor::DiagonalMimo => self.forward_mimo(tape, store, u, s0),
        }
    }

    fn forward_dplr<'t, T: Scalar>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        u: Var<'t, T>,
        s0: &LayerState<T>,
    ) -> Result<(Var<'t, T>, LayerState<T>)> {
        let params = self.params(store);
        let uv = u.value();
        let u3 = uv.view().into_dimensionality::<Ix3>().expect("rank 3");
        let (bsz, len, h) = u3.dim();
        let m = self.cfg.half();
        let conv = FftConvolver::<T>::new(len);
        let two: T = cast(2.0);
        let mut chans = Vec::with_capacity(h);
        for p in &params {
            let dt = p.dt(0);
            let parts = bilinear_dplr(&p.lambda, p.p.as_ref().unwrap(), &p.b, dt)?;
            let a_bar = StateMatrix::Dense(parts.a_bar.clone());
            let xs = super::kernel::power_chain(&a_bar, parts.b_bar.column(0).to_owned(), len);
            let c = p.c.row(0).to_owned();
            let kernel: Vec<T> = xs.iter().map(|x| two * dot_re(&c, x)).collect();
            let spec = conv.spectrum(kernel.iter().copied());
            chans.push(DplrChannel { params: p.clone(), dt, parts, xs, c, kernel, spec });
        }
        let mut y = Array3::<T>::zeros((bsz, len, h));
        let mut s_t = LayerState::zeros(bsz, h, m);
        let has_s0 = !s0.is_zero();
        for (ci, ch) in chans.iter().enumerate() {
            let d = ch.params.d[0];
            for b in 0..bsz {
                let signal: Vec<T> = u3.slice(ndarray::s![b, .., ci]).to_vec();
                let out = conv.causal_conv(&ch.spec, &signal);
                for k in 0..len {
                    y[[b, k, ci]] = out[k] + d * signal[k];
                }
                let mut st = Array1::<Cx<T>>::zeros(m);
                for (mi, x) in ch.xs.iter().enumerate() {
                    let w = signal[len - 1 - mi];
                    if w != T::zero() {
                        st.zip_mut_with(x, |a, &xv| *a = *a + xv * w);
                    }
                }
                if has_s0 {
                    let mut z = s0.s.slice(ndarray::s![b, ci, ..]).to_owned();
                    for k in 0..len {
                        z = linalg::matvec(&ch.parts.a_bar, &z);
                        y[[b, k, ci]] = y[[b, k, ci]] + two * dot_re(&ch.c, &z);
                    }
                    st = st + z;
                }
                s_t.s.slice_mut(ndarray::s![b, ci, ..]).assign(&st);
            }
        }
        let parents = [
            u,
            tape.param(store, self.lambda_re),
            tape.param(store, self.lambda_im),
            tape.param(store, self.c_re),
            tape.param(store, self.c_im),
            tape.param(store, self.d),
            tape.param(store, self.log_dt),
        ];
        let raw = store.shared(self.lambda_re);
        let s0c = if has_s0 { Some(s0.s.clone()) } else { None };
        let backward = Box::new(move |g: &ArrayD<T>, vals: &[&ArrayD<T>], _out: &ArrayD<T>, needs: &[bool]| {
            dplr_backward(&chans, &conv, &raw, s0c.as_ref(), g, vals[0], needs)
        });
        let out = tape.custom(&parents, y.into_dyn(), backward);
        Ok((out, s_t))
    }

    fn forward_mimo<'t, T: Scalar>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        u: Var<'t, T>,
        s0: &LayerState<T>,
    ) -> Result<(Var<'t, T>, LayerState<T>)> {
        let p = self.params(store).pop().expect("one system");
        let uv = u.value();
        let u3 = uv.view().into_dimensionality::<Ix3>().expect("rank 3");
        let (bsz, len, h) = u3.dim();
        let m = self.cfg.half();
        let dt = Array1::from_shape_fn(m, |i| p.dt(i));
        let (a_bar, b_bar) = zoh_diagonal(&p.lambda, &p.b, &dt);
        let two: T = cast(2.0);
        let mut states = Array3::<Cx<T>>::zeros((bsz, len, m));
        let mut y = Array3::<T>::zeros((bsz, len, h));
        let mut s_t = LayerState::zeros(bsz, 1, m);
        for b in 0..bsz {
            let init = s0.s.slice(ndarray::s![b, 0, ..]).to_owned();
            let seq = scan_states(&a_bar, &b_bar, u3.slice(ndarray::s![b, .., ..]), &init);
            for (k, s) in seq.iter().enumerate() {
                states.slice_mut(ndarray::s![b, k, ..]).assign(s);
                for hi in 0..h {
                    let mut acc = T::zero();
                    for n in 0..m {
                        acc = acc + (p.c[[hi, n]] * s[n]).re;
                    }
                    y[[b, k, hi]] = two * acc + p.d[hi] * u3[[b, k, hi]];
                }
            }
            s_t.s.slice_mut(ndarray::s![b, 0, ..]).assign(seq.last().unwrap());
        }
        let parents = [
            u,
            tape.param(store, self.lambda_re),
            tape.param(store, self.lambda_im),
            tape.param(store, self.c_re),
            tape.param(store, self.c_im),
            tape.param(store, self.d),
            tape.param(store, self.log_dt),
            tape.param(store, self.b_re),
            tape.param(store, self.b_im),
        ];
        let raw = store.shared(self.lambda_re);
        let ctx = MimoCtx { p, dt, a_bar, b_bar, states, s0: s0.s.clone() };
        let backward = Box::new(move |g: &ArrayD<T>, vals: &[&ArrayD<T>], _out: &ArrayD<T>, needs: &[bool]| {
            mimo_backward(&ctx, &raw, g, vals[0], needs)
        });
        let out = tape.custom(&parents, y.into_dyn(), backward);
        Ok((out, s_t))
    }
}

fn dot_re<T: Scalar>(c: &Array1<Cx<T>>, x: &Array1<Cx<T>>) -> T {
    c.iter().zip(x.iter()).fold(T::zero(), |acc, (a, b)| acc + (*a * *b).re)
}

struct DplrChannel<T: Scalar> {
    params: SsmParams<T>,
    dt: T,
    parts: BilinearParts<T>,
    xs: Vec<Array1<Cx<T>>>,
    c: Array1<Cx<T>>,
    kernel: Vec<T>,
    spec: Vec<Cx<T>>,
}

/// Gradients for a DPLR layer. Complex cogradients follow `G = dL/dRe + i dL/dIm`.
fn dplr_backward<T: Scalar>(
    chans: &[DplrChannel<T>],
    conv: &FftConvolver<T>,
    raw: &Arc<ArrayD<T>>,
    s0: Option<&Array3<Cx<T>>>,
    g: &ArrayD<T>,
    u: &ArrayD<T>,
    needs: &[bool],
) -> Vec<Option<ArrayD<T>>> {
    let g3 = g.view().into_dimensionality::<Ix3>().expect("rank 3");
    let u3 = u.view().into_dimensionality::<Ix3>().expect("rank 3");
    let (bsz, len, h) = g3.dim();
    let m = chans.first().map(|c| c.c.len()).unwrap_or(0);
    let two: T = cast(2.0);
    let half: T = cast(0.5);
    let raw2 = raw.view().into_dimensionality::<Ix2>().expect("rank 2");
    let mut gu = Array3::<T>::zeros((bsz, len, h));
    let mut g_lre = Array2::<T>::zeros((h, m));
    let mut g_lim = Array2::<T>::zeros((h, m));
    let mut g_cre = Array2::<T>::zeros((h, m));
    let mut g_cim = Array2::<T>::zeros((h, m));
    let mut g_d = Array1::<T>::zeros(h);
    let mut g_logdt = Array1::<T>::zeros(h);
    let need_params = needs[1..].iter().any(|&n| n);
    for (ci, ch) in chans.iter().enumerate() {
        let d = ch.params.d[0];
        let mut gk = vec![T::zero(); len];
        for b in 0..bsz {
            let gs: Vec<T> = g3.slice(ndarray::s![b, .., ci]).to_vec();
            let us: Vec<T> = u3.slice(ndarray::s![b, .., ci]).to_vec();
            if needs[0] {
                let back = conv.correlate(&gs, &ch.kernel);
                for k in 0..len {
                    gu[[b, k, ci]] = back[k] + d * gs[k];
                }
            }
            if need_params {
                let corr = conv.correlate(&gs, &us);
                for (acc, v) in gk.iter_mut().zip(corr) {
                    *acc = *acc + v;
                }
                g_d[ci] = g_d[ci] + gs.iter().zip(&us).fold(T::zero(), |a, (x, y)| a + *x * *y);
            }
        }
        if !need_params {
            continue;
        }
        let a_bar = &ch.parts.a_bar;
        let c_conj = ch.c.mapv(|z| z.conj());
        let mut g_c = Array1::<Cx<T>>::zeros(m);
        let mut g_abar = Array2::<Cx<T>>::zeros((m, m));
        // Kernel chain x_{k+1} = A x_k, K_k = 2 Re(c x_k).
        let mut lam = Array1::<Cx<T>>::zeros(m);
        for k in (0..len).rev() {
            let w = two * gk[k];
            if k + 1 < len {
                linalg::add_outer(&mut g_abar, &lam, &ch.xs[k]);
                lam = linalg::adjoint_matvec(a_bar, &lam);
            }
            lam.zip_mut_with(&c_conj, |l, &cc| *l = *l + cc * w);
            g_c.zip_mut_with(&ch.xs[k], |gc, &x| *gc = *gc + x.conj() * w);
        }
        let g_bbar = lam;
        // Initial-state chain z_k = A^k s0.
        if let Some(s0) = s0 {
            for b in 0..bsz {
                let init = s0.slice(ndarray::s![b, ci, ..]).to_owned();
                if init.iter().all(|z| z.is_zero()) {
                    continue;
                }
                let mut zs = Vec::with_capacity(len + 1);
                zs.push(init);
                for k in 0..len {
                    let next = linalg::matvec(a_bar, &zs[k]);
                    zs.push(next);
                }
                let mut mu = Array1::<Cx<T>>::zeros(m);
                for k in (1..=len).rev() {
                    let w = two * g3[[b, k - 1, ci]];
                    if k < len {
                        mu = linalg::adjoint_matvec(a_bar, &mu);
                    }
                    mu.zip_mut_with(&c_conj, |l, &cc| *l = *l + cc * w);
                    g_c.zip_mut_with(&zs[k], |gc, &x| *gc = *gc + x.conj() * w);
                    linalg::add_outer(&mut g_abar, &mu, &zs[k - 1]);
                }
            }
        }
        // Through the bilinear transform: A_bar = Q Np, B_bar = Q (dt b).
        let dt = ch.dt;
        let q = &ch.parts.q;
        let np = &ch.parts.np;
        let b_vec = ch.params.b.column(0).to_owned();
        let dtb = b_vec.mapv(|z| z * dt);
        let mut g_q = linalg::matmul(&g_abar, &linalg::adjoint(np));
        linalg::add_outer(&mut g_q, &g_bbar, &dtb);
        let q_h = linalg::adjoint(q);
        let g_np = linalg::matmul(&q_h, &g_abar);
        let g_m = linalg::matmul(&linalg::matmul(&q_h, &g_q), &q_h).mapv(|z| -z);
        let a = ch.params.dense_a();
        let g_dtb = linalg::matvec(&q_h, &g_bbar);
        let mut g_dt = T::zero();
        for i in 0..m {
            for j in 0..m {
                let diff = g_np[[i, j]] - g_m[[i, j]];
                g_dt = g_dt + (diff.conj() * a[[i, j]]).re * half;
            }
            g_dt = g_dt + (g_dtb[i].conj() * b_vec[i]).re;
        }
        for i in 0..m {
            let g_lambda = (g_np[[i, i]] - g_m[[i, i]]) * (dt * half);
            g_lre[[ci, i]] = -g_lambda.re * sigmoid(raw2[[ci, i]]);
            g_lim[[ci, i]] = g_lambda.im;
            g_cre[[ci, i]] = g_c[i].re;
            g_cim[[ci, i]] = g_c[i].im;
        }
        g_logdt[ci] = g_dt * dt;
    }
    vec![
        needs[0].then(|| gu.into_dyn()),
        needs[1].then(|| g_lre.into_dyn()),
        needs[2].then(|| g_lim.into_dyn()),
        needs[3].then(|| g_cre.into_dyn()),
        needs[4].then(|| g_cim.into_dyn()),
        needs[5].then(|| g_d.into_dyn()),
        needs[6].then(|| g_logdt.into_dyn()),
    ]
}

struct MimoCtx<T: Scalar> {
    p: SsmParams<T>,
    dt: Array1<T>,
    a_bar: Array1<Cx<T>>,
    b_bar: Array2<Cx<T>>,
    /// (batch, T, N/2): states after each step.
    states: Array3<Cx<T>>,
    s0: Array3<Cx<T>>,
}

fn mimo_backward<T: Scalar>(
    ctx: &MimoCtx<T>,
    raw: &Arc<ArrayD<T>>,
    g: &ArrayD<T>,
    u: &ArrayD<T>,
    needs: &[bool],
) -> Vec<Option<ArrayD<T>>> {
    let g3 = g.view().into_dimensionality::<Ix3>().expect("rank 3");
    let u3 = u.view().into_dimensionality::<Ix3>().expect("rank 3");
    let (bsz, len, h) = g3.dim();
    let m = ctx.a_bar.len();
    let two: T = cast(2.0);
    let p = &ctx.p;
    let a_conj = ctx.a_bar.mapv(|z| z.conj());
    let mut gu = Array3::<T>::zeros((bsz, len, h));
    let mut g_c = Array2::<Cx<T>>::zeros((h, m));
    let mut g_d = Array1::<T>::zeros(h);
    let mut g_a = Array1::<Cx<T>>::zeros(m);
    let mut g_bbar = Array2::<Cx<T>>::zeros((m, h));
    for b in 0..bsz {
        let mut mu = Array1::<Cx<T>>::zeros(m);
        for k in (0..len).rev() {
            // mu_k = G_{s_k} + conj(a) mu_{k+1}
            mu.zip_mut_with(&a_conj, |x, &ac| *x = *x * ac);
            for hi in 0..h {
                let w = two * g3[[b, k, hi]];
                if w == T::zero() {
                    continue;
                }
                for n in 0..m {
                    mu[n] = mu[n] + p.c[[hi, n]].conj() * w;
                    g_c[[hi, n]] = g_c[[hi, n]] + ctx.states[[b, k, n]].conj() * w;
                }
            }
            for n in 0..m {
                let prev = if k == 0 { ctx.s0[[b, 0, n]] } else { ctx.states[[b, k - 1, n]] };
                g_a[n] = g_a[n] + mu[n] * prev.conj();
            }
            for hi in 0..h {
                let uk = u3[[b, k, hi]];
                let gk = g3[[b, k, hi]];
                g_d[hi] = g_d[hi] + gk * uk;
                let mut acc = T::zero();
                for n in 0..m {
                    g_bbar[[n, hi]] = g_bbar[[n, hi]] + mu[n] * uk;
                    acc = acc + (ctx.b_bar[[n, hi]].conj() * mu[n]).re;
                }
                gu[[b, k, hi]] = acc + p.d[hi] * gk;
            }
        }
    }
    // Zero-order hold: a = exp(dt l), B_bar = f B with f = (a - 1)/l.
    let raw1 = raw.view().into_dimensionality::<Ix1>().expect("rank 1");
    let mut g_lre = Array1::<T>::zeros(m);
    let mut g_lim = Array1::<T>::zeros(m);
    let mut g_logdt = Array1::<T>::zeros(m);
    let mut g_bre = Array2::<T>::zeros((m, h));
    let mut g_bim = Array2::<T>::zeros((m, h));
    for n in 0..m {
        let l = p.lambda[n];
        let dt = ctx.dt[n];
        let a = ctx.a_bar[n];
        let x = l * dt;
        let f = expm1_over(x) * dt;
        let mut g_f = Cx::zero();
        for hi in 0..h {
            let gb = f.conj() * g_bbar[[n, hi]];
            g_bre[[n, hi]] = gb.re;
            g_bim[[n, hi]] = gb.im;
            g_f = g_f + p.b[[n, hi]].conj() * g_bbar[[n, hi]];
        }
        let df_dl = if x.norm() < cast(1e-4) {
            let dt2 = dt * dt;
            Cx::new(dt2 * cast(0.5), T::zero()) + x * (dt2 / cast(3.0)) + x * x * (dt2 / cast(8.0))
        } else {
            (a * dt - f) / l
        };
        let g_l = (a * dt).conj() * g_a[n] + df_dl.conj() * g_f;
        g_lre[n] = -g_l.re * sigmoid(raw1[n]);
        g_lim[n] = g_l.im;
        let g_dt = (g_a[n].conj() * l * a).re + (g_f.conj() * a).re;
        g_logdt[n] = g_dt * dt;
    }
    vec![
        needs[0].then(|| gu.into_dyn()),
        needs[1].then(|| g_lre.into_dyn()),
        needs[2].then(|| g_lim.into_dyn()),
        needs[3].then(|| g_c.mapv(|z| z.re).into_dyn()),
        needs[4].then(|| g_c.mapv(|z| z.im).into_dyn()),
        needs[5].then(|| g_d.into_dyn()),
        needs[6].then(|| g_logdt.into_dyn()),
        needs[7].then(|| g_bre.into_dyn()),
        needs[8].then(|| g_bim.into_dyn()),
    ]
}
