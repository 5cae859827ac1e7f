//! Reverse-mode automatic differentiation over a fixed set of tensor ops.
//!
//! A [`Tape`] records every op applied to [`Var`]s. Values are stored as
//! shared `ndarray` buffers; each recorded node carries a backward closure
//! mapping the output gradient to gradients of its parents. Parameters enter
//! the tape through [`Tape::param`], which deduplicates repeated uses so that
//! gradients accumulate per [`ParamId`].

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use ndarray::{Array2, ArrayD, CowArray, Axis, Ix2, IxDyn, Slice, Zip};

use super::conv::{col2im, im2col, ConvGeom};
use super::params::{ParamId, ParamStore};
use crate::error::{shape_err, Error, Result};
use crate::scalar::{cast, Scalar};

/// Backward closure: `(grad_out, parent_values, output_value, needs_grad) -> parent grads`.
pub type BackwardFn<T> =
    Box<dyn Fn(&ArrayD<T>, &[&ArrayD<T>], &ArrayD<T>, &[bool]) -> Vec<Option<ArrayD<T>>>>;

struct Node<T: Scalar> {
    value: Arc<ArrayD<T>>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
    param: Option<ParamId>,
    watched: bool,
}

/// Recording of a computation; create one per forward pass.
pub struct Tape<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
    params: RefCell<HashMap<ParamId, usize>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// A value recorded on a tape.
#[derive(Clone, Copy)]
pub struct Var<'t, T: Scalar> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Scalar> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug, Clone, Default)]
pub struct Gradients<T: Scalar> {
    params: HashMap<ParamId, ArrayD<T>>,
    watched: HashMap<usize, ArrayD<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn param(&self, id: ParamId) -> Option<&ArrayD<T>> {
        self.params.get(&id)
    }

    pub fn var(&self, v: Var<'_, T>) -> Option<&ArrayD<T>> {
        self.watched.get(&v.id)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &ArrayD<T>)> {
        self.params.iter().map(|(k, v)| (*k, v))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut ArrayD<T>)> {
        self.params.iter_mut().map(|(k, v)| (*k, v))
    }

    pub fn insert_param(&mut self, id: ParamId, g: ArrayD<T>) {
        self.params.insert(id, g);
    }

    /// Fails with the name of the first (lowest id) parameter holding a non-finite gradient.
    pub fn ensure_finite(&self, store: &ParamStore<T>) -> Result<()> {
        let mut ids: Vec<_> = self.params.keys().copied().collect();
        ids.sort();
        for id in ids {
            if self.params[&id].iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient(store.name(id).to_string()));
            }
        }
        Ok(())
    }

    /// Global L2 norm over all parameter gradients.
    pub fn global_norm(&self) -> f64 {
        self.params
            .values()
            .flat_map(|g| g.iter())
            .map(|v| {
                let x = v.to_f64().unwrap_or(f64::NAN);
                x * x
            })
            .sum::<f64>()
            .sqrt()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            params: RefCell::new(HashMap::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, node: Node<T>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// A leaf that never receives gradients.
    pub fn constant(&self, value: ArrayD<T>) -> Var<'_, T> {
        self.constant_shared(Arc::new(value))
    }

    pub fn constant_shared(&self, value: Arc<ArrayD<T>>) -> Var<'_, T> {
        self.push(Node {
            value,
            parents: Vec::new(),
            backward: None,
            requires_grad: false,
            param: None,
            watched: false,
        })
    }

    pub fn scalar(&self, x: T) -> Var<'_, T> {
        self.constant(ArrayD::from_elem(IxDyn(&[]), x))
    }

    /// A leaf whose gradient is reported by [`Gradients::var`].
    pub fn variable(&self, value: ArrayD<T>) -> Var<'_, T> {
        self.push(Node {
            value: Arc::new(value),
            parents: Vec::new(),
            backward: None,
            requires_grad: true,
            param: None,
            watched: true,
        })
    }

    /// Places a stored parameter on the tape (once per tape; later calls reuse the node).
    pub fn param(&self, store: &ParamStore<T>, id: ParamId) -> Var<'_, T> {
        if let Some(&node) = self.params.borrow().get(&id) {
            return Var {
                tape: self,
                id: node,
            };
        }
        let p = store.get(id);
        let v = self.push(Node {
            value: store.shared(id),
            parents: Vec::new(),
            backward: None,
            requires_grad: p.trainable,
            param: Some(id),
            watched: false,
        });
        self.params.borrow_mut().insert(id, v.id);
        v
    }

    /// Records a custom differentiable op.
    pub fn custom<'t>(
        &'t self,
        parents: &[Var<'t, T>],
        value: ArrayD<T>,
        backward: BackwardFn<T>,
    ) -> Var<'t, T> {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|p| nodes[p.id].requires_grad)
        };
        self.push(Node {
            value: Arc::new(standard(value)),
            parents: parents.iter().map(|p| p.id).collect(),
            backward: if requires_grad { Some(backward) } else { None },
            requires_grad,
            param: None,
            watched: false,
        })
    }

    /// Concatenates along `axis`; all other dims must agree.
    pub fn concat<'t>(&'t self, vars: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
        if vars.is_empty() {
            return Err(Error::Invalid("concat of zero tensors".into()));
        }
        let values: Vec<_> = vars.iter().map(|v| v.value()).collect();
        let first = values[0].shape().to_vec();
        if axis >= first.len() {
            return Err(shape_err("concat", &first, &[axis]));
        }
        for v in &values[1..] {
            let s = v.shape();
            let ok = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(shape_err("concat", s, &first));
            }
        }
        let views: Vec<_> = values.iter().map(|v| v.view()).collect();
        let out = ndarray::concatenate(Axis(axis), &views)
            .map_err(|_| shape_err("concat", &first, &first))?;
        let sizes: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
        Ok(self.custom(
            vars,
            out,
            Box::new(move |g, _, _, needs| {
                let mut start = 0;
                sizes
                    .iter()
                    .zip(needs)
                    .map(|(&n, &need)| {
                        let r = need.then(|| {
                            g.slice_axis(Axis(axis), Slice::from(start..start + n))
                                .to_owned()
                        });
                        start += n;
                        r
                    })
                    .collect()
            }),
        ))
    }

    /// Runs reverse-mode differentiation from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(shape_err("backward", root.value.shape(), &[]));
        }
        let mut grads: Vec<Option<ArrayD<T>>> = (0..=loss.id).map(|_| None).collect();
        grads[loss.id] = Some(ArrayD::from_elem(root.value.raw_dim(), T::one()));
        let mut out = Gradients::default();
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            if let Some(pid) = node.param {
                match out.params.get_mut(&pid) {
                    Some(acc) => *acc += &g,
                    None => {
                        out.params.insert(pid, g);
                    }
                }
                continue;
            }
            if node.watched {
                out.watched.insert(id, g);
                continue;
            }
            let Some(bw) = &node.backward else { continue };
            let parents: Vec<&ArrayD<T>> = node.parents.iter().map(|&p| &*nodes[p].value).collect();
            let needs: Vec<bool> = node.parents.iter().map(|&p| nodes[p].requires_grad).collect();
            let pgrads = bw(&g, &parents, &node.value, &needs);
            for ((&p, pg), need) in node.parents.iter().zip(pgrads).zip(&needs) {
                let (Some(pg), true) = (pg, *need) else { continue };
                debug_assert_eq!(pg.shape(), nodes[p].value.shape(), "gradient shape");
                match &mut grads[p] {
                    Some(acc) => *acc += &pg,
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        Ok(out)
    }
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
        let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
        out[i] = if da == db || db == 1 {
            da
        } else if da == 1 {
            db
        } else {
            return None;
        };
    }
    Some(out)
}

/// Sums a broadcast gradient back down to `shape`.
pub fn reduce_to<T: Scalar>(g: ArrayD<T>, shape: &[usize]) -> ArrayD<T> {
    if g.shape() == shape {
        return g;
    }
    // `shape` minus leading ones must be a suffix of the gradient's shape (a bias, say)
    let core = &shape[shape.iter().take_while(|&&d| d == 1).count()..];
    if core.len() <= g.ndim() && g.shape()[g.ndim() - core.len()..] == *core {
        let inner: usize = core.iter().product();
        if inner > 0 {
            let m = as_matrix(&g, g.len() / inner, inner);
            return m.sum_axis(Axis(0)).into_dyn().reshaped(shape);
        }
    }
    let mut g = g;
    while g.ndim() > shape.len() {
        g = g.sum_axis(Axis(0));
    }
    for (i, &s) in shape.iter().enumerate() {
        if s == 1 && g.shape()[i] != 1 {
            g = g.sum_axis(Axis(i)).insert_axis(Axis(i));
        }
    }
    g
}

fn rows_map<T: Scalar>(x: &[T], y: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks_exact(y.len()) {
        out.extend(row.iter().zip(y).map(|(&p, &q)| f(p, q)));
    }
    out
}

/// `f(a, b)` elementwise with numpy broadcasting; contiguous operands of equal
/// shape, or one broadcast over leading axes of the other, avoid the generic path.
fn broadcast_map<T: Scalar>(a: &ArrayD<T>, b: &ArrayD<T>, f: impl Fn(T, T) -> T) -> ArrayD<T> {
    if let (Some(x), Some(y)) = (a.as_slice(), b.as_slice()) {
        let is_suffix = |big: &ArrayD<T>, small: &ArrayD<T>| {
            small.ndim() <= big.ndim() && big.shape()[big.ndim() - small.ndim()..] == *small.shape() && !small.is_empty()
        };
        if is_suffix(a, b) {
            return ArrayD::from_shape_vec(a.raw_dim(), rows_map(x, y, f)).expect("same shape");
        }
        if is_suffix(b, a) {
            return ArrayD::from_shape_vec(b.raw_dim(), rows_map(y, x, |q, p| f(p, q))).expect("same shape");
        }
    }
    let shape = broadcast_shape(a.shape(), b.shape()).expect("checked by caller");
    let mut out = ArrayD::zeros(IxDyn(&shape));
    Zip::from(&mut out)
        .and_broadcast(a)
        .and_broadcast(b)
        .for_each(|o, &p, &q| *o = f(p, q));
    out
}

fn as_matrix<T: Scalar>(a: &ArrayD<T>, rows: usize, cols: usize) -> CowArray<'_, T, Ix2> {
    if a.is_standard_layout() {
        a.view().into_shape_with_order((rows, cols)).expect("matrix shape").into()
    } else {
        a.as_standard_layout()
            .into_owned()
            .into_shape_with_order((rows, cols))
            .expect("matrix shape")
            .into()
    }
}

/// Row-major reshape of an owned array, copying first if its layout is not standard.
pub trait Reshaped<T> {
    fn reshaped(self, shape: &[usize]) -> ArrayD<T>;
}

impl<T: Clone, D: ndarray::Dimension> Reshaped<T> for ndarray::Array<T, D> {
    fn reshaped(self, shape: &[usize]) -> ArrayD<T> {
        let a = if self.is_standard_layout() { self } else { self.as_standard_layout().into_owned() };
        a.into_shape_with_order(IxDyn(shape)).expect("reshape: element count")
    }
}

fn standard<T: Scalar>(a: ArrayD<T>) -> ArrayD<T> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Arc<ArrayD<T>> {
        Arc::clone(&self.tape.nodes.borrow()[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        *self.value().iter().next().expect("non-empty tensor")
    }

    fn unary(self, f: impl Fn(T) -> T, df: fn(T, T) -> T) -> Self {
        let out = self.value().mapv(f);
        self.tape.custom(
            &[self],
            out,
            Box::new(move |g, p, y, _| {
                let mut gx = g.clone();
                Zip::from(&mut gx).and(p[0]).and(y).for_each(|gx, &x, &y| *gx = *gx * df(x, y));
                vec![Some(gx)]
            }),
        )
    }

    pub fn exp(self) -> Self {
        self.unary(|x| x.exp(), |_, y| y)
    }

    pub fn log(self) -> Self {
        self.unary(|x| x.ln(), |x, _| T::one() / x)
    }

    pub fn sigmoid(self) -> Self {
        self.unary(sigmoid, |_, y| y * (T::one() - y))
    }

    pub fn tanh(self) -> Self {
        self.unary(|x| x.tanh(), |_, y| T::one() - y * y)
    }

    pub fn silu(self) -> Self {
        self.unary(
            |x| x * sigmoid(x),
            |x, _| {
                let s = sigmoid(x);
                s * (T::one() + x * (T::one() - s))
            },
        )
    }

    pub fn softplus(self) -> Self {
        self.unary(softplus, |x, _| sigmoid(x))
    }

    pub fn square(self) -> Self {
        self.unary(|x| x * x, |x, _| x + x)
    }

    pub fn neg(self) -> Self {
        self.scale(-1.0)
    }

    pub fn scale(self, c: f64) -> Self {
        let c: T = cast(c);
        let out = self.value().mapv(|x| x * c);
        self.tape.custom(&[self], out, Box::new(move |g, _, _, _| vec![Some(g.mapv(|v| v * c))]))
    }

    pub fn add_scalar(self, c: f64) -> Self {
        let c: T = cast(c);
        let out = self.value().mapv(|x| x + c);
        self.tape.custom(&[self], out, Box::new(|g, _, _, _| vec![Some(g.clone())]))
    }

    fn binary_shape(self, other: Self, op: &'static str) -> Result<(Vec<usize>, Vec<usize>)> {
        let (a, b) = (self.shape(), other.shape());
        broadcast_shape(&a, &b).ok_or_else(|| shape_err(op, &b, &a))?;
        Ok((a, b))
    }

    /// Broadcasting addition.
    pub fn add(self, other: Self) -> Result<Self> {
        let (sa, sb) = self.binary_shape(other, "add")?;
        let out = broadcast_map(&self.value(), &other.value(), |p, q| p + q);
        Ok(self.tape.custom(
            &[self, other],
            out,
            Box::new(move |g, _, _, needs| {
                vec![
                    needs[0].then(|| reduce_to(g.clone(), &sa)),
                    needs[1].then(|| reduce_to(g.clone(), &sb)),
                ]
            }),
        ))
    }

    pub fn sub(self, other: Self) -> Result<Self> {
        self.add(other.neg())
    }

    /// Broadcasting elementwise product.
    pub fn mul(self, other: Self) -> Result<Self> {
        let (sa, sb) = self.binary_shape(other, "mul")?;
        let out = broadcast_map(&self.value(), &other.value(), |p, q| p * q);
        Ok(self.tape.custom(
            &[self, other],
            out,
            Box::new(move |g, p, _, needs| {
                vec![
                    needs[0].then(|| reduce_to(broadcast_map(g, p[1], |u, v| u * v), &sa)),
                    needs[1].then(|| reduce_to(broadcast_map(g, p[0], |u, v| u * v), &sb)),
                ]
            }),
        ))
    }

    /// `(..., k) x (k, n) -> (..., n)`.
    pub fn matmul(self, w: Self) -> Result<Self> {
        let xs = self.shape();
        let ws = w.shape();
        if ws.len() != 2 || xs.is_empty() || *xs.last().unwrap() != ws[0] {
            return Err(shape_err("matmul", &xs, &ws));
        }
        let k = ws[0];
        let n = ws[1];
        let rows: usize = xs[..xs.len() - 1].iter().product();
        let mut out_shape = xs.clone();
        *out_shape.last_mut().unwrap() = n;
        let xv = self.value();
        let wv = w.value();
        let out = as_matrix(&xv, rows, k).dot(&as_matrix(&wv, k, n));
        let out = out.reshaped(&out_shape);
        Ok(self.tape.custom(
            &[self, w],
            out,
            Box::new(move |g, p, _, needs| {
                let g2 = as_matrix(g, rows, n);
                let gx = needs[0].then(|| {
                    g2.dot(&as_matrix(p[1], k, n).t())
                        .reshaped(&xs)
                });
                let gw = needs[1].then(|| as_matrix(p[0], rows, k).t().dot(&g2).into_dyn());
                vec![gx, gw]
            }),
        ))
    }

    pub fn sum(self) -> Self {
        let shape = self.shape();
        let out = ArrayD::from_elem(IxDyn(&[]), self.value().sum());
        self.tape.custom(
            &[self],
            out,
            Box::new(move |g, _, _, _| {
                let gv = *g.iter().next().unwrap();
                vec![Some(ArrayD::from_elem(IxDyn(&shape), gv))]
            }),
        )
    }

    pub fn mean(self) -> Self {
        let n = self.value().len().max(1) as f64;
        self.sum().scale(1.0 / n)
    }

    /// Sums over `axis`, removing it.
    pub fn sum_axis(self, axis: usize) -> Result<Self> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(shape_err("sum_axis", &shape, &[axis]));
        }
        let out = self.value().sum_axis(Axis(axis));
        Ok(self.tape.custom(
            &[self],
            out,
            Box::new(move |g, _, _, _| {
                let e = g.clone().insert_axis(Axis(axis));
                vec![Some(e.broadcast(IxDyn(&shape)).expect("broadcast").to_owned())]
            }),
        ))
    }

    /// Softmax over the last axis.
    pub fn softmax(self) -> Self {
        let v = self.value();
        let last = v.ndim() - 1;
        let mut out = (*v).clone();
        for mut row in out.lanes_mut(Axis(last)) {
            let m = row.fold(T::neg_infinity(), |a, &b| a.max(b));
            row.mapv_inplace(|x| (x - m).exp());
            let s = row.sum();
            row.mapv_inplace(|x| x / s);
        }
        self.tape.custom(
            &[self],
            out,
            Box::new(move |g, _, y, _| {
                let mut gx = g * y;
                Zip::from(gx.lanes_mut(Axis(last)))
                    .and(y.lanes(Axis(last)))
                    .for_each(|mut gr, yr| {
                        let dot = gr.sum();
                        Zip::from(&mut gr).and(&yr).for_each(|gi, &yi| *gi = *gi - yi * dot);
                    });
                vec![Some(gx)]
            }),
        )
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(self) -> Self {
        let v = self.value();
        let last = v.ndim() - 1;
        let mut out = (*v).clone();
        for mut row in out.lanes_mut(Axis(last)) {
            let m = row.fold(T::neg_infinity(), |a, &b| a.max(b));
            let lse = row.fold(T::zero(), |a, &x| a + (x - m).exp()).ln() + m;
            row.mapv_inplace(|x| x - lse);
        }
        self.tape.custom(
            &[self],
            out,
            Box::new(move |g, _, y, _| {
                let mut gx = g.clone();
                Zip::from(gx.lanes_mut(Axis(last)))
                    .and(y.lanes(Axis(last)))
                    .for_each(|mut gr, yr| {
                        let total = gr.sum();
                        Zip::from(&mut gr)
                            .and(&yr)
                            .for_each(|gi, &yi| *gi = *gi - yi.exp() * total);
                    });
                vec![Some(gx)]
            }),
        )
    }

    /// Normalizes the last axis to zero mean and unit variance (no affine).
    pub fn layer_norm(self, eps: f64) -> Self {
        let v = self.value();
        let last = v.ndim() - 1;
        let n = v.shape()[last];
        let mut out = (*v).clone();
        for mut row in out.lanes_mut(Axis(last)) {
            let (mean, inv_std) = row_stats(row.view(), eps);
            row.mapv_inplace(|x| (x - mean) * inv_std);
        }
        let nf: T = cast(n as f64);
        self.tape.custom(
            &[self],
            out,
            Box::new(move |g, p, y, _| {
                let mut gx = g.clone();
                Zip::from(gx.lanes_mut(Axis(last)))
                    .and(y.lanes(Axis(last)))
                    .and(p[0].lanes(Axis(last)))
                    .for_each(|mut gr, yr, xr| {
                        let (_, inv_std) = row_stats(xr, eps);
                        let mg = gr.sum() / nf;
                        let mgy = gr.iter().zip(yr.iter()).fold(T::zero(), |a, (&gi, &yi)| a + gi * yi) / nf;
                        Zip::from(&mut gr)
                            .and(&yr)
                            .for_each(|gi, &yi| *gi = (*gi - mg - yi * mgy) * inv_std);
                    });
                vec![Some(gx)]
            }),
        )
    }

    /// Gated linear unit over the last axis: `a * sigmoid(b)` for `[a | b]`.
    pub fn glu(self) -> Result<Self> {
        let shape = self.shape();
        let last = shape.len() - 1;
        let n = shape[last];
        if n % 2 != 0 {
            return Err(shape_err("glu", &shape, &[n + 1]));
        }
        let h = n / 2;
        let a = self.slice_axis(last, 0, h)?;
        let b = self.slice_axis(last, h, n)?;
        a.mul(b.sigmoid())
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        let old = self.shape();
        if old.iter().product::<usize>() != shape.iter().product::<usize>() {
            return Err(shape_err("reshape", &old, shape));
        }
        let v = self.value();
        let out = standard((*v).clone())
            .reshaped(shape);
        Ok(self.tape.custom(
            &[self],
            out,
            Box::new(move |g, _, _, _| {
                vec![Some(
                    standard(g.clone())
                        .reshaped(&old),
                )]
            }),
        ))
    }

    /// Contiguous range `[start, end)` along `axis`.
    pub fn slice_axis(self, axis: usize, start: usize, end: usize) -> Result<Self> {
        let shape = self.shape();
        if axis >= shape.len() || start > end || end > shape[axis] {
            return Err(shape_err("slice_axis", &shape, &[axis, start, end]));
        }
        let out = self
            .value()
            .slice_axis(Axis(axis), Slice::from(start..end))
            .to_owned();
        Ok(self.tape.custom(
            &[self],
            out,
            Box::new(move |g, _, _, _| {
                let mut gx = ArrayD::zeros(IxDyn(&shape));
                gx.slice_axis_mut(Axis(axis), Slice::from(start..end)).assign(g);
                vec![Some(gx)]
            }),
        ))
    }

    /// Gathers entries `indices` along `axis`.
    pub fn select(self, axis: usize, indices: &[usize]) -> Result<Self> {
        let shape = self.shape();
        if axis >= shape.len() || indices.iter().any(|&i| i >= shape[axis]) {
            return Err(shape_err("select", &shape, &[axis]));
        }
        let out = self.value().select(Axis(axis), indices);
        let idx = indices.to_vec();
        Ok(self.tape.custom(
            &[self],
            out,
            Box::new(move |g, _, _, _| {
                let mut gx = ArrayD::zeros(IxDyn(&shape));
                for (j, &i) in idx.iter().enumerate() {
                    let mut dst = gx.index_axis_mut(Axis(axis), i);
                    dst += &g.index_axis(Axis(axis), j);
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Identity in the forward pass; blocks gradient flow.
    pub fn stop_grad(self) -> Self {
        self.tape.constant_shared(self.value())
    }

    /// Strided 2-D convolution, NHWC input `(B,H,W,Cin)` with weight `(k,k,Cin,Cout)`.
    pub fn conv2d(self, w: Self, stride: usize, pad: usize) -> Result<Self> {
        let xs = self.shape();
        let ws = w.shape();
        if xs.len() != 4 || ws.len() != 4 || ws[0] != ws[1] || ws[2] != xs[3] {
            return Err(shape_err("conv2d", &ws, &[4, 4, xs.get(3).copied().unwrap_or(0), 0]));
        }
        let geom = ConvGeom {
            batch: xs[0],
            in_h: xs[1],
            in_w: xs[2],
            channels: xs[3],
            kernel: ws[0],
            stride,
            pad,
        };
        if !geom.valid() {
            return Err(shape_err("conv2d", &xs, &[xs[0], 2 * geom.out_h(), 2 * geom.out_w(), xs[3]]));
        }
        let cout = ws[3];
        let (rows, cw) = (geom.col_rows(), geom.col_width());
        let xv = standard((*self.value()).clone());
        let cols = Array2::from_shape_vec((rows, cw), im2col(xv.as_slice().unwrap(), &geom)).unwrap();
        let wv = w.value();
        let out = cols
            .dot(&as_matrix(&wv, cw, cout))
            .reshaped(&[geom.batch, geom.out_h(), geom.out_w(), cout]);
        Ok(self.tape.custom(
            &[self, w],
            out,
            Box::new(move |g, p, _, needs| {
                let g2 = as_matrix(g, rows, cout);
                let gx = needs[0].then(|| {
                    let dcols = g2.dot(&as_matrix(p[1], cw, cout).t());
                    let dcols = standard(dcols.into_dyn());
                    ArrayD::from_shape_vec(
                        IxDyn(&[geom.batch, geom.in_h, geom.in_w, geom.channels]),
                        col2im(dcols.as_slice().unwrap(), &geom),
                    )
                    .unwrap()
                });
                let gw = needs[1].then(|| {
                    let xv = standard(p[0].clone());
                    let cols = Array2::from_shape_vec((rows, cw), im2col(xv.as_slice().unwrap(), &geom)).unwrap();
                    cols.t()
                        .dot(&g2)
                        .reshaped(&[geom.kernel, geom.kernel, geom.channels, cout])
                });
                vec![gx, gw]
            }),
        ))
    }

    /// Transposed convolution (adjoint of [`Var::conv2d`]), input `(B,H,W,Cin)`,
    /// weight `(k,k,Cout,Cin)`, output `(B, s(H-1)+k-2p, ..., Cout)`.
    pub fn conv_transpose2d(self, w: Self, stride: usize, pad: usize) -> Result<Self> {
        let xs = self.shape();
        let ws = w.shape();
        if xs.len() != 4 || ws.len() != 4 || ws[0] != ws[1] || ws[3] != xs[3] {
            return Err(shape_err("conv_transpose2d", &ws, &[4, 4, 0, xs.get(3).copied().unwrap_or(0)]));
        }
        let k = ws[0];
        let cout = ws[2];
        let cin = xs[3];
        let out_h = stride * (xs[1] - 1) + k - 2 * pad;
        let out_w = stride * (xs[2] - 1) + k - 2 * pad;
        let geom = ConvGeom {
            batch: xs[0],
            in_h: out_h,
            in_w: out_w,
            channels: cout,
            kernel: k,
            stride,
            pad,
        };
        if !geom.valid() || geom.out_h() != xs[1] || geom.out_w() != xs[2] {
            return Err(shape_err("conv_transpose2d", &xs, &[xs[0], geom.out_h(), geom.out_w(), cin]));
        }
        let (rows, cw) = (geom.col_rows(), geom.col_width());
        let xv = standard((*self.value()).clone());
        let wv = w.value();
        let cols = as_matrix(&xv, rows, cin).dot(&as_matrix(&wv, cw, cin).t());
        let cols = standard(cols.into_dyn());
        let out = ArrayD::from_shape_vec(
            IxDyn(&[geom.batch, out_h, out_w, cout]),
            col2im(cols.as_slice().unwrap(), &geom),
        )
        .unwrap();
        Ok(self.tape.custom(
            &[self, w],
            out,
            Box::new(move |g, p, _, needs| {
                let gs = standard(g.clone());
                let gcols = Array2::from_shape_vec((rows, cw), im2col(gs.as_slice().unwrap(), &geom)).unwrap();
                let gx = needs[0].then(|| {
                    gcols
                        .dot(&as_matrix(p[1], cw, cin))
                        .reshaped(&xs)
                });
                let gw = needs[1].then(|| {
                    let xv = standard(p[0].clone());
                    gcols
                        .t()
                        .dot(&as_matrix(&xv, rows, cin))
                        .reshaped(&[k, k, cout, cin])
                });
                vec![gx, gw]
            }),
        ))
    }
}

fn row_stats<T: Scalar>(row: ndarray::ArrayView1<'_, T>, eps: f64) -> (T, T) {
    let n = row.len();
    if n >= 1024 {
        let mean = row.iter().map(|v| v.to_f64().unwrap()).sum::<f64>() / n as f64;
        let var = row
            .iter()
            .map(|v| {
                let d = v.to_f64().unwrap() - mean;
                d * d
            })
            .sum::<f64>()
            / n as f64;
        (cast(mean), cast(1.0 / (var + eps).sqrt()))
    } else {
        let nf: T = cast(n as f64);
        let mean = row.sum() / nf;
        let var = row.iter().fold(T::zero(), |a, &x| a + (x - mean) * (x - mean)) / nf;
        (mean, T::one() / (var + cast(eps)).sqrt())
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub fn softplus<T: Scalar>(x: T) -> T {
    if x > cast(20.0) {
        x
    } else {
        x.exp().ln_1p()
    }
}
