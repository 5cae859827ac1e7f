//! Small dense complex linear algebra used by the DPLR path.

use ndarray::{Array1, Array2};
use num_complex::Complex;
use num_traits::{One, Zero};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub type Cx<T> = Complex<T>;

pub fn identity<T: Scalar>(n: usize) -> Array2<Cx<T>> {
    Array2::from_shape_fn((n, n), |(i, j)| if i == j { Cx::one() } else { Cx::zero() })
}

/// Conjugate transpose.
pub fn adjoint<T: Scalar>(a: &Array2<Cx<T>>) -> Array2<Cx<T>> {
    a.t().mapv(|z| z.conj())
}

pub fn matmul<T: Scalar>(a: &Array2<Cx<T>>, b: &Array2<Cx<T>>) -> Array2<Cx<T>> {
    let (n, k) = a.dim();
    let m = b.ncols();
    debug_assert_eq!(k, b.nrows());
    let mut out = Array2::zeros((n, m));
    for i in 0..n {
        for l in 0..k {
            let a_il = a[[i, l]];
            if a_il.is_zero() {
                continue;
            }
            for j in 0..m {
                out[[i, j]] = out[[i, j]] + a_il * b[[l, j]];
            }
        }
    }
    out
}

pub fn matvec<T: Scalar>(a: &Array2<Cx<T>>, x: &Array1<Cx<T>>) -> Array1<Cx<T>> {
    let (n, k) = a.dim();
    debug_assert_eq!(k, x.len());
    Array1::from_shape_fn(n, |i| {
        let mut acc = Cx::zero();
        for j in 0..k {
            acc = acc + a[[i, j]] * x[j];
        }
        acc
    })
}

/// `A^H x`.
pub fn adjoint_matvec<T: Scalar>(a: &Array2<Cx<T>>, x: &Array1<Cx<T>>) -> Array1<Cx<T>> {
    let (n, k) = a.dim();
    debug_assert_eq!(n, x.len());
    Array1::from_shape_fn(k, |j| {
        let mut acc = Cx::zero();
        for i in 0..n {
            acc = acc + a[[i, j]].conj() * x[i];
        }
        acc
    })
}

/// Accumulates the outer product `x y^H` into `acc`.
pub fn add_outer<T: Scalar>(acc: &mut Array2<Cx<T>>, x: &Array1<Cx<T>>, y: &Array1<Cx<T>>) {
    let (n, m) = acc.dim();
    for i in 0..n {
        let xi = x[i];
        for j in 0..m {
            acc[[i, j]] = acc[[i, j]] + xi * y[j].conj();
        }
    }
}

/// Gauss-Jordan inverse with partial pivoting.
pub fn inverse<T: Scalar>(a: &Array2<Cx<T>>, context: &'static str) -> Result<Array2<Cx<T>>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(crate::error::shape_err(context, a.shape(), &[n, n]));
    }
    let mut m = a.clone();
    let mut inv = identity::<T>(n);
    let scale = a.iter().map(|z| z.norm()).fold(T::zero(), T::max);
    let tiny = scale * T::epsilon() * T::from_usize(n.max(1)).unwrap();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[[i, col]].norm().partial_cmp(&m[[j, col]].norm()).unwrap())
            .unwrap();
        if m[[pivot, col]].norm() <= tiny || !m[[pivot, col]].norm().is_finite() {
            return Err(Error::Singular(context));
        }
        if pivot != col {
            for j in 0..n {
                m.swap([pivot, j], [col, j]);
                inv.swap([pivot, j], [col, j]);
            }
        }
        let p = m[[col, col]].inv();
        for j in 0..n {
            m[[col, j]] = m[[col, j]] * p;
            inv[[col, j]] = inv[[col, j]] * p;
        }
        for i in 0..n {
            if i == col {
                continue;
            }
            let f = m[[i, col]];
            if f.is_zero() {
                continue;
            }
            for j in 0..n {
                m[[i, j]] = m[[i, j]] - f * m[[col, j]];
                inv[[i, j]] = inv[[i, j]] - f * inv[[col, j]];
            }
        }
    }
    Ok(inv)
}
