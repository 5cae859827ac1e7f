//! Bilinear and zero-order-hold discretization.

use ndarray::{Array1, Array2};
use num_complex::Complex;
use num_traits::{One, Zero};

use super::linalg::{self, Cx};
use super::{DiscreteSsm, Flavor, SsmParams, StateMatrix};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dispatches on the flavor: bilinear for DPLR, zero-order hold for diagonal.
pub fn discretize<T: Scalar>(params: &SsmParams<T>) -> Result<DiscreteSsm<T>> {
    params.validate()?;
    match params.flavor {
        Flavor::Dplr => {
            let p = params.p.as_ref().expect("validated");
            let parts = bilinear_dplr(&params.lambda, p, &params.b, params.dt(0))?;
            Ok(DiscreteSsm {
                a_bar: StateMatrix::Dense(parts.a_bar),
                b_bar: parts.b_bar,
                c: params.c.clone(),
                d: params.d.clone(),
                conjugate: params.conjugate,
            })
        }
        Flavor::DiagonalMimo => {
            let dt = Array1::from_shape_fn(params.state_size(), |i| params.dt(i));
            let (a_bar, b_bar) = zoh_diagonal(&params.lambda, &params.b, &dt);
            Ok(DiscreteSsm {
                a_bar: StateMatrix::Diagonal(a_bar),
                b_bar,
                c: params.c.clone(),
                d: params.d.clone(),
                conjugate: params.conjugate,
            })
        }
    }
}

/// Bilinear discretization of a dense `A`, forming the inverse explicitly.
pub fn bilinear_dense<T: Scalar>(
    a: &Array2<Cx<T>>,
    b: &Array2<Cx<T>>,
    dt: T,
) -> Result<(Array2<Cx<T>>, Array2<Cx<T>>)> {
    let n = a.nrows();
    let half = Cx::new(dt / (T::one() + T::one()), T::zero());
    let eye = linalg::identity::<T>(n);
    let m = &eye - &a.mapv(|z| z * half);
    let np = &eye + &a.mapv(|z| z * half);
    let q = linalg::inverse(&m, "bilinear: I - dt/2 A")?;
    let a_bar = linalg::matmul(&q, &np);
    let b_bar = linalg::matmul(&q, &b.mapv(|z| z * dt));
    Ok((a_bar, b_bar))
}

/// Intermediates of the DPLR bilinear transform, kept for differentiation.
#[derive(Debug, Clone)]
pub struct BilinearParts<T: Scalar> {
    /// `(I - dt/2 A)^{-1}`
    pub q: Array2<Cx<T>>,
    /// `I + dt/2 A`
    pub np: Array2<Cx<T>>,
    pub a_bar: Array2<Cx<T>>,
    pub b_bar: Array2<Cx<T>>,
}

/// Bilinear transform of `A = diag(lambda) - p p^H` using the Sherman-Morrison
/// form of the inverse.
pub fn bilinear_dplr<T: Scalar>(
    lambda: &Array1<Cx<T>>,
    p: &Array1<Cx<T>>,
    b: &Array2<Cx<T>>,
    dt: T,
) -> Result<BilinearParts<T>> {
    let n = lambda.len();
    let h = dt / (T::one() + T::one());
    // I - h A = D + h p p^H with D = diag(1 - h lambda).
    let dinv: Array1<Cx<T>> = lambda.mapv(|l| (Cx::<T>::one() - l * h).inv());
    let dp: Array1<Cx<T>> = Array1::from_shape_fn(n, |i| dinv[i] * p[i]);
    let denom: Cx<T> = Cx::<T>::one() + p.iter().zip(dp.iter()).fold(Cx::<T>::zero(), |acc, (pi, di)| acc + pi.conj() * di) * h;
    if !(denom.norm() > T::epsilon()) || dinv.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Singular("bilinear: I - dt/2 A"));
    }
    let coef = Cx::new(h, T::zero()) / denom;
    // (D + h p p^H)^{-1} = D^{-1} - h D^{-1} p p^H D^{-1} / (1 + h p^H D^{-1} p)
    let q = Array2::from_shape_fn((n, n), |(i, j)| {
        let diag = if i == j { dinv[i] } else { Cx::zero() };
        diag - coef * dp[i] * (p[j].conj() * dinv[j])
    });
    let np = Array2::from_shape_fn((n, n), |(i, j)| {
        let diag = if i == j { Cx::<T>::one() + lambda[i] * h } else { Cx::<T>::zero() };
        diag - p[i] * p[j].conj() * h
    });
    let a_bar = linalg::matmul(&q, &np);
    let b_bar = linalg::matmul(&q, &b.mapv(|z| z * dt));
    Ok(BilinearParts { q, np, a_bar, b_bar })
}

/// `(exp(x) - 1) / x` with a series fallback near zero.
pub fn expm1_over<T: Scalar>(x: Cx<T>) -> Cx<T> {
    let thresh = T::from_f64(1e-4).unwrap();
    if x.norm() < thresh {
        let two = T::from_f64(2.0).unwrap();
        let six = T::from_f64(6.0).unwrap();
        let twenty_four = T::from_f64(24.0).unwrap();
        Cx::<T>::one() + x / two + x * x / six + x * x * x / twenty_four
    } else {
        (x.exp() - Cx::one()) / x
    }
}

/// Zero-order hold for diagonal `A`: `a = exp(dt lambda)`, `B = (a - 1)/lambda B`.
pub fn zoh_diagonal<T: Scalar>(
    lambda: &Array1<Cx<T>>,
    b: &Array2<Cx<T>>,
    dt: &Array1<T>,
) -> (Array1<Cx<T>>, Array2<Cx<T>>) {
    let a_bar = Array1::from_shape_fn(lambda.len(), |i| (lambda[i] * dt[i]).exp());
    let factor = Array1::from_shape_fn(lambda.len(), |i| expm1_over(lambda[i] * dt[i]) * dt[i]);
    let b_bar = Array2::from_shape_fn(b.dim(), |(i, u)| factor[i] * b[[i, u]]);
    (a_bar, b_bar)
}

/// Scalar helper used in tests and docs: bilinear `(1 + dt a/2) / (1 - dt a/2)`.
pub fn bilinear_scalar<T: Scalar>(a: Complex<T>, b: Complex<T>, dt: T) -> (Complex<T>, Complex<T>) {
    let h = dt / (T::one() + T::one());
    let m = Cx::<T>::one() - a * h;
    ((Cx::<T>::one() + a * h) / m, b * dt / m)
}
