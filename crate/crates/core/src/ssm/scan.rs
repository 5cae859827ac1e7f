//! Associative scan for diagonal linear recurrences.

use ndarray::Array1;
use num_complex::Complex;

use crate::scalar::Scalar;

/// `(a, b)` representing the affine map `s -> a * s + b` (elementwise).
#[derive(Debug, Clone, PartialEq)]
pub struct ScanElem<T: Scalar> {
    pub a: Array1<Complex<T>>,
    pub b: Array1<Complex<T>>,
}

impl<T: Scalar> ScanElem<T> {
    pub fn identity(n: usize) -> Self {
        Self {
            a: Array1::from_elem(n, Complex::new(T::one(), T::zero())),
            b: Array1::zeros(n),
        }
    }
}

/// Applies `e1` then `e2`: `(a2 a1, a2 b1 + b2)`.
pub fn scan_combine<T: Scalar>(e1: &ScanElem<T>, e2: &ScanElem<T>) -> ScanElem<T> {
    ScanElem {
        a: &e2.a * &e1.a,
        b: &e2.a * &e1.b + &e2.b,
    }
}

/// Inclusive prefix scan: `out[i] = elems[0] ; ... ; elems[i]`.
///
/// Pairwise reduction followed by a recursive scan of the halves, O(n) work
/// and O(log n) depth.
pub fn associative_scan<T: Scalar>(elems: &[ScanElem<T>]) -> Vec<ScanElem<T>> {
    let n = elems.len();
    if n <= 1 {
        return elems.to_vec();
    }
    let pairs: Vec<ScanElem<T>> = (0..n / 2)
        .map(|i| scan_combine(&elems[2 * i], &elems[2 * i + 1]))
        .collect();
    let sub = associative_scan(&pairs);
    let mut out = Vec::with_capacity(n);
    out.push(elems[0].clone());
    for i in 1..n {
        if i % 2 == 1 {
            out.push(sub[i / 2].clone());
        } else {
            out.push(scan_combine(&sub[i / 2 - 1], &elems[i]));
        }
    }
    out
}
