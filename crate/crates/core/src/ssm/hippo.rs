//! HiPPO-LegS initialization and its diagonal-plus-low-rank decomposition.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2};
use num_complex::Complex;

/// Dense LegS state matrix: `-sqrt(2n+1) sqrt(2k+1)` below the diagonal, `-(n+1)` on it.
pub fn legs_matrix(n: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, n), |(i, k)| {
        if i > k {
            -((2 * i + 1) as f64).sqrt() * ((2 * k + 1) as f64).sqrt()
        } else if i == k {
            -((i + 1) as f64)
        } else {
            0.0
        }
    })
}

/// LegS input vector `sqrt(2n+1)`.
pub fn legs_input(n: usize) -> Array1<f64> {
    Array1::from_shape_fn(n, |i| ((2 * i + 1) as f64).sqrt())
}

/// Rank-1 factor `sqrt(n + 1/2)` making `A + P P^T` normal.
pub fn legs_low_rank(n: usize) -> Array1<f64> {
    Array1::from_shape_fn(n, |i| (i as f64 + 0.5).sqrt())
}

/// The diagonalized normal-plus-low-rank form of the LegS matrix:
/// `A = V (diag(lambda) - p p^H) V^H` with `V` unitary.
#[derive(Debug, Clone)]
pub struct DplrInit {
    pub lambda: Array1<Complex<f64>>,
    pub p: Array1<Complex<f64>>,
    pub b: Array1<Complex<f64>>,
    pub v: Array2<Complex<f64>>,
}

/// HiPPO-LegS initialization for a state of size `n >= 1`.
pub fn hippo_init(n: usize) -> DplrInit {
    assert!(n >= 1, "state size must be positive");
    let a = legs_matrix(n);
    let p = legs_low_rank(n);
    let b = legs_input(n);
    // S = A + P P^T = -1/2 I + K with K skew-symmetric; i*K is Hermitian.
    let herm = DMatrix::from_fn(n, n, |i, j| {
        let skew = a[[i, j]] + p[i] * p[j] + if i == j { 0.5 } else { 0.0 };
        Complex::new(0.0, skew)
    });
    let eig = SymmetricEigen::new(herm);
    // K v = -i mu v, so S has eigenvalues -1/2 - i mu.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let v = Array2::from_shape_fn((n, n), |(r, c)| eig.eigenvectors[(r, order[c])]);
    let lambda = Array1::from_shape_fn(n, |c| Complex::new(-0.5, -eig.eigenvalues[order[c]]));
    let project = |x: &Array1<f64>| {
        Array1::from_shape_fn(n, |c| {
            (0..n).fold(Complex::new(0.0, 0.0), |acc, r| acc + v[[r, c]].conj() * x[r])
        })
    };
    DplrInit {
        lambda,
        p: project(&p),
        b: project(&b),
        v,
    }
}

impl DplrInit {
    /// Reassembles the dense matrix `V (diag(lambda) - p p^H) V^H`.
    pub fn dense(&self) -> Array2<Complex<f64>> {
        let n = self.lambda.len();
        let inner = Array2::from_shape_fn((n, n), |(i, j)| {
            let d = if i == j { self.lambda[i] } else { Complex::new(0.0, 0.0) };
            d - self.p[i] * self.p[j].conj()
        });
        let vi = super::linalg::matmul(&self.v, &inner);
        super::linalg::matmul(&vi, &super::linalg::adjoint(&self.v))
    }

    /// Keeps one member of each conjugate eigenvalue pair (positive imaginary part),
    /// ordered by increasing frequency. `n` must be even.
    pub fn conjugate_half(&self) -> DplrInit {
        let n = self.lambda.len();
        assert!(n % 2 == 0, "conjugate halving needs an even state size");
        let mut keep: Vec<usize> = (0..n).filter(|&i| self.lambda[i].im > 0.0).collect();
        keep.sort_by(|&i, &j| self.lambda[i].im.total_cmp(&self.lambda[j].im));
        assert_eq!(keep.len(), n / 2, "eigenvalues must come in conjugate pairs");
        DplrInit {
            lambda: keep.iter().map(|&i| self.lambda[i]).collect(),
            p: keep.iter().map(|&i| self.p[i]).collect(),
            b: keep.iter().map(|&i| self.b[i]).collect(),
            v: Array2::from_shape_fn((n, keep.len()), |(r, c)| self.v[[r, keep[c]]]),
        }
    }
}
