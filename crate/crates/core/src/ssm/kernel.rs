//! Convolution kernels and the parallel / recurrent execution of one SSM.

use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2};
use num_complex::Complex;

use super::scan::{associative_scan, ScanElem};
use super::{DiscreteSsm, SsmState, StateMatrix};
use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::substrate::fft::FftConvolver;

/// `x_m = A^m x0` for `m < len`.
pub fn power_chain<T: Scalar>(a: &StateMatrix<T>, x0: Array1<Complex<T>>, len: usize) -> Vec<Array1<Complex<T>>> {
    let mut out = Vec::with_capacity(len);
    let mut x = x0;
    for m in 0..len {
        if m + 1 < len {
            let next = a.apply(&x);
            out.push(std::mem::replace(&mut x, next));
        } else {
            out.push(x.clone());
        }
    }
    out
}

/// Kernel `K_m = scale Re(C A^m B)` of shape (len, Y, U).
pub fn materialize_kernel<T: Scalar>(disc: &DiscreteSsm<T>, len: usize) -> Array3<T> {
    let (y_dim, u_dim) = (disc.c.nrows(), disc.b_bar.ncols());
    let mut k = Array3::zeros((len, y_dim, u_dim));
    for u in 0..u_dim {
        let chain = power_chain(&disc.a_bar, disc.b_bar.column(u).to_owned(), len);
        for (m, x) in chain.iter().enumerate() {
            let r = disc.readout(x);
            for y in 0..y_dim {
                k[[m, y, u]] = r[y];
            }
        }
    }
    k
}

/// One recurrence step: `s_k = A s_{k-1} + B u_k`, `y_k = scale Re(C s_k) + D u_k`.
pub fn pssm_step<T: Scalar>(
    disc: &DiscreteSsm<T>,
    u: ArrayView1<T>,
    s: &SsmState<T>,
) -> (Array1<T>, SsmState<T>) {
    let mut next = disc.a_bar.apply(s);
    for (j, &uj) in u.iter().enumerate() {
        if uj != T::zero() {
            for n in 0..next.len() {
                next[n] = next[n] + disc.b_bar[[n, j]] * uj;
            }
        }
    }
    let mut y = disc.readout(&next);
    for (i, yi) in y.iter_mut().enumerate() {
        *yi = *yi + disc.d[i] * u[i];
    }
    (y, next)
}

/// Whole-sequence evaluation over `u` of shape (T, U).
///
/// Dense transitions use an FFT convolution with the materialized kernel,
/// diagonal ones an associative scan. Sequences longer than `max_len` must
/// be split by the caller and chained through the returned state.
pub fn pssm_parallel<T: Scalar>(
    disc: &DiscreteSsm<T>,
    u: ArrayView2<T>,
    s0: &SsmState<T>,
    max_len: usize,
) -> Result<(Array2<T>, SsmState<T>)> {
    let (len, u_dim) = u.dim();
    if len == 0 {
        return Err(Error::Invalid("pssm_parallel needs at least one step".into()));
    }
    if len > max_len {
        return Err(Error::KernelTooLong { len, max: max_len });
    }
    if u_dim != disc.b_bar.ncols() {
        return Err(shape_err("pssm_parallel", u.shape(), &[len, disc.b_bar.ncols()]));
    }
    if s0.len() != disc.state_size() {
        return Err(shape_err("pssm_parallel.state", s0.shape(), &[disc.state_size()]));
    }
    match &disc.a_bar {
        StateMatrix::Dense(_) => Ok(parallel_conv(disc, u, s0)),
        StateMatrix::Diagonal(a) => Ok(parallel_scan(disc, a, u, s0)),
    }
}

fn parallel_conv<T: Scalar>(disc: &DiscreteSsm<T>, u: ArrayView2<T>, s0: &SsmState<T>) -> (Array2<T>, SsmState<T>) {
    let (len, u_dim) = u.dim();
    let y_dim = disc.c.nrows();
    let conv = FftConvolver::<T>::new(len);
    let mut y = Array2::zeros((len, y_dim));
    let mut s_t: SsmState<T> = Array1::zeros(disc.state_size());
    for ui in 0..u_dim {
        let chain = power_chain(&disc.a_bar, disc.b_bar.column(ui).to_owned(), len);
        let signal: Vec<T> = u.column(ui).to_vec();
        for (m, x) in chain.iter().enumerate() {
            let w = signal[len - 1 - m];
            if w != T::zero() {
                s_t = s_t + x.mapv(|z| z * w);
            }
        }
        let kernel: Vec<Array1<T>> = chain.iter().map(|x| disc.readout(x)).collect();
        for yi in 0..y_dim {
            let spec = conv.spectrum(kernel.iter().map(|k| k[yi]));
            let out = conv.causal_conv(&spec, &signal);
            for (k, v) in out.into_iter().enumerate() {
                y[[k, yi]] = y[[k, yi]] + v;
            }
        }
    }
    if s0.iter().any(|z| z.re != T::zero() || z.im != T::zero()) {
        let mut z = s0.clone();
        for k in 0..len {
            z = disc.a_bar.apply(&z);
            let r = disc.readout(&z);
            for yi in 0..y_dim {
                y[[k, yi]] = y[[k, yi]] + r[yi];
            }
        }
        s_t = s_t + z;
    }
    for k in 0..len {
        for yi in 0..y_dim {
            y[[k, yi]] = y[[k, yi]] + disc.d[yi] * u[[k, yi]];
        }
    }
    (y, s_t)
}

fn parallel_scan<T: Scalar>(
    disc: &DiscreteSsm<T>,
    a: &Array1<Complex<T>>,
    u: ArrayView2<T>,
    s0: &SsmState<T>,
) -> (Array2<T>, SsmState<T>) {
    let states = scan_states(a, &disc.b_bar, u, s0);
    let (len, _) = u.dim();
    let y_dim = disc.c.nrows();
    let mut y = Array2::zeros((len, y_dim));
    for (k, s) in states.iter().enumerate() {
        let r = disc.readout(s);
        for yi in 0..y_dim {
            y[[k, yi]] = r[yi] + disc.d[yi] * u[[k, yi]];
        }
    }
    let last = states.last().expect("non-empty").clone();
    (y, last)
}

/// All states `s_1..s_T` of a diagonal recurrence, via the associative scan.
pub fn scan_states<T: Scalar>(
    a: &Array1<Complex<T>>,
    b_bar: &Array2<Complex<T>>,
    u: ArrayView2<T>,
    s0: &SsmState<T>,
) -> Vec<SsmState<T>> {
    let (len, u_dim) = u.dim();
    let mut elems: Vec<ScanElem<T>> = (0..len)
        .map(|k| {
            let mut b = Array1::zeros(a.len());
            for j in 0..u_dim {
                let uj = u[[k, j]];
                if uj != T::zero() {
                    for n in 0..a.len() {
                        b[n] = b[n] + b_bar[[n, j]] * uj;
                    }
                }
            }
            ScanElem { a: a.clone(), b }
        })
        .collect();
    elems[0].b = &elems[0].b + &(a * s0);
    associative_scan(&elems).into_iter().map(|e| e.b).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn memoryless(conjugate: bool) -> DiscreteSsm<f64> {
        DiscreteSsm {
            a_bar: StateMatrix::Dense(Array2::zeros((2, 2))),
            b_bar: array![[Complex::new(1.0, 0.5)], [Complex::new(-0.5, 0.0)]],
            c: array![[Complex::new(0.3, 0.1), Complex::new(2.0, -1.0)]],
            d: array![0.25],
            conjugate,
        }
    }

    #[test]
    fn memoryless_system() {
        for conjugate in [false, true] {
            let disc = memoryless(conjugate);
            let gain = materialize_kernel(&disc, 1)[[0, 0, 0]] + 0.25;
            let u = array![[1.0], [-2.0], [0.5]];
            let (y, _) = pssm_parallel(&disc, u.view(), &disc.zero_state(), 16).unwrap();
            for k in 0..3 {
                assert!((y[[k, 0]] - gain * u[[k, 0]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn too_long_is_rejected() {
        let disc = memoryless(true);
        let u = Array2::zeros((9, 1));
        assert!(matches!(
            pssm_parallel(&disc, u.view(), &disc.zero_state(), 8),
            Err(Error::KernelTooLong { len: 9, max: 8 })
        ));
    }

    #[test]
    fn zero_step_is_zero() {
        let disc = memoryless(true);
        let (y, s) = pssm_step(&disc, array![0.0].view(), &disc.zero_state());
        assert_eq!(y[0], 0.0);
        assert!(s.iter().all(|z| z.norm() == 0.0));
    }
}
