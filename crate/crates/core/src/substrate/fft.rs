//! Power-of-two complex FFT used by the SSM convolution path.

use num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn check_len(n: usize) -> Result<()> {
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::Invalid(format!(
            "FFT length {n} is not a power of two; zero-pad the input"
        )));
    }
    Ok(())
}

/// In-place forward transform (no normalization).
pub fn fft<T: Scalar>(data: &mut [Complex<T>]) -> Result<()> {
    check_len(data.len())?;
    FftPlanner::new().plan_fft_forward(data.len()).process(data);
    Ok(())
}

/// In-place inverse transform, normalized by 1/n so that `ifft(fft(x)) == x`.
pub fn ifft<T: Scalar>(data: &mut [Complex<T>]) -> Result<()> {
    check_len(data.len())?;
    FftPlanner::new().plan_fft_inverse(data.len()).process(data);
    let scale = T::one() / T::from_usize(data.len()).expect("length");
    for v in data.iter_mut() {
        *v = *v * scale;
    }
    Ok(())
}

/// Smallest power of two that is `>= n`.
pub fn next_pow2(n: usize) -> usize {
    n.max(1).next_power_of_two()
}

/// Reusable plans for repeated real-signal convolutions of one padded length.
pub struct FftConvolver<T: Scalar> {
    n: usize,
    forward: std::sync::Arc<dyn rustfft::Fft<T>>,
    inverse: std::sync::Arc<dyn rustfft::Fft<T>>,
}

impl<T: Scalar> FftConvolver<T> {
    /// Plans transforms long enough for a linear (non-wrapping) convolution of two length-`len` signals.
    pub fn new(len: usize) -> Self {
        let n = next_pow2(2 * len);
        let mut planner = FftPlanner::new();
        Self {
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    pub fn padded_len(&self) -> usize {
        self.n
    }

    pub fn spectrum(&self, signal: impl IntoIterator<Item = T>) -> Vec<Complex<T>> {
        let mut buf = vec![Complex::new(T::zero(), T::zero()); self.n];
        for (slot, v) in buf.iter_mut().zip(signal) {
            slot.re = v;
        }
        self.forward.process(&mut buf);
        buf
    }

    /// Inverse transform of a spectrum, returning the first `len` real samples.
    pub fn real_inverse(&self, mut spec: Vec<Complex<T>>, len: usize) -> Vec<T> {
        self.inverse.process(&mut spec);
        let scale = T::one() / T::from_usize(self.n).expect("length");
        spec.iter().take(len).map(|c| c.re * scale).collect()
    }

    /// Causal linear convolution `out[k] = sum_{j<=k} kernel[k-j] * signal[j]` for k < len.
    pub fn causal_conv(&self, kernel_spec: &[Complex<T>], signal: &[T]) -> Vec<T> {
        let s = self.spectrum(signal.iter().copied());
        let prod = s.iter().zip(kernel_spec).map(|(a, b)| a * b).collect();
        self.real_inverse(prod, signal.len())
    }

    /// Causal cross-correlation `out[m] = sum_k a[k] * b[k-m]` for m < len.
    pub fn correlate(&self, a: &[T], b: &[T]) -> Vec<T> {
        let sa = self.spectrum(a.iter().copied());
        let sb = self.spectrum(b.iter().copied());
        let prod = sa.iter().zip(&sb).map(|(x, y)| x * y.conj()).collect();
        self.real_inverse(prod, a.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn impulse_transforms_to_ones() {
        let mut x = vec![
            Complex::new(1.0f64, 0.0),
            Complex::new(0.0, 0.0),
            Complex::new(0.0, 0.0),
            Complex::new(0.0, 0.0),
        ];
        fft(&mut x).unwrap();
        for v in &x {
            assert!((v.re - 1.0).abs() < 1e-12 && v.im.abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_non_power_of_two() {
        let mut x = vec![Complex::new(0.0f32, 0.0); 6];
        assert!(fft(&mut x).is_err());
    }

    #[test]
    fn roundtrip_f32_up_to_4096() {
        for &n in &[1usize, 2, 64, 1024, 4096] {
            let orig: Vec<Complex<f32>> = (0..n)
                .map(|i| Complex::new(((i * 37) % 17) as f32 / 17.0 - 0.5, ((i * 11) % 7) as f32 / 7.0))
                .collect();
            let mut x = orig.clone();
            fft(&mut x).unwrap();
            ifft(&mut x).unwrap();
            let err = x
                .iter()
                .zip(&orig)
                .map(|(a, b)| (a - b).norm())
                .fold(0.0f32, f32::max);
            assert!(err < 1e-6, "n={n} err={err}");
        }
    }

    #[test]
    fn causal_conv_matches_direct_sum() {
        let k = [0.5f64, -0.25, 0.125, 1.0, 0.0];
        let u = [1.0f64, 2.0, -1.0, 0.5, 3.0];
        let conv = FftConvolver::new(5);
        let ks = conv.spectrum(k.iter().copied());
        let y = conv.causal_conv(&ks, &u);
        for t in 0..5 {
            let direct: f64 = (0..=t).map(|j| k[t - j] * u[j]).sum();
            assert!((y[t] - direct).abs() < 1e-12);
        }
        let c = conv.correlate(&u, &k);
        for m in 0..5 {
            let direct: f64 = (m..5).map(|t| u[t] * k[t - m]).sum();
            assert!((c[m] - direct).abs() < 1e-12);
        }
    }
}
