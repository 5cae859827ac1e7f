//! im2col / col2im kernels for NHWC convolutions.

use crate::scalar::Scalar;

/// Geometry of a square-kernel strided convolution on NHWC data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn col_width(&self) -> usize {
        self.kernel * self.kernel * self.channels
    }

    pub fn col_rows(&self) -> usize {
        self.batch * self.out_h() * self.out_w()
    }

    pub fn valid(&self) -> bool {
        self.in_h + 2 * self.pad >= self.kernel
            && self.in_w + 2 * self.pad >= self.kernel
            && (self.in_h + 2 * self.pad - self.kernel) % self.stride == 0
            && (self.in_w + 2 * self.pad - self.kernel) % self.stride == 0
    }
}

/// Unfolds `input` (B,H,W,C row-major) into rows of receptive fields ordered (ky, kx, c).
pub fn im2col<T: Scalar>(input: &[T], g: &ConvGeom) -> Vec<T> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let cw = g.col_width();
    let mut cols = vec![T::zero(); g.col_rows() * cw];
    for b in 0..g.batch {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = ((b * oh + oy) * ow + ox) * cw;
                for ky in 0..g.kernel {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    for kx in 0..g.kernel {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix < 0 || ix >= g.in_w as isize {
                            continue;
                        }
                        let src = ((b * g.in_h + iy as usize) * g.in_w + ix as usize) * g.channels;
                        let dst = row + (ky * g.kernel + kx) * g.channels;
                        cols[dst..dst + g.channels].copy_from_slice(&input[src..src + g.channels]);
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters-and-adds column rows back into an NHWC image.
pub fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom) -> Vec<T> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let cw = g.col_width();
    let mut out = vec![T::zero(); g.batch * g.in_h * g.in_w * g.channels];
    for b in 0..g.batch {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = ((b * oh + oy) * ow + ox) * cw;
                for ky in 0..g.kernel {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    for kx in 0..g.kernel {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix < 0 || ix >= g.in_w as isize {
                            continue;
                        }
                        let dst = ((b * g.in_h + iy as usize) * g.in_w + ix as usize) * g.channels;
                        let src = row + (ky * g.kernel + kx) * g.channels;
                        for c in 0..g.channels {
                            out[dst + c] = out[dst + c] + cols[src + c];
                        }
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = ConvGeom {
            batch: 2,
            in_h: 6,
            in_w: 4,
            channels: 3,
            kernel: 4,
            stride: 2,
            pad: 1,
        };
        assert!(g.valid());
        let x: Vec<f64> = (0..2 * 6 * 4 * 3).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let y: Vec<f64> = (0..g.col_rows() * g.col_width())
            .map(|i| ((i * 3) % 13) as f64 - 6.0)
            .collect();
        let ax = im2col(&x, &g);
        let aty = col2im(&y, &g);
        let lhs: f64 = ax.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&aty).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn halving_geometry() {
        let g = ConvGeom {
            batch: 1,
            in_h: 32,
            in_w: 32,
            channels: 3,
            kernel: 4,
            stride: 2,
            pad: 1,
        };
        assert_eq!((g.out_h(), g.out_w()), (16, 16));
    }
}
