//! PNG grids comparing ground truth with imagination.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use ndarray::{ArrayView4, Axis};

use crate::Result;

/// Columns shown for a horizon of `steps`: every k-th step with k chosen so that at most 16 remain.
pub fn grid_columns(steps: usize) -> Vec<usize> {
    let k = steps.div_ceil(16).max(1);
    (0..steps).step_by(k).collect()
}

fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Rows: ground truth, imagination, absolute error. Inputs are `(Q, H, W, 3)` in [0, 1].
pub fn comparison_grid(truth: ArrayView4<f32>, pred: ArrayView4<f32>) -> (usize, usize, Vec<u8>) {
    let (q, h, w, _) = truth.dim();
    let cols = grid_columns(q);
    let gap = 1;
    let width = cols.len() * (w + gap) + gap;
    let height = 3 * (h + gap) + gap;
    let mut img = vec![255u8; width * height * 3];
    for (ci, &t) in cols.iter().enumerate() {
        let x0 = gap + ci * (w + gap);
        let tf = truth.index_axis(Axis(0), t);
        let pf = pred.index_axis(Axis(0), t);
        for row in 0..3 {
            let y0 = gap + row * (h + gap);
            for y in 0..h {
                for x in 0..w {
                    for c in 0..3 {
                        let (a, b) = (tf[[y, x, c]], pf[[y, x, c]].clamp(0.0, 1.0));
                        let v = match row {
                            0 => to_byte(a),
                            1 => to_byte(b),
                            _ => to_byte((a - b).abs()),
                        };
                        img[((y0 + y) * width + x0 + x) * 3 + c] = v;
                    }
                }
            }
        }
    }
    (width, height, img)
}

pub fn write_png(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    let f = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(f, width as u32, height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc.write_header().map_err(|e| crate::HarnessError::Data(e.to_string()))?;
    w.write_image_data(rgb).map_err(|e| crate::HarnessError::Data(e.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn at_most_sixteen_columns() {
        assert_eq!(grid_columns(6), vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(grid_columns(16).len(), 16);
        assert_eq!(grid_columns(17), (0..17).step_by(2).collect::<Vec<_>>());
        assert!(grid_columns(174).len() <= 16);
    }
}
