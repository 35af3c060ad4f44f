//! PNG renderers for similarity-network heatmaps and macro-F1 bars.
//!
//! Text-free pixel plots: deterministic output, no font dependencies. The
//! numeric data behind each plot is always written alongside as CSV.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::numeric::Matrix;

fn color_ramp(t: f64) -> Rgb<u8> {
    // Dark blue -> teal -> yellow.
    let t = t.clamp(0.0, 1.0);
    let (r, g, b) = if t < 0.5 {
        let u = t / 0.5;
        (
            13.0 + u * (33.0 - 13.0),
            8.0 + u * (145.0 - 8.0),
            135.0 + u * (140.0 - 135.0),
        )
    } else {
        let u = (t - 0.5) / 0.5;
        (
            33.0 + u * (253.0 - 33.0),
            145.0 + u * (231.0 - 145.0),
            140.0 + u * (37.0 - 140.0),
        )
    };
    Rgb([r as u8, g as u8, b as u8])
}

/// Renders a similarity matrix as a heatmap. Off-diagonal values are scaled
/// to their own maximum so fused-vs-unimodal edge-weight structure is
/// visible; the diagonal saturates.
pub fn heatmap_png(matrix: &Matrix, path: &Path) -> Result<()> {
    let n = matrix.rows();
    if n == 0 || matrix.cols() != n {
        return Err(Error::contract("heatmap needs a non-empty square matrix"));
    }
    let scale = (512 / n).max(1);
    let mut vmax = 0.0_f64;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                vmax = vmax.max(matrix.get(i, j));
            }
        }
    }
    if vmax <= 0.0 {
        vmax = 1.0;
    }
    let size = (n * scale) as u32;
    let mut img = RgbImage::new(size, size);
    for i in 0..n {
        for j in 0..n {
            let t = if i == j { 1.0 } else { matrix.get(i, j) / vmax };
            let px = color_ramp(t);
            for dy in 0..scale {
                for dx in 0..scale {
                    img.put_pixel((j * scale + dx) as u32, (i * scale + dy) as u32, px);
                }
            }
        }
    }
    save(img, path)
}

/// Renders values in [0, 1] as vertical bars.
pub fn bars_png(values: &[f64], path: &Path) -> Result<()> {
    if values.is_empty() {
        return Err(Error::contract("bars need at least one value"));
    }
    let bar_w = 48u32;
    let gap = 12u32;
    let height = 256u32;
    let width = values.len() as u32 * (bar_w + gap) + gap;
    let mut img = RgbImage::from_pixel(width, height, Rgb([250, 250, 250]));
    for (idx, &v) in values.iter().enumerate() {
        let h = ((v.clamp(0.0, 1.0)) * (height as f64 - 16.0)) as u32;
        let x0 = gap + idx as u32 * (bar_w + gap);
        let color = color_ramp(v.clamp(0.0, 1.0));
        for x in x0..x0 + bar_w {
            for y in (height - 8 - h)..(height - 8) {
                img.put_pixel(x, y, color);
            }
        }
    }
    save(img, path)
}

fn save(img: RgbImage, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    img.save(path)
        .map_err(|e| Error::config(format!("cannot write {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heatmap_writes_a_png() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.png");
        let m = Matrix::from_fn(6, 6, |i, j| if i == j { 1.0 } else { 0.1 * (i + j) as f64 });
        heatmap_png(&m, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[1..4], b"PNG");
    }

    #[test]
    fn bars_write_a_png() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.png");
        bars_png(&[0.2, 0.8, 0.5], &path).unwrap();
        assert!(path.exists());
    }
}
