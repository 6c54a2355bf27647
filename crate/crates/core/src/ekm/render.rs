//! Heatmap rasterization of standardized EKM matrices.

use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, RgbImage};

use super::{EkmError, EkmMatrix};

pub const DEFAULT_HEIGHT: usize = 25;
pub const DEFAULT_WIDTH: usize = 37;

/// Jet-like anchors at t = 0, 0.25, 0.5, 0.75, 1.
const ANCHORS: [[f64; 3]; 5] = [
    [0.0, 0.0, 128.0],
    [0.0, 255.0, 255.0],
    [0.0, 255.0, 0.0],
    [255.0, 255.0, 0.0],
    [128.0, 0.0, 0.0],
];

/// Fixed-size RGB raster; the network's input unit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EkmImage {
    pub height: usize,
    pub width: usize,
    /// Row-major RGB bytes, `height * width * 3` long.
    pub pixels: Vec<u8>,
    pub label: String,
}

impl EkmImage {
    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.width + col) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn to_png(&self) -> Result<Vec<u8>, EkmError> {
        let img = RgbImage::from_raw(self.width as u32, self.height as u32, self.pixels.clone())
            .ok_or(EkmError::InvalidDimensions {
                height: self.height,
                width: self.width,
            })?;
        let mut buf = Cursor::new(Vec::new());
        img.write_to(&mut buf, ImageFormat::Png)
            .map_err(|e| EkmError::Image(e.to_string()))?;
        Ok(buf.into_inner())
    }

    pub fn write_png(&self, path: &Path) -> Result<(), EkmError> {
        let bytes = self.to_png()?;
        std::fs::write(path, bytes).map_err(|source| EkmError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn read_png(path: &Path, label: impl Into<String>) -> Result<Self, EkmError> {
        let img = image::open(path)
            .map_err(|e| EkmError::Image(format!("{}: {e}", path.display())))?
            .to_rgb8();
        Ok(Self {
            height: img.height() as usize,
            width: img.width() as usize,
            pixels: img.into_raw(),
            label: label.into(),
        })
    }
}

fn round_half_up(x: f64) -> u8 {
    (x + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Map `t` in [0, 1] through the piecewise-linear anchors.
pub fn colormap(t: f64) -> [u8; 3] {
    let t = if t.is_nan() { 0.0 } else { t.clamp(0.0, 1.0) };
    let scaled = t * 4.0;
    let seg = (scaled.floor() as usize).min(3);
    let frac = scaled - seg as f64;
    let (lo, hi) = (ANCHORS[seg], ANCHORS[seg + 1]);
    [0, 1, 2].map(|c| round_half_up(lo[c] + (hi[c] - lo[c]) * frac))
}

/// Color for a standardized value in [-1, 1].
pub fn value_color(v: f64) -> [u8; 3] {
    colormap((v + 1.0) / 2.0)
}

/// Source coordinate and blend weight for output index `i` (pixel-center
/// alignment, clamped to the edges).
fn sample_axis(i: usize, out_len: usize, in_len: usize) -> (usize, usize, f64) {
    let pos = ((i as f64 + 0.5) * in_len as f64 / out_len as f64 - 0.5).clamp(0.0, (in_len - 1) as f64);
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(in_len - 1);
    (lo, hi, pos - lo as f64)
}

fn lerp(a: f64, b: f64, w: f64) -> f64 {
    a + (b - a) * w
}

/// Bilinear resampling of a row-major `rows x cols` grid.
pub fn resample_bilinear(values: &[f64], rows: usize, cols: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let xs: Vec<_> = (0..out_w).map(|j| sample_axis(j, out_w, cols)).collect();
    let mut out = Vec::with_capacity(out_h * out_w);
    for i in 0..out_h {
        let (r0, r1, wy) = sample_axis(i, out_h, rows);
        for &(c0, c1, wx) in &xs {
            let top = lerp(values[r0 * cols + c0], values[r0 * cols + c1], wx);
            let bottom = lerp(values[r1 * cols + c0], values[r1 * cols + c1], wx);
            out.push(lerp(top, bottom, wy));
        }
    }
    out
}

/// Resample to `out_h x out_w` and colorize. Values are expected in [-1, 1];
/// anything outside is clamped by the colormap.
pub fn render_heatmap(matrix: &EkmMatrix, out_h: usize, out_w: usize) -> Result<EkmImage, EkmError> {
    if out_h == 0 || out_w == 0 || matrix.rows == 0 || matrix.cols == 0 {
        return Err(EkmError::InvalidDimensions {
            height: out_h,
            width: out_w,
        });
    }
    let grid = resample_bilinear(&matrix.values, matrix.rows, matrix.cols, out_h, out_w);
    let pixels = grid.into_iter().flat_map(value_color).collect();
    Ok(EkmImage {
        height: out_h,
        width: out_w,
        pixels,
        label: matrix.subject_id.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn constant(v: f64, rows: usize, cols: usize) -> EkmMatrix {
        EkmMatrix {
            rows,
            cols,
            values: vec![v; rows * cols],
            window_start_peak: 0,
            subject_id: "s".into(),
        }
    }

    #[test]
    fn anchor_colors() {
        assert_eq!(value_color(-1.0), [0, 0, 128]);
        assert_eq!(value_color(0.0), [0, 255, 0]);
        assert_eq!(value_color(1.0), [128, 0, 0]);
        assert_eq!(colormap(0.25), [0, 255, 255]);
        assert_eq!(colormap(0.75), [255, 255, 0]);
    }

    #[test]
    fn interpolated_color_rounds_half_up() {
        // t = 0.5625: a quarter of the way from green to yellow, 63.75 -> 64
        assert_eq!(value_color(0.125), [64, 255, 0]);
    }

    #[test]
    fn constant_minus_one_renders_dark_blue() {
        let img = render_heatmap(&constant(-1.0, 3, 100), 25, 37).unwrap();
        assert_eq!((img.height, img.width, img.pixels.len()), (25, 37, 25 * 37 * 3));
        assert!(img.pixels.chunks(3).all(|p| p == [0, 0, 128]));
    }

    #[test]
    fn constant_matrix_renders_uniformly() {
        let img = render_heatmap(&constant(0.125, 7, 51), 25, 37).unwrap();
        assert!(img.pixels.chunks(3).all(|p| p == [64, 255, 0]));
    }

    #[test]
    fn zero_dimensions_rejected() {
        assert!(render_heatmap(&constant(0.0, 3, 10), 0, 37).is_err());
    }

    #[test]
    fn bilinear_identity_when_sizes_match() {
        let v: Vec<f64> = (0..12).map(f64::from).collect();
        assert_eq!(resample_bilinear(&v, 3, 4, 3, 4), v);
    }

    #[test]
    fn bilinear_upsample_of_ramp_is_linear_inside() {
        // a column ramp 0..=1 over 2 samples; interior outputs stay in range
        let out = resample_bilinear(&[0.0, 1.0, 0.0, 1.0], 2, 2, 2, 4);
        assert_eq!(&out[..4], &[0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn png_round_trip() {
        let m = EkmMatrix {
            rows: 3,
            cols: 5,
            values: (0..15).map(|i| i as f64 / 7.0 - 1.0).collect(),
            window_start_peak: 0,
            subject_id: "s".into(),
        };
        let img = render_heatmap(&m, 25, 37).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.png");
        img.write_png(&p).unwrap();
        let back = EkmImage::read_png(&p, "s").unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn colormap_central_segment_is_monotone_in_red_minus_blue() {
        // Between the cyan and yellow anchors red never falls and blue never rises.
        let mut prev = i32::MIN;
        for k in 0..=1000 {
            let t = 0.25 + 0.5 * k as f64 / 1000.0;
            let [r, _, b] = colormap(t);
            let d = i32::from(r) - i32::from(b);
            assert!(d >= prev, "t={t}");
            prev = d;
        }
    }

    proptest! {
        #[test]
        fn rendering_is_deterministic(vals in prop::collection::vec(-1.0f64..=1.0, 3 * 20)) {
            let m = EkmMatrix { rows: 3, cols: 20, values: vals, window_start_peak: 0, subject_id: "s".into() };
            let a = render_heatmap(&m, 25, 37).unwrap();
            let b = render_heatmap(&m, 25, 37).unwrap();
            prop_assert_eq!(a.to_png().unwrap(), b.to_png().unwrap());
        }
    }
}
