//! Electrocardiomatrix (EKM) construction.
//!
//! An EKM stacks `bpf` consecutive R-peak-aligned heartbeat segments as the
//! rows of a matrix. Each segment spans `floor(alpha_i * mu)` samples before
//! its R-peak and `floor(alpha_e * mu)` samples from the peak onward, where
//! `mu` is the record's mean R-R distance. Matrices are standardized to
//! [-1, 1] and rendered as fixed-size RGB heatmaps.

pub mod generate;
pub mod render;

use std::path::PathBuf;

use thiserror::Error;

pub use generate::{
    generate_ekms, prepare_record, read_manifest, train_count, write_dataset, DatasetManifest,
    GeneratedDataset, GeneratedEkm, GenerationConfig, ManifestEntry, PreparedRecord, Split,
    SubjectStats,
};
pub use render::{colormap, render_heatmap, value_color, EkmImage};

use crate::sigproc::{ConditionedEcg, RPeakList};

#[derive(Debug, Error)]
pub enum EkmError {
    #[error("invalid EKM parameters: {0}")]
    InvalidParams(String),
    #[error("window at peak {start} does not fit the record")]
    WindowOutOfBounds { start: usize },
    #[error("EKM matrix is constant")]
    ConstantMatrix,
    #[error("invalid raster dimensions {height}x{width}")]
    InvalidDimensions { height: usize, width: usize },
    #[error("image error: {0}")]
    Image(String),
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EkmParams {
    /// Beats per frame.
    pub bpf: usize,
    /// Fraction of `mu` taken before each R-peak.
    pub alpha_i: f64,
    /// Fraction of `mu` taken after each R-peak.
    pub alpha_e: f64,
}

impl Default for EkmParams {
    fn default() -> Self {
        Self {
            bpf: 3,
            alpha_i: 0.2,
            alpha_e: 0.3,
        }
    }
}

impl EkmParams {
    pub fn new(bpf: usize, alpha_i: f64, alpha_e: f64) -> Result<Self, EkmError> {
        let p = Self { bpf, alpha_i, alpha_e };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), EkmError> {
        let frac = |a: f64| a > 0.0 && a < 1.0;
        if self.bpf < 2 {
            return Err(EkmError::InvalidParams(format!("bpf must be at least 2, got {}", self.bpf)));
        }
        if !frac(self.alpha_i) || !frac(self.alpha_e) {
            return Err(EkmError::InvalidParams(format!(
                "alpha_i and alpha_e must lie in (0, 1), got {} and {}",
                self.alpha_i, self.alpha_e
            )));
        }
        if self.alpha_i + self.alpha_e > 1.0 {
            return Err(EkmError::InvalidParams(format!(
                "alpha_i + alpha_e must not exceed 1, got {}",
                self.alpha_i + self.alpha_e
            )));
        }
        Ok(())
    }

    /// Samples before and after the R-peak for a given mean R-R distance.
    pub fn segment_bounds(&self, mu: f64) -> (usize, usize) {
        (floor_len(self.alpha_i * mu), floor_len(self.alpha_e * mu))
    }

    pub fn segment_len(&self, mu: f64) -> usize {
        let (before, after) = self.segment_bounds(mu);
        before + after
    }
}

fn floor_len(x: f64) -> usize {
    (x + 1e-9).floor().max(0.0) as usize
}

/// `rows x cols` matrix, one heartbeat per row.
#[derive(Debug, Clone, PartialEq)]
pub struct EkmMatrix {
    pub rows: usize,
    pub cols: usize,
    /// Row-major values.
    pub values: Vec<f64>,
    pub window_start_peak: usize,
    pub subject_id: String,
}

impl EkmMatrix {
    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

/// Slice the `bpf` peaks starting at `window_start_peak` into an EKM.
pub fn build_ekm(
    ecg: &ConditionedEcg,
    peaks: &RPeakList,
    window_start_peak: usize,
    params: &EkmParams,
    subject_id: &str,
) -> Result<EkmMatrix, EkmError> {
    let out_of_bounds = || EkmError::WindowOutOfBounds {
        start: window_start_peak,
    };
    let window = peaks
        .indices
        .get(window_start_peak..window_start_peak + params.bpf)
        .ok_or_else(out_of_bounds)?;
    let (before, after) = params.segment_bounds(ecg.mu);
    let cols = before + after;
    if cols == 0 {
        return Err(out_of_bounds());
    }
    let signal = &ecg.norm_samples;
    let mut values = Vec::with_capacity(params.bpf * cols);
    for &p in window {
        if p < before || p + after > signal.len() {
            return Err(out_of_bounds());
        }
        values.extend_from_slice(&signal[p - before..p + after]);
    }
    Ok(EkmMatrix {
        rows: params.bpf,
        cols,
        values,
        window_start_peak,
        subject_id: subject_id.to_string(),
    })
}

/// Affine map onto [-1, 1]. A matrix already spanning exactly [-1, 1] is
/// returned unchanged.
pub fn standardize(matrix: &EkmMatrix) -> Result<EkmMatrix, EkmError> {
    let (lo, hi) = matrix.min_max();
    if !(hi > lo) {
        return Err(EkmError::ConstantMatrix);
    }
    if lo == -1.0 && hi == 1.0 {
        return Ok(matrix.clone());
    }
    let range = hi - lo;
    Ok(EkmMatrix {
        values: matrix
            .values
            .iter()
            .map(|&v| 2.0 * ((v - lo) / range) - 1.0)
            .collect(),
        ..matrix.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp_ecg(n: usize, mu: f64) -> ConditionedEcg {
        ConditionedEcg {
            norm_samples: (0..n).map(|i| i as f64 / n as f64).collect(),
            fs: 250.0,
            mu,
        }
    }

    fn peaks(v: &[usize]) -> RPeakList {
        RPeakList {
            indices: v.to_vec(),
            fs: 250.0,
        }
    }

    #[test]
    fn params_validation() {
        assert!(EkmParams::new(3, 0.2, 0.3).is_ok());
        assert!(EkmParams::new(1, 0.2, 0.3).is_err());
        assert!(EkmParams::new(3, 0.8, 0.8).is_err());
        assert!(EkmParams::new(3, 0.0, 0.3).is_err());
    }

    #[test]
    fn builds_three_by_hundred() {
        let ecg = ramp_ecg(2000, 200.0);
        let m = build_ekm(&ecg, &peaks(&[500, 700, 900]), 0, &EkmParams::default(), "s").unwrap();
        assert_eq!((m.rows, m.cols), (3, 100));
        assert_eq!(m.row(0), &ecg.norm_samples[460..560]);
        assert_eq!(m.row(2), &ecg.norm_samples[860..960]);
    }

    #[test]
    fn segment_lengths_floor_each_side() {
        let p = EkmParams::default();
        assert_eq!(p.segment_bounds(200.0), (40, 60));
        assert_eq!(p.segment_bounds(333.0), (66, 99));
        assert_eq!(p.segment_len(128.7), 25 + 38);
    }

    #[test]
    fn early_peak_is_out_of_bounds() {
        let ecg = ramp_ecg(2000, 200.0);
        let err = build_ekm(&ecg, &peaks(&[10, 210, 410]), 0, &EkmParams::default(), "s").unwrap_err();
        assert!(matches!(err, EkmError::WindowOutOfBounds { start: 0 }));
    }

    #[test]
    fn late_peak_and_short_peak_list_are_out_of_bounds() {
        let ecg = ramp_ecg(1000, 200.0);
        assert!(build_ekm(&ecg, &peaks(&[500, 700, 960]), 0, &EkmParams::default(), "s").is_err());
        assert!(build_ekm(&ecg, &peaks(&[500, 700]), 0, &EkmParams::default(), "s").is_err());
    }

    #[test]
    fn rows_are_aligned_on_r_peaks() {
        // clean synthetic beats: a narrow bump at every peak
        let peaks_at = [300usize, 510, 700, 905, 1100];
        let mut sig = vec![0.0; 1400];
        for &p in &peaks_at {
            for (i, v) in sig.iter_mut().enumerate() {
                let d = i as f64 - p as f64;
                *v += (-d * d / 18.0).exp();
            }
        }
        let ecg = ConditionedEcg { norm_samples: sig, fs: 250.0, mu: 200.0 };
        let params = EkmParams::new(5, 0.2, 0.3).unwrap();
        let m = build_ekm(&ecg, &peaks(&peaks_at), 0, &params, "s").unwrap();
        for r in 0..m.rows {
            let row = m.row(r);
            let argmax = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert_eq!(argmax, 40, "row {r}");
        }
    }

    fn matrix(values: Vec<f64>, rows: usize) -> EkmMatrix {
        let cols = values.len() / rows;
        EkmMatrix { rows, cols, values, window_start_peak: 0, subject_id: "s".into() }
    }

    #[test]
    fn standardize_examples() {
        let m = standardize(&matrix(vec![0.0, 0.5, 1.0], 1)).unwrap();
        assert_eq!(m.values, vec![-1.0, 0.0, 1.0]);
        let fixed = matrix(vec![-1.0, 0.3, 1.0, -0.2], 2);
        assert_eq!(standardize(&fixed).unwrap(), fixed);
        assert!(matches!(standardize(&matrix(vec![0.4; 6], 2)), Err(EkmError::ConstantMatrix)));
    }

    proptest! {
        #[test]
        fn standardize_is_idempotent_with_exact_bounds(v in prop::collection::vec(-5.0f64..5.0, 6..60)) {
            let n = v.len() / 3 * 3;
            let m = matrix(v[..n].to_vec(), 3);
            prop_assume!(standardize(&m).is_ok());
            let once = standardize(&m).unwrap();
            let (lo, hi) = once.min_max();
            prop_assert_eq!((lo, hi), (-1.0, 1.0));
            prop_assert_eq!(standardize(&once).unwrap(), once);
        }

        #[test]
        fn shape_law(mu in 50.0f64..400.0, bpf in 2usize..8, ai in 0.05f64..0.45, ae in 0.05f64..0.5) {
            let params = EkmParams::new(bpf, ai, ae).unwrap();
            let n = 10_000;
            let ecg = ramp_ecg(n, mu);
            let pk: Vec<usize> = (0..bpf).map(|k| 1000 + k * mu as usize).collect();
            let m = build_ekm(&ecg, &peaks(&pk), 0, &params, "s").unwrap();
            prop_assert_eq!(m.rows, bpf);
            prop_assert_eq!(m.cols, (ai * mu + 1e-9).floor() as usize + (ae * mu + 1e-9).floor() as usize);
            prop_assert_eq!(m.values.len(), m.rows * m.cols);
        }
    }
}
