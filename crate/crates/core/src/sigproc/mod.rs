//! QRS detection and the conditioning steps that precede EKM slicing:
//! band-pass + R-peaks, linear detrend, min-max normalization and the
//! mean R-R distance.

pub mod filter;
pub mod pan_tompkins;

use thiserror::Error;

pub use pan_tompkins::{pan_tompkins, Detection, PanTompkins};

use crate::wfdb::EcgRecord;

#[derive(Debug, Error, PartialEq)]
pub enum SigprocError {
    #[error("signal too short: {len} samples, need at least {min}")]
    TooShort { len: usize, min: usize },
    #[error("sampling rate {0} Hz is below the detector minimum")]
    SamplingRateTooLow(f64),
    #[error("no QRS complexes found")]
    NoPeaksFound,
    #[error("signal is constant")]
    ConstantSignal,
    #[error("need at least 2 R-peaks, found {0}")]
    TooFewPeaks(usize),
}

/// Strictly increasing R-peak sample indices.
#[derive(Debug, Clone, PartialEq)]
pub struct RPeakList {
    pub indices: Vec<usize>,
    pub fs: f64,
}

impl RPeakList {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn times_secs(&self) -> Vec<f64> {
        self.indices.iter().map(|&i| i as f64 / self.fs).collect()
    }
}

/// Detrended, [0, 1]-normalized signal plus its mean R-R distance.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionedEcg {
    pub norm_samples: Vec<f64>,
    pub fs: f64,
    /// Mean R-R distance in samples.
    pub mu: f64,
}

/// Subtract the least-squares line fitted over the whole signal.
pub fn detrend(signal: &[f64]) -> Result<Vec<f64>, SigprocError> {
    let n = signal.len();
    if n < 2 {
        return Err(SigprocError::TooShort { len: n, min: 2 });
    }
    // centered abscissa keeps the normal equations well conditioned
    let x_mean = (n as f64 - 1.0) / 2.0;
    let y_mean = signal.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, &y) in signal.iter().enumerate() {
        let dx = i as f64 - x_mean;
        sxy += dx * (y - y_mean);
        sxx += dx * dx;
    }
    let slope = sxy / sxx;
    Ok(signal
        .iter()
        .enumerate()
        .map(|(i, &y)| y - y_mean - slope * (i as f64 - x_mean))
        .collect())
}

/// Min-max scaling onto [0, 1].
pub fn normalize(signal: &[f64]) -> Result<Vec<f64>, SigprocError> {
    let (lo, hi) = signal
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(hi > lo) {
        return Err(SigprocError::ConstantSignal);
    }
    let range = hi - lo;
    Ok(signal.iter().map(|&v| (v - lo) / range).collect())
}

/// Mean distance in samples between consecutive R-peaks.
pub fn mean_peak_distance(peaks: &RPeakList) -> Result<f64, SigprocError> {
    let idx = &peaks.indices;
    if idx.len() < 2 {
        return Err(SigprocError::TooFewPeaks(idx.len()));
    }
    let total: usize = idx.windows(2).map(|w| w[1] - w[0]).sum();
    Ok(total as f64 / (idx.len() - 1) as f64)
}

/// Run the full conditioning chain on one record: detect on the raw signal,
/// then detrend and normalize the band-passed output.
pub fn condition(
    record: &EcgRecord,
    detector: &PanTompkins,
) -> Result<(ConditionedEcg, RPeakList), SigprocError> {
    let Detection { filtered, peaks } = detector.detect(record)?;
    let mu = mean_peak_distance(&peaks)?;
    let norm_samples = normalize(&detrend(&filtered)?)?;
    Ok((
        ConditionedEcg {
            norm_samples,
            fs: record.fs,
            mu,
        },
        peaks,
    ))
}

/// Detection counts against reference peaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PeakMatch {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

impl PeakMatch {
    pub fn sensitivity(&self) -> f64 {
        self.true_positives as f64 / (self.true_positives + self.false_negatives).max(1) as f64
    }

    pub fn positive_predictivity(&self) -> f64 {
        self.true_positives as f64 / (self.true_positives + self.false_positives).max(1) as f64
    }
}

/// One-to-one matching of sorted detections to sorted reference peaks
/// within `tolerance` samples, pairing each reference with the nearest
/// unused detection.
pub fn match_peaks(detected: &[usize], reference: &[usize], tolerance: usize) -> PeakMatch {
    let mut used = vec![false; detected.len()];
    let mut tp = 0;
    let mut lo = 0;
    for &r in reference {
        while lo < detected.len() && detected[lo] + tolerance < r {
            lo += 1;
        }
        let best = (lo..detected.len())
            .take_while(|&i| detected[i] <= r + tolerance)
            .filter(|&i| !used[i])
            .min_by_key(|&i| detected[i].abs_diff(r));
        if let Some(i) = best {
            used[i] = true;
            tp += 1;
        }
    }
    PeakMatch {
        true_positives: tp,
        false_positives: detected.len() - tp,
        false_negatives: reference.len() - tp,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn peak_matching_is_one_to_one() {
        let m = match_peaks(&[98, 103, 300, 520], &[100, 310, 400], 10);
        assert_eq!(m, PeakMatch { true_positives: 2, false_positives: 2, false_negatives: 1 });
        assert_eq!(match_peaks(&[], &[5], 3).sensitivity(), 0.0);
        assert_eq!(match_peaks(&[5, 6], &[5], 3).true_positives, 1);
    }
    use proptest::prelude::*;

    /// Slope and intercept of the least-squares line via the raw normal
    /// equations on the uncentered abscissa.
    fn ls_fit(y: &[f64]) -> (f64, f64) {
        let n = y.len() as f64;
        let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
        for (i, &v) in y.iter().enumerate() {
            let x = i as f64;
            sx += x;
            sy += v;
            sxx += x * x;
            sxy += x * v;
        }
        let det = n * sxx - sx * sx;
        ((n * sxy - sx * sy) / det, (sxx * sy - sx * sxy) / det)
    }

    #[test]
    fn detrend_removes_pure_line() {
        let out = detrend(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(out.iter().all(|v| v.abs() < 1e-12), "{out:?}");
    }

    #[test]
    fn detrend_constant_is_zero() {
        let out = detrend(&[7.5; 10]).unwrap();
        assert!(out.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn detrend_rejects_single_sample() {
        assert_eq!(detrend(&[1.0]), Err(SigprocError::TooShort { len: 1, min: 2 }));
    }

    #[test]
    fn detrend_sine_plus_line_matches_normal_equations() {
        let n = 1000;
        let y: Vec<f64> = (0..n)
            .map(|i| (i as f64 * 0.05).sin() + 0.01 * i as f64 - 3.0)
            .collect();
        let (m, c) = ls_fit(&y);
        let expected: Vec<f64> = y.iter().enumerate().map(|(i, v)| v - (m * i as f64 + c)).collect();
        let got = detrend(&y).unwrap();
        for (g, e) in got.iter().zip(&expected) {
            assert!((g - e).abs() < 1e-9);
        }
        let (m2, c2) = ls_fit(&got);
        assert!(m2.abs() < 1e-12 && c2.abs() < 1e-9);
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize(&[-1.0, 0.0, 1.0]).unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(normalize(&[5.0, 5.0, 5.0]), Err(SigprocError::ConstantSignal));
    }

    #[test]
    fn mean_peak_distance_examples() {
        let pk = |v: Vec<usize>| RPeakList { indices: v, fs: 1.0 };
        assert_eq!(mean_peak_distance(&pk(vec![100, 200, 300])).unwrap(), 100.0);
        assert_eq!(mean_peak_distance(&pk(vec![0, 100, 300])).unwrap(), 150.0);
        assert_eq!(mean_peak_distance(&pk(vec![4])), Err(SigprocError::TooFewPeaks(1)));
    }

    proptest! {
        #[test]
        fn normalize_hits_exact_bounds(v in prop::collection::vec(-1e6f64..1e6, 2..200)) {
            prop_assume!(v.iter().any(|&x| x != v[0]));
            let out = normalize(&v).unwrap();
            let lo = out.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(lo, 0.0);
            prop_assert_eq!(hi, 1.0);
        }

        #[test]
        fn detrend_then_normalize_stays_in_unit_interval(
            v in prop::collection::vec(-1e3f64..1e3, 3..200)
        ) {
            let d = detrend(&v).unwrap();
            if let Ok(out) = normalize(&d) {
                prop_assert!(out.iter().all(|&x| (0.0..=1.0).contains(&x)));
            }
        }

        #[test]
        fn mean_distance_is_telescoping(gaps in prop::collection::vec(1usize..500, 1..100), start in 0usize..1000) {
            let mut idx = vec![start];
            for g in &gaps {
                idx.push(idx.last().unwrap() + g);
            }
            let n = idx.len();
            let oracle = (idx[n - 1] - idx[0]) as f64 / (n - 1) as f64;
            let got = mean_peak_distance(&RPeakList { indices: idx, fs: 250.0 }).unwrap();
            prop_assert_eq!(got, oracle);
        }
    }
}
