//! Pan-Tompkins QRS detection.
//!
//! Stages: band-pass, five-point derivative, squaring, 150 ms moving-window
//! integration, then dual adaptive thresholds with search-back, a 200 ms
//! refractory period and a slope test for T-waves inside 360 ms. Detected
//! QRS complexes are placed on the band-passed maximum within ±50 ms.
//!
//! The detector runs offline, so every stage is centered and the output
//! needs no delay correction.

use super::filter::{butterworth_bandpass, filtfilt, pan_tompkins_bandpass_200};
use super::{RPeakList, SigprocError};
use crate::wfdb::EcgRecord;

pub const MIN_FS: f64 = 100.0;
pub const MIN_DURATION_SECS: f64 = 2.0;

const REFRACTORY_SECS: f64 = 0.200;
const T_WAVE_SECS: f64 = 0.360;
const INTEGRATION_SECS: f64 = 0.150;
const REFINE_SECS: f64 = 0.050;
const LEARNING_SECS: f64 = 2.0;
const SEARCH_BACK_RR: f64 = 1.66;
const RR_HISTORY: usize = 8;

#[derive(Debug, Clone, Copy)]
pub struct PanTompkins {
    /// Return an empty peak list instead of `NoPeaksFound`.
    pub allow_empty: bool,
    pub low_hz: f64,
    pub high_hz: f64,
    pub butterworth_order: usize,
}

impl Default for PanTompkins {
    fn default() -> Self {
        Self {
            allow_empty: false,
            low_hz: 5.0,
            high_hz: 15.0,
            butterworth_order: 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Detection {
    /// Band-passed signal, aligned with the input.
    pub filtered: Vec<f64>,
    pub peaks: RPeakList,
}

/// Intermediate signals, exposed for inspection and plotting.
#[derive(Debug, Clone)]
pub struct DetectorTrace {
    pub filtered: Vec<f64>,
    pub derivative: Vec<f64>,
    pub integrated: Vec<f64>,
}

impl PanTompkins {
    pub fn allow_empty(mut self, allow: bool) -> Self {
        self.allow_empty = allow;
        self
    }

    pub fn bandpass(&self, x: &[f64], fs: f64) -> Vec<f64> {
        if fs == 200.0 {
            pan_tompkins_bandpass_200(x)
        } else {
            let sections = butterworth_bandpass(self.butterworth_order, self.low_hz, self.high_hz, fs);
            filtfilt(&sections, x, fs.ceil() as usize)
        }
    }

    pub fn trace(&self, x: &[f64], fs: f64) -> DetectorTrace {
        let filtered = self.bandpass(x, fs);
        let derivative = five_point_derivative(&filtered, fs);
        let squared: Vec<f64> = derivative.iter().map(|d| d * d).collect();
        let width = ((INTEGRATION_SECS * fs).round() as usize).max(1);
        let integrated = moving_average(&squared, width);
        DetectorTrace {
            filtered,
            derivative,
            integrated,
        }
    }

    pub fn detect(&self, record: &EcgRecord) -> Result<Detection, SigprocError> {
        let fs = record.fs;
        if fs < MIN_FS {
            return Err(SigprocError::SamplingRateTooLow(fs));
        }
        let n = record.samples.len();
        if (n as f64) < MIN_DURATION_SECS * fs {
            return Err(SigprocError::TooShort {
                len: n,
                min: (MIN_DURATION_SECS * fs).ceil() as usize,
            });
        }

        let trace = self.trace(&record.samples, fs);
        let qrs = threshold_qrs(&trace, fs);
        let indices = place_r_peaks(&qrs, &trace.filtered, fs);
        if indices.is_empty() && !self.allow_empty {
            return Err(SigprocError::NoPeaksFound);
        }
        Ok(Detection {
            filtered: trace.filtered,
            peaks: RPeakList { indices, fs },
        })
    }
}

/// Detect R-peaks with the default detector configuration.
pub fn pan_tompkins(record: &EcgRecord) -> Result<Detection, SigprocError> {
    PanTompkins::default().detect(record)
}

/// `(-x[n-2] - 2x[n-1] + 2x[n+1] + x[n+2]) * fs / 8`, zero at the edges.
pub fn five_point_derivative(x: &[f64], fs: f64) -> Vec<f64> {
    let n = x.len();
    let mut d = vec![0.0; n];
    for i in 2..n.saturating_sub(2) {
        d[i] = (2.0 * x[i + 1] + x[i + 2] - x[i - 2] - 2.0 * x[i - 1]) * fs / 8.0;
    }
    d
}

/// Centered moving average with a `width`-sample window.
pub fn moving_average(x: &[f64], width: usize) -> Vec<f64> {
    let n = x.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for &v in x {
        acc += v;
        prefix.push(acc);
    }
    let half = width / 2;
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + width - half).min(n);
            // clamp: prefix differences can dip below zero by rounding
            ((prefix[hi] - prefix[lo]) / width as f64).max(0.0)
        })
        .collect()
}

/// Local maxima of `x` at least `distance` samples apart, keeping the
/// higher one of any close pair. Returned in time order.
fn separated_maxima(x: &[f64], distance: usize) -> Vec<usize> {
    let n = x.len();
    let mut maxima = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if x[i] > x[i - 1] {
            // walk across plateaus
            let mut j = i;
            while j + 1 < n && x[j + 1] == x[i] {
                j += 1;
            }
            if j + 1 < n && x[j + 1] < x[i] {
                maxima.push(i);
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }

    let mut by_height = maxima.clone();
    by_height.sort_by(|&a, &b| x[b].total_cmp(&x[a]).then(a.cmp(&b)));
    let mut kept = vec![false; maxima.len()];
    let mut taken: Vec<usize> = Vec::new();
    for idx in by_height {
        if taken.iter().all(|&t| t.abs_diff(idx) >= distance) {
            taken.push(idx);
        }
    }
    taken.sort_unstable();
    for (k, m) in maxima.iter().enumerate() {
        kept[k] = taken.binary_search(m).is_ok();
    }
    maxima
        .into_iter()
        .zip(kept)
        .filter_map(|(m, k)| k.then_some(m))
        .collect()
}

struct Thresholds {
    signal: f64,
    noise: f64,
}

impl Thresholds {
    fn primary(&self) -> f64 {
        self.noise + 0.25 * (self.signal - self.noise)
    }

    fn secondary(&self) -> f64 {
        0.5 * self.primary()
    }
}

fn max_abs(x: &[f64], center: usize, half: usize) -> f64 {
    let lo = center.saturating_sub(half);
    let hi = (center + half + 1).min(x.len());
    x[lo..hi].iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Adaptive-threshold classification of integrated-signal peaks.
/// Returns the accepted QRS locations on the integrated signal.
fn threshold_qrs(trace: &DetectorTrace, fs: f64) -> Vec<usize> {
    let mwi = &trace.integrated;
    let refractory = (REFRACTORY_SECS * fs).ceil() as usize;
    let t_wave = (T_WAVE_SECS * fs).round() as usize;
    let slope_half = ((INTEGRATION_SECS * fs / 2.0).round() as usize).max(1);

    let candidates = separated_maxima(mwi, refractory);
    if candidates.is_empty() {
        return Vec::new();
    }

    let learn = ((LEARNING_SECS * fs) as usize).min(mwi.len());
    let learn_max = mwi[..learn].iter().cloned().fold(0.0, f64::max);
    let learn_mean = mwi[..learn].iter().sum::<f64>() / learn as f64;
    if learn_max <= 0.0 && mwi.iter().all(|&v| v <= 0.0) {
        return Vec::new();
    }
    let mut th = Thresholds {
        signal: learn_max / 3.0,
        noise: learn_mean / 2.0,
    };

    let mut qrs: Vec<usize> = Vec::new();
    let mut qrs_slope: Vec<f64> = Vec::new();
    let mut is_qrs = vec![false; candidates.len()];
    let mut rr: Vec<usize> = Vec::new();
    let mut last_candidate = 0usize;

    let accept = |q: &mut Vec<usize>, slopes: &mut Vec<f64>, rr: &mut Vec<usize>, at: usize| {
        if let Some(&prev) = q.last() {
            rr.push(at - prev);
            if rr.len() > RR_HISTORY {
                rr.remove(0);
            }
        }
        q.push(at);
        slopes.push(max_abs(&trace.derivative, at, slope_half));
    };

    for (ci, &c) in candidates.iter().enumerate() {
        // search back for a missed beat when the gap grows too long
        while let (Some(&last), false) = (qrs.last(), rr.is_empty()) {
            let rr_avg = rr.iter().sum::<usize>() as f64 / rr.len() as f64;
            if ((c - last) as f64) <= SEARCH_BACK_RR * rr_avg {
                break;
            }
            let best = (last_candidate..ci)
                .filter(|&k| {
                    !is_qrs[k]
                        && candidates[k] >= last + refractory
                        && c >= candidates[k] + refractory
                        && mwi[candidates[k]] > th.secondary()
                })
                .max_by(|&a, &b| mwi[candidates[a]].total_cmp(&mwi[candidates[b]]).then(b.cmp(&a)));
            let Some(k) = best else { break };
            is_qrs[k] = true;
            last_candidate = k + 1;
            th.signal = 0.25 * mwi[candidates[k]] + 0.75 * th.signal;
            accept(&mut qrs, &mut qrs_slope, &mut rr, candidates[k]);
        }

        let peak = mwi[c];
        if peak > th.primary() {
            let t_wave_suspect = qrs.last().is_some_and(|&last| c - last < t_wave);
            let slope = max_abs(&trace.derivative, c, slope_half);
            if t_wave_suspect && slope < 0.5 * qrs_slope.last().copied().unwrap_or(0.0) {
                th.noise = 0.125 * peak + 0.875 * th.noise;
            } else {
                is_qrs[ci] = true;
                last_candidate = ci + 1;
                th.signal = 0.125 * peak + 0.875 * th.signal;
                accept(&mut qrs, &mut qrs_slope, &mut rr, c);
            }
        } else {
            th.noise = 0.125 * peak + 0.875 * th.noise;
        }
    }
    qrs
}

fn argmax_in(x: &[f64], lo: usize, hi: usize) -> usize {
    (lo..hi)
        .max_by(|&a, &b| x[a].total_cmp(&x[b]).then(b.cmp(&a)))
        .unwrap_or(lo)
}

/// Move each integrated-signal detection onto the band-passed R maximum,
/// then enforce the refractory gap on the final positions.
fn place_r_peaks(qrs: &[usize], filtered: &[f64], fs: f64) -> Vec<usize> {
    let n = filtered.len();
    let search = ((INTEGRATION_SECS * fs / 2.0).round() as usize).max(1);
    let refine = ((REFINE_SECS * fs).round() as usize).max(1);
    let refractory = REFRACTORY_SECS * fs;

    let mut peaks: Vec<usize> = Vec::with_capacity(qrs.len());
    for &q in qrs {
        let coarse = argmax_in(filtered, q.saturating_sub(search), (q + search + 1).min(n));
        let r = argmax_in(filtered, coarse.saturating_sub(refine), (coarse + refine + 1).min(n));
        match peaks.last_mut() {
            Some(prev) if ((r as f64) - (*prev as f64)) < refractory => {
                if r > *prev && filtered[r] > filtered[*prev] {
                    *prev = r;
                }
            }
            _ => peaks.push(r),
        }
    }
    peaks
}
