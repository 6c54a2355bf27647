//! Band-pass filters used ahead of QRS detection.

use std::f64::consts::PI;

use num_complex::Complex64;

/// Second-order section, `b0 + b1 z^-1 + b2 z^-2 / 1 + a1 z^-1 + a2 z^-2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    /// Complex response at normalized angular frequency `omega` (rad/sample).
    pub fn response(&self, omega: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -omega);
        let z2 = z1 * z1;
        (self.b[0] + z1 * self.b[1] + z2 * self.b[2]) / (1.0 + z1 * self.a[0] + z2 * self.a[1])
    }
}

/// Digital Butterworth band-pass of prototype `order`, designed with the
/// bilinear transform and frequency prewarping. Returns `order` sections.
pub fn butterworth_bandpass(order: usize, low_hz: f64, high_hz: f64, fs: f64) -> Vec<Biquad> {
    assert!(order >= 1, "filter order must be positive");
    assert!(
        0.0 < low_hz && low_hz < high_hz && high_hz < fs / 2.0,
        "band edges must satisfy 0 < low < high < fs/2"
    );
    let k2 = 2.0 * fs;
    let w1 = k2 * (PI * low_hz / fs).tan();
    let w2 = k2 * (PI * high_hz / fs).tan();
    let bw = w2 - w1;
    let w0_sq = w1 * w2;

    let n = order as f64;
    let mut analog_poles = Vec::with_capacity(2 * order);
    for k in 0..order {
        let theta = PI * (2.0 * k as f64 + n + 1.0) / (2.0 * n);
        let p = Complex64::from_polar(1.0, theta);
        let half = p * (bw / 2.0);
        let disc = (half * half - w0_sq).sqrt();
        analog_poles.push(half + disc);
        analog_poles.push(half - disc);
    }

    // Analog zeros: `order` at s = 0, the rest at infinity; they map to
    // z = +1 and z = -1 respectively.
    let mut gain = Complex64::new(bw.powi(order as i32), 0.0);
    gain *= Complex64::new(k2.powi(order as i32), 0.0);
    let digital_poles: Vec<Complex64> = analog_poles
        .iter()
        .map(|&p| {
            gain /= k2 - p;
            (k2 + p) / (k2 - p)
        })
        .collect();
    let gain = gain.re;

    let mut upper: Vec<Complex64> = digital_poles.into_iter().filter(|p| p.im > 0.0).collect();
    upper.sort_by(|a, b| a.arg().total_cmp(&b.arg()));
    assert_eq!(upper.len(), order, "band-pass poles must come in conjugate pairs");

    upper
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let g = if i == 0 { gain } else { 1.0 };
            Biquad {
                b: [g, 0.0, -g],
                a: [-2.0 * p.re, p.norm_sqr()],
            }
        })
        .collect()
}

/// Magnitude response of a cascade at `freq_hz`.
pub fn cascade_gain(sections: &[Biquad], freq_hz: f64, fs: f64) -> f64 {
    let omega = 2.0 * PI * freq_hz / fs;
    sections
        .iter()
        .map(|s| s.response(omega))
        .fold(Complex64::new(1.0, 0.0), |acc, h| acc * h)
        .norm()
}

/// Causal filtering through the cascade (transposed direct form II).
pub fn sosfilt(sections: &[Biquad], x: &[f64]) -> Vec<f64> {
    let mut y = x.to_vec();
    for s in sections {
        let (mut z1, mut z2) = (0.0, 0.0);
        for v in y.iter_mut() {
            let input = *v;
            let out = s.b[0] * input + z1;
            z1 = s.b[1] * input - s.a[0] * out + z2;
            z2 = s.b[2] * input - s.a[1] * out;
            *v = out;
        }
    }
    y
}

/// Zero-phase filtering: forward and backward passes over an odd
/// reflection of the signal, `pad` samples on each side.
pub fn filtfilt(sections: &[Biquad], x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let pad = pad.min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

    let mut y = sosfilt(sections, &ext);
    y.reverse();
    let mut y = sosfilt(sections, &y);
    y.reverse();
    y.drain(..pad);
    y.truncate(n);
    y
}

/// Pan-Tompkins integer low-pass (cutoff ~11 Hz at 200 Hz), unit DC gain.
/// Linear phase, 5-sample delay.
const PT_LOWPASS: [f64; 11] = [1., 2., 3., 4., 5., 6., 5., 4., 3., 2., 1.];
const PT_LOWPASS_DELAY: usize = 5;
/// Pan-Tompkins high-pass: all-pass delay of 16 minus a 32-tap average.
const PT_HIGHPASS_DELAY: usize = 16;

fn fir(kernel: &[f64], x: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|n| {
            kernel
                .iter()
                .enumerate()
                .take(n + 1)
                .map(|(k, &h)| h * x[n - k])
                .sum()
        })
        .collect()
}

/// The original 200 Hz integer-coefficient band-pass (about 5-15 Hz),
/// shifted left by its group delay so the output lines up with `x`.
pub fn pan_tompkins_bandpass_200(x: &[f64]) -> Vec<f64> {
    let lp_kernel: Vec<f64> = PT_LOWPASS.iter().map(|v| v / 36.0).collect();
    let mut hp_kernel = vec![-1.0 / 32.0; 32];
    hp_kernel[PT_HIGHPASS_DELAY] += 1.0;

    let low = fir(&lp_kernel, x);
    let band = fir(&hp_kernel, &low);
    let delay = PT_LOWPASS_DELAY + PT_HIGHPASS_DELAY;
    let mut out: Vec<f64> = band.into_iter().skip(delay).collect();
    out.resize(x.len(), 0.0);
    out
}
