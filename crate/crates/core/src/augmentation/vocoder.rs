//! Phase-vocoder time stretching and pitch shifting.

use std::f64::consts::PI;

use rustfft::{num_complex::Complex, FftPlanner};

use crate::audio_io::Resampler;

const N_FFT: usize = 1024;
const HOP: usize = 256;

fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Changes duration by `1 / rate` without changing pitch.
pub fn time_stretch(x: &[f32], rate: f64) -> Vec<f32> {
    if x.is_empty() {
        return Vec::new();
    }
    let target_len = ((x.len() as f64) / rate).round().max(1.0) as usize;
    let window = hann(N_FFT);
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(N_FFT);
    let ifft = planner.plan_fft_inverse(N_FFT);
    let bins = N_FFT / 2 + 1;

    // Analysis: zero-padded by half a window on both sides.
    let pad = N_FFT / 2;
    let mut padded = vec![0.0f64; x.len() + 2 * pad + N_FFT];
    for (p, &v) in padded[pad..].iter_mut().zip(x) {
        *p = v as f64;
    }
    let n_frames = x.len() / HOP + 1;
    let frames: Vec<Vec<Complex<f64>>> = (0..n_frames)
        .map(|f| {
            let start = f * HOP;
            let mut buf: Vec<Complex<f64>> = (0..N_FFT)
                .map(|i| Complex::new(padded[start + i] * window[i], 0.0))
                .collect();
            fft.process(&mut buf);
            buf.truncate(bins);
            buf
        })
        .collect();

    let expected_advance: Vec<f64> = (0..bins)
        .map(|k| 2.0 * PI * k as f64 * HOP as f64 / N_FFT as f64)
        .collect();
    let out_frames = ((n_frames as f64) / rate).ceil() as usize;
    let mut phase: Vec<f64> = frames[0].iter().map(|c| c.arg()).collect();
    let mut out = vec![0.0f64; out_frames * HOP + N_FFT];
    let mut norm = vec![0.0f64; out.len()];
    let mut buf = vec![Complex::new(0.0, 0.0); N_FFT];

    for o in 0..out_frames {
        let t = o as f64 * rate;
        let i0 = (t.floor() as usize).min(n_frames - 1);
        let i1 = (i0 + 1).min(n_frames - 1);
        let frac = t - t.floor();
        for k in 0..bins {
            let mag = (1.0 - frac) * frames[i0][k].norm() + frac * frames[i1][k].norm();
            buf[k] = Complex::from_polar(mag, phase[k]);
            if k > 0 && k < N_FFT / 2 {
                buf[N_FFT - k] = buf[k].conj();
            }
            let mut dphi = frames[i1][k].arg() - frames[i0][k].arg() - expected_advance[k];
            dphi -= 2.0 * PI * (dphi / (2.0 * PI)).round();
            phase[k] += expected_advance[k] + dphi;
        }
        ifft.process(&mut buf);
        let start = o * HOP;
        for i in 0..N_FFT {
            out[start + i] += buf[i].re / N_FFT as f64 * window[i];
            norm[start + i] += window[i] * window[i];
        }
    }
    (0..target_len)
        .map(|i| {
            let j = i + pad;
            if j < out.len() && norm[j] > 1e-6 {
                (out[j] / norm[j]) as f32
            } else {
                0.0
            }
        })
        .collect()
}

/// Shifts pitch by `semitones` while keeping the length.
pub fn pitch_shift(x: &[f32], semitones: f64) -> Vec<f32> {
    if x.is_empty() || semitones == 0.0 {
        return x.to_vec();
    }
    let factor = 2f64.powf(semitones / 12.0);
    let stretched = time_stretch(x, 1.0 / factor);
    // Playing the stretched signal `factor` times faster restores the length.
    let from = (16_000.0 * factor).round() as u32;
    let mut out = Resampler::new(from, 16_000).process(&stretched);
    out.resize(x.len(), 0.0);
    out
}
