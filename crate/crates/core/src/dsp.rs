//! Small signal-processing helpers shared by the generator, the augmenter
//! and the feature extractors.

use std::f64::consts::PI;

use rustfft::{num_complex::Complex, FftPlanner};

/// RBJ-cookbook biquad section, direct form I.
#[derive(Debug, Clone, Copy)]
pub struct Biquad {
    b0: f64,
    b1: f64,
    b2: f64,
    a1: f64,
    a2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FilterKind {
    LowPass,
    HighPass,
    BandPass,
    BandStop,
    Peaking { gain_db: f64 },
    LowShelf { gain_db: f64 },
    HighShelf { gain_db: f64 },
}

impl Biquad {
    pub fn new(kind: FilterKind, freq_hz: f64, q: f64, sample_rate: f64) -> Self {
        let w0 = 2.0 * PI * (freq_hz / sample_rate).clamp(1e-5, 0.4999);
        let (sin, cos) = w0.sin_cos();
        let alpha = sin / (2.0 * q);
        let (b0, b1, b2, a0, a1, a2) = match kind {
            FilterKind::LowPass => {
                let b1 = 1.0 - cos;
                (b1 / 2.0, b1, b1 / 2.0, 1.0 + alpha, -2.0 * cos, 1.0 - alpha)
            }
            FilterKind::HighPass => {
                let b1 = -(1.0 + cos);
                (
                    -b1 / 2.0,
                    b1,
                    -b1 / 2.0,
                    1.0 + alpha,
                    -2.0 * cos,
                    1.0 - alpha,
                )
            }
            FilterKind::BandPass => (alpha, 0.0, -alpha, 1.0 + alpha, -2.0 * cos, 1.0 - alpha),
            FilterKind::BandStop => (1.0, -2.0 * cos, 1.0, 1.0 + alpha, -2.0 * cos, 1.0 - alpha),
            FilterKind::Peaking { gain_db } => {
                let a = 10f64.powf(gain_db / 40.0);
                (
                    1.0 + alpha * a,
                    -2.0 * cos,
                    1.0 - alpha * a,
                    1.0 + alpha / a,
                    -2.0 * cos,
                    1.0 - alpha / a,
                )
            }
            FilterKind::LowShelf { gain_db } => {
                let a = 10f64.powf(gain_db / 40.0);
                let sq = 2.0 * a.sqrt() * alpha;
                (
                    a * ((a + 1.0) - (a - 1.0) * cos + sq),
                    2.0 * a * ((a - 1.0) - (a + 1.0) * cos),
                    a * ((a + 1.0) - (a - 1.0) * cos - sq),
                    (a + 1.0) + (a - 1.0) * cos + sq,
                    -2.0 * ((a - 1.0) + (a + 1.0) * cos),
                    (a + 1.0) + (a - 1.0) * cos - sq,
                )
            }
            FilterKind::HighShelf { gain_db } => {
                let a = 10f64.powf(gain_db / 40.0);
                let sq = 2.0 * a.sqrt() * alpha;
                (
                    a * ((a + 1.0) + (a - 1.0) * cos + sq),
                    -2.0 * a * ((a - 1.0) + (a + 1.0) * cos),
                    a * ((a + 1.0) + (a - 1.0) * cos - sq),
                    (a + 1.0) - (a - 1.0) * cos + sq,
                    2.0 * ((a - 1.0) - (a + 1.0) * cos),
                    (a + 1.0) - (a - 1.0) * cos - sq,
                )
            }
        };
        Self {
            b0: b0 / a0,
            b1: b1 / a0,
            b2: b2 / a0,
            a1: a1 / a0,
            a2: a2 / a0,
        }
    }

    pub fn process(&self, input: &[f32]) -> Vec<f32> {
        let (mut x1, mut x2, mut y1, mut y2) = (0.0f64, 0.0, 0.0, 0.0);
        input
            .iter()
            .map(|&x| {
                let x = x as f64;
                let y = self.b0 * x + self.b1 * x1 + self.b2 * x2 - self.a1 * y1 - self.a2 * y2;
                (x2, x1, y2, y1) = (x1, x, y1, y);
                y as f32
            })
            .collect()
    }
}

pub fn rms(x: &[f32]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / x.len() as f64).sqrt()
}

pub fn power(x: &[f32]) -> f64 {
    rms(x).powi(2)
}

pub fn peak(x: &[f32]) -> f32 {
    x.iter().fold(0.0f32, |m, &v| m.max(v.abs()))
}

/// Magnitude spectrum of `x` (bins 0..=n/2), computed with a full-length FFT.
pub fn magnitude_spectrum(x: &[f32]) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v as f64, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    buf[..=n / 2].iter().map(|c| c.norm()).collect()
}

/// Power-weighted mean frequency of `x`.
pub fn spectral_centroid(x: &[f32], sample_rate: f64) -> f64 {
    let mags = magnitude_spectrum(x);
    let bin_hz = sample_rate / x.len() as f64;
    let (num, den) = mags.iter().enumerate().fold((0.0, 0.0), |(n, d), (i, m)| {
        let p = m * m;
        (n + p * i as f64 * bin_hz, d + p)
    });
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// 64-bit mixer used to derive independent RNG seeds from structured keys.
pub fn mix_seed(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a hash of a string, for seeding from names.
pub fn hash_str(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, n: usize) -> Vec<f32> {
        (0..n)
            .map(|i| (2.0 * PI * freq * i as f64 / 16_000.0).sin() as f32)
            .collect()
    }

    #[test]
    fn lowpass_attenuates_high_tones() {
        let lp = Biquad::new(FilterKind::LowPass, 1000.0, 0.707, 16_000.0);
        let low = lp.process(&sine(200.0, 16_000));
        let high = lp.process(&sine(6000.0, 16_000));
        assert!(rms(&low[4000..]) > 0.65);
        assert!(rms(&high[4000..]) < 0.03);
    }

    #[test]
    fn peaking_gain_at_center() {
        let pk = Biquad::new(FilterKind::Peaking { gain_db: 6.0 }, 1000.0, 1.0, 16_000.0);
        let out = pk.process(&sine(1000.0, 16_000));
        let gain_db = 20.0 * (rms(&out[4000..]) / rms(&sine(1000.0, 12_000))).log10();
        assert!((gain_db - 6.0).abs() < 0.2, "{gain_db}");
    }

    #[test]
    fn centroid_of_tone() {
        let c = spectral_centroid(&sine(1500.0, 16_000), 16_000.0);
        assert!((c - 1500.0).abs() < 5.0);
    }
}
