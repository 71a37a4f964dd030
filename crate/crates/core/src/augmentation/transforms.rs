//! Atomic waveform transforms. Every function here is pure given its RNG.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::audio_io::{Resampler, SAMPLE_RATE};
use crate::dsp::{peak, power, rms, Biquad, FilterKind};

/// Centre frequencies of the 7-band equalizer.
pub const EQ_CENTERS_HZ: [f64; 7] = [63.0, 160.0, 400.0, 1000.0, 2500.0, 4500.0, 6500.0];

fn db_to_amp(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

pub fn gaussian_noise(x: &[f32], std: f64, rng: &mut ChaCha8Rng) -> Vec<f32> {
    x.iter()
        .map(|&v| {
            let n: f64 = StandardNormal.sample(rng);
            v + (std * n) as f32
        })
        .collect()
}

/// Adds white noise whose power sits exactly `snr_db` below the signal's.
pub fn gaussian_snr(x: &[f32], snr_db: f64, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let mut noise: Vec<f32> = (0..x.len())
        .map(|_| {
            let n: f64 = StandardNormal.sample(rng);
            n as f32
        })
        .collect();
    let target = power(x) / 10f64.powf(snr_db / 10.0);
    let current = power(&noise);
    let g = if current > 0.0 {
        (target / current).sqrt() as f32
    } else {
        0.0
    };
    noise.iter_mut().zip(x).for_each(|(n, &v)| *n = v + *n * g);
    noise
}

pub fn gain(x: &[f32], gain_db: f64) -> Vec<f32> {
    let g = db_to_amp(gain_db) as f32;
    x.iter().map(|&v| v * g).collect()
}

/// Gain ramped linearly in dB between two fractional positions.
pub fn gain_transition(
    x: &[f32],
    start_db: f64,
    end_db: f64,
    start_frac: f64,
    end_frac: f64,
) -> Vec<f32> {
    let n = x.len() as f64;
    let (a, b) = (start_frac * n, (end_frac * n).max(start_frac * n + 1.0));
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            let t = ((i as f64 - a) / (b - a)).clamp(0.0, 1.0);
            v * db_to_amp(start_db + (end_db - start_db) * t) as f32
        })
        .collect()
}

/// Scales to a target RMS level in dBFS.
pub fn loudness_normalization(x: &[f32], target_db: f64) -> Vec<f32> {
    let r = rms(x);
    if r == 0.0 {
        return x.to_vec();
    }
    let g = (db_to_amp(target_db) / r) as f32;
    x.iter().map(|&v| v * g).collect()
}

/// Round trip through a different sample rate; length is kept.
pub fn resample_round_trip(x: &[f32], rate_hz: u32) -> Vec<f32> {
    let down = Resampler::new(SAMPLE_RATE, rate_hz).process(x);
    let mut back = Resampler::new(rate_hz, SAMPLE_RATE).process(&down);
    back.resize(x.len(), 0.0);
    back
}

/// Shifts by `fraction` of the length; vacated samples become zero.
pub fn time_shift(x: &[f32], fraction: f64) -> Vec<f32> {
    let n = x.len();
    let shift = (fraction * n as f64).round() as isize;
    (0..n as isize)
        .map(|i| {
            let j = i - shift;
            if (0..n as isize).contains(&j) {
                x[j as usize]
            } else {
                0.0
            }
        })
        .collect()
}

pub fn filter(x: &[f32], kind: FilterKind, freq_hz: f64, q: f64) -> Vec<f32> {
    Biquad::new(kind, freq_hz, q, SAMPLE_RATE as f64).process(x)
}

pub fn reverse(x: &[f32]) -> Vec<f32> {
    x.iter().rev().copied().collect()
}

/// Clips the loudest `percentile` percent of samples to the threshold magnitude.
pub fn clipping_distortion(x: &[f32], percentile: f64) -> Vec<f32> {
    if x.is_empty() || percentile <= 0.0 {
        return x.to_vec();
    }
    let mut mags: Vec<f32> = x.iter().map(|v| v.abs()).collect();
    mags.sort_by(f32::total_cmp);
    let idx = (((100.0 - percentile) / 100.0) * (mags.len() - 1) as f64).round() as usize;
    let t = mags[idx.min(mags.len() - 1)];
    x.iter().map(|&v| v.clamp(-t, t)).collect()
}

pub fn polarity_inversion(x: &[f32]) -> Vec<f32> {
    x.iter().map(|&v| -v).collect()
}

/// `tanh` waveshaper; output RMS matched to the input.
pub fn tanh_distortion(x: &[f32], distortion: f64) -> Vec<f32> {
    let drive = 1.0 + 20.0 * distortion;
    let y: Vec<f32> = x
        .iter()
        .map(|&v| ((v as f64) * drive).tanh() as f32)
        .collect();
    let (ri, ro) = (rms(x), rms(&y));
    if ro == 0.0 {
        return y;
    }
    let g = (ri / ro) as f32;
    y.into_iter().map(|v| v * g).collect()
}

/// Silences a random span covering `fraction` of the clip.
pub fn time_mask(x: &[f32], fraction: f64, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let n = x.len();
    let span = ((fraction * n as f64).round() as usize).min(n);
    let start = if n > span {
        rng.random_range(0..=n - span)
    } else {
        0
    };
    let mut y = x.to_vec();
    y[start..start + span].iter_mut().for_each(|v| *v = 0.0);
    y
}

pub fn peak_normalize(x: &[f32], target_peak: f64) -> Vec<f32> {
    let p = peak(x);
    if p == 0.0 {
        return x.to_vec();
    }
    let g = (target_peak / p as f64) as f32;
    x.iter().map(|&v| v * g).collect()
}

/// Quality degradation standing in for lossy compression: low-pass then
/// requantization to `bits` bits.
pub fn lossy_compression(x: &[f32], bits: u32, cutoff_hz: f64) -> Vec<f32> {
    let lp = filter(
        &filter(x, FilterKind::LowPass, cutoff_hz, 0.707),
        FilterKind::LowPass,
        cutoff_hz,
        0.707,
    );
    let levels = (1u64 << (bits - 1)) as f32;
    lp.into_iter()
        .map(|v| (v * levels).round() / levels)
        .collect()
}

pub fn seven_band_eq(x: &[f32], gains_db: &[f64; 7]) -> Vec<f32> {
    EQ_CENTERS_HZ
        .iter()
        .zip(gains_db)
        .fold(x.to_vec(), |acc, (&f, &g)| {
            filter(&acc, FilterKind::Peaking { gain_db: g }, f, 1.0)
        })
}
