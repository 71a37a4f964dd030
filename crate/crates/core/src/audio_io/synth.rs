//! Procedural stand-in for a recorded bathroom corpus.
//!
//! Each category mixes a background bed (running water or a quiet room)
//! with scenario events: speech-like harmonic syllables, screams, impacts or
//! door knocks. Every fall scenario contains a body impact; calls for help
//! and screams carry a softer one than a plain fall onto the floor, so the
//! speech-like fall categories remain the harder ones.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{label_for_category, write_wav, SAMPLE_RATE};
use crate::dsp::{mix_seed, Biquad, FilterKind};
use crate::error::Result;

/// Longest generated clip: 139 760 samples (8.735 s).
pub const MAX_SYNTH_SAMPLES: usize = 139_760;
const MIN_SYNTH_SAMPLES: usize = 32_000;
const SR: f64 = SAMPLE_RATE as f64;

/// Per-category clip counts of the recorded corpus: 57 fall and 35 no-fall
/// clips, 92 in total.
pub const CORPUS_COUNTS: [(u8, usize); 8] = [
    (1, 12),
    (2, 12),
    (3, 11),
    (4, 11),
    (5, 12),
    (6, 11),
    (8, 12),
    (9, 11),
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub counts: BTreeMap<u8, usize>,
}

impl SynthSpec {
    pub fn standard(seed: u64) -> Self {
        Self {
            seed,
            counts: CORPUS_COUNTS.into_iter().collect(),
        }
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }
}

type Rng64 = ChaCha8Rng;

fn noise(rng: &mut Rng64, n: usize) -> Vec<f32> {
    (0..n)
        .map(|_| {
            let v: f64 = StandardNormal.sample(rng);
            v as f32
        })
        .collect()
}

fn scale_to_rms(x: &mut [f32], target: f64) {
    let r = crate::dsp::rms(x);
    if r > 0.0 {
        let g = (target / r) as f32;
        x.iter_mut().for_each(|v| *v *= g);
    }
}

/// Low-pass filtered noise with a slow gurgle.
fn water(rng: &mut Rng64, n: usize) -> Vec<f32> {
    let fc = rng.random_range(700.0..1400.0);
    let lp = Biquad::new(FilterKind::LowPass, fc, 0.707, SR);
    let mut x =
        Biquad::new(FilterKind::LowPass, fc * 1.2, 0.707, SR).process(&lp.process(&noise(rng, n)));
    let rate = rng.random_range(2.0..6.0);
    let depth = rng.random_range(0.1..0.3);
    let phase = rng.random_range(0.0..2.0 * PI);
    for (i, v) in x.iter_mut().enumerate() {
        *v *= (1.0 + depth * (2.0 * PI * rate * i as f64 / SR + phase).sin()) as f32;
    }
    let level = rng.random_range(0.03..0.07);
    scale_to_rms(&mut x, level);
    x
}

fn quiet_room(rng: &mut Rng64, n: usize) -> Vec<f32> {
    let mut x = Biquad::new(FilterKind::LowPass, 2000.0, 0.707, SR).process(&noise(rng, n));
    scale_to_rms(&mut x, rng.random_range(0.001..0.004));
    x
}

#[derive(Debug, Clone, Copy)]
struct Voice {
    f0: (f64, f64),
    /// Pitch change over a syllable, as a ratio.
    glide: (f64, f64),
    amp: (f64, f64),
    syllable_s: (f64, f64),
    gap_s: (f64, f64),
    harmonics: usize,
}

const DISTRESS: Voice = Voice {
    f0: (230.0, 400.0),
    glide: (1.0, 1.35),
    amp: (0.3, 0.55),
    syllable_s: (0.18, 0.45),
    gap_s: (0.05, 0.2),
    harmonics: 14,
};

const CALM: Voice = Voice {
    f0: (100.0, 230.0),
    glide: (0.85, 1.1),
    amp: (0.05, 0.14),
    syllable_s: (0.1, 0.3),
    gap_s: (0.04, 0.18),
    harmonics: 12,
};

const SOFT_CALL: Voice = Voice {
    f0: (150.0, 260.0),
    glide: (0.95, 1.2),
    amp: (0.1, 0.2),
    syllable_s: (0.15, 0.35),
    gap_s: (0.05, 0.2),
    harmonics: 12,
};

const HUM: Voice = Voice {
    f0: (100.0, 200.0),
    glide: (0.95, 1.05),
    amp: (0.04, 0.09),
    syllable_s: (0.5, 1.2),
    gap_s: (0.05, 0.2),
    harmonics: 4,
};

const SONG: Voice = Voice {
    f0: (200.0, 450.0),
    glide: (0.97, 1.03),
    amp: (0.2, 0.4),
    syllable_s: (0.3, 0.7),
    gap_s: (0.02, 0.1),
    harmonics: 10,
};

/// Harmonic syllables with two formant-like spectral peaks.
fn voice(rng: &mut Rng64, v: Voice, span_s: f64) -> Vec<f32> {
    let n = (span_s * SR) as usize;
    let mut out = vec![0.0f32; n];
    let mut t = 0usize;
    let vibrato = rng.random_range(3.0..6.0);
    while t < n {
        let len = ((rng.random_range(v.syllable_s.0..v.syllable_s.1)) * SR) as usize;
        let f_start = rng.random_range(v.f0.0..v.f0.1);
        let f_end = f_start * rng.random_range(v.glide.0..v.glide.1);
        let amp = rng.random_range(v.amp.0..v.amp.1);
        let f1 = rng.random_range(400.0..900.0);
        let f2 = rng.random_range(1100.0..2600.0);
        let weights: Vec<f64> = (1..=v.harmonics)
            .map(|k| {
                let f = f_start * k as f64;
                let formant =
                    (-((f - f1) / 300.0).powi(2)).exp() + 0.6 * (-((f - f2) / 500.0).powi(2)).exp();
                (0.25 / k as f64 + formant) * if f < 7500.0 { 1.0 } else { 0.0 }
            })
            .collect();
        let norm: f64 = weights.iter().sum::<f64>().max(1e-9);
        let mut phase = 0.0f64;
        for i in 0..len.min(n - t) {
            let frac = i as f64 / len as f64;
            let f0 = f_start + (f_end - f_start) * frac;
            let f0 = f0 * (1.0 + 0.01 * (2.0 * PI * vibrato * i as f64 / SR).sin());
            phase += 2.0 * PI * f0 / SR;
            let env = (PI * frac).sin().powf(0.6);
            let s: f64 = weights
                .iter()
                .enumerate()
                .map(|(k, w)| w * ((k + 1) as f64 * phase).sin())
                .sum();
            out[t + i] = (amp * env * s / norm * 2.0) as f32;
        }
        t += len + (rng.random_range(v.gap_s.0..v.gap_s.1) * SR) as usize;
    }
    out
}

/// Loud pitched burst with a rise-then-fall contour and a rough noise layer.
fn scream(rng: &mut Rng64, amp: f64) -> Vec<f32> {
    let n = (rng.random_range(0.5..1.4) * SR) as usize;
    let f_peak = rng.random_range(500.0..950.0);
    let f_base = f_peak * rng.random_range(0.6..0.8);
    let rough = noise(rng, n);
    let mut phase = 0.0f64;
    (0..n)
        .map(|i| {
            let frac = i as f64 / n as f64;
            let f0 = f_base + (f_peak - f_base) * (PI * frac).sin();
            phase += 2.0 * PI * f0 / SR;
            let env = (PI * frac).sin().powf(0.3);
            let s = (1..=8)
                .map(|k| ((k as f64) * phase).sin() / k as f64)
                .sum::<f64>()
                / 2.0;
            (amp * env * (s + 0.15 * rough[i] as f64)) as f32
        })
        .collect()
}

/// Broadband impact with a low resonant body.
fn impact(rng: &mut Rng64, amp: f64) -> Vec<f32> {
    let tau = rng.random_range(0.02..0.08);
    let body_hz = rng.random_range(70.0..200.0);
    let n = (tau * 6.0 * SR) as usize;
    let burst = noise(rng, n);
    (0..n)
        .map(|i| {
            let t = i as f64 / SR;
            let env = (-t / tau).exp();
            let body = (2.0 * PI * body_hz * t).sin() * (-t / (tau * 1.5)).exp();
            (amp * (0.6 * env * burst[i] as f64 / 2.5 + 0.7 * body)) as f32
        })
        .collect()
}

/// Train of short resonant knocks.
fn knocks(rng: &mut Rng64, amp: f64) -> Vec<f32> {
    let count = rng.random_range(3..=8);
    let spacing = rng.random_range(0.15..0.35);
    let hz = rng.random_range(150.0..400.0);
    let n = ((count as f64 * spacing + 0.2) * SR) as usize;
    let mut out = vec![0.0f32; n];
    for k in 0..count {
        let start = (k as f64 * spacing * SR) as usize;
        let tau = rng.random_range(0.01..0.025);
        let a = amp * rng.random_range(0.8..1.0);
        let click = noise(rng, 80);
        for i in 0..((tau * 6.0 * SR) as usize).min(n - start) {
            let t = i as f64 / SR;
            let mut s = (2.0 * PI * hz * t).sin() * (-t / tau).exp();
            if i < click.len() {
                s += 0.4 * click[i] as f64 * (1.0 - i as f64 / 80.0);
            }
            out[start + i] += (a * s) as f32;
        }
    }
    out
}

/// Short high-band scrubbing noises.
fn scrubbing(rng: &mut Rng64, n: usize) -> Vec<f32> {
    let bp = Biquad::new(
        FilterKind::BandPass,
        rng.random_range(2000.0..4000.0),
        1.0,
        SR,
    );
    let mut out = bp.process(&noise(rng, n));
    let period = rng.random_range(0.3..0.6) * SR;
    for (i, v) in out.iter_mut().enumerate() {
        let on = ((i as f64 / period).fract() < 0.5) as u8 as f32;
        *v *= 0.03 * on;
    }
    out
}

fn place(dst: &mut [f32], event: &[f32], rng: &mut Rng64) {
    let len = event.len().min(dst.len());
    let start = rng.random_range(0..=dst.len() - len);
    for (d, e) in dst[start..start + len].iter_mut().zip(event) {
        *d += e;
    }
}

fn speech_span(rng: &mut Rng64, n: usize) -> f64 {
    let max_s = n as f64 / SR;
    rng.random_range(0.8..2.5f64).min(max_s * 0.9)
}

/// Things knocked over and rolling after a fall: decaying bursts of rattle.
fn debris(rng: &mut Rng64, amp: f64) -> Vec<f32> {
    let n = (rng.random_range(0.6..1.2) * SR) as usize;
    let hp = Biquad::new(
        FilterKind::HighPass,
        rng.random_range(300.0..900.0),
        0.707,
        SR,
    );
    let raw = hp.process(&noise(rng, n));
    let rate = rng.random_range(8.0..16.0);
    let decay = rng.random_range(0.5..1.0);
    raw.iter()
        .enumerate()
        .map(|(i, v)| {
            let t = i as f64 / SR;
            let flutter = 0.55 + 0.45 * (2.0 * PI * rate * t).sin().abs();
            (amp * flutter * (-t / decay).exp() * *v as f64) as f32
        })
        .collect()
}

/// A body hitting the floor: one heavy impact, sometimes a smaller bounce,
/// then the rattle of whatever came down with it.
fn fall_thud(dst: &mut [f32], rng: &mut Rng64, amp: (f64, f64)) {
    let amp = rng.random_range(amp.0..amp.1);
    let mut event = impact(rng, amp);
    if rng.random_bool(0.5) {
        event.extend(impact(rng, amp * 0.4));
    }
    event.extend(debris(rng, amp * 0.35));
    place(dst, &event, rng);
}

/// Generates one clip of `category_id`; `variant` picks the sub-scenario.
fn render(category_id: u8, variant: usize, n: usize, rng: &mut Rng64) -> Vec<f32> {
    let watered = matches!(category_id, 1 | 2 | 3 | 5 | 6);
    let mut x = if watered {
        water(rng, n)
    } else {
        quiet_room(rng, n)
    };
    match category_id {
        1 => {
            // calls for help after a fall, one in six barely audible
            let v = if variant % 6 == 5 {
                SOFT_CALL
            } else {
                DISTRESS
            };
            let span = speech_span(rng, n);
            place(&mut x, &voice(rng, v, span), rng);
            fall_thud(&mut x, rng, (0.25, 0.5));
        }
        2 => {
            let v = match variant % 6 {
                0..=3 => CALM,
                _ => HUM,
            };
            let span = speech_span(rng, n);
            place(&mut x, &voice(rng, v, span), rng);
        }
        3 => {
            let amp = rng.random_range(0.45..0.8);
            place(&mut x, &scream(rng, amp), rng);
            fall_thud(&mut x, rng, (0.25, 0.5));
        }
        4 => {
            let scrub = scrubbing(rng, n);
            x.iter_mut().zip(&scrub).for_each(|(a, b)| *a += b);
            let v = match variant % 11 {
                0..=3 => CALM,
                4..=7 => HUM,
                _ => Voice {
                    amp: (0.08, 0.16),
                    ..SONG
                },
            };
            let span = speech_span(rng, n);
            place(&mut x, &voice(rng, v, span), rng);
        }
        5 => {}
        6 => {
            for _ in 0..rng.random_range(2..=3) {
                let amp = rng.random_range(0.7..1.0);
                place(&mut x, &impact(rng, amp), rng);
            }
            fall_thud(&mut x, rng, (0.5, 0.8));
        }
        8 => {
            let amp = rng.random_range(0.5..0.9);
            place(&mut x, &knocks(rng, amp), rng);
            fall_thud(&mut x, rng, (0.3, 0.6));
        }
        9 => {
            let v = match variant % 11 {
                0..=7 => DISTRESS,
                _ => Voice {
                    glide: (1.1, 1.5),
                    ..DISTRESS
                },
            };
            let span = speech_span(rng, n);
            place(&mut x, &voice(rng, v, span), rng);
            fall_thud(&mut x, rng, (0.3, 0.6));
        }
        _ => unreachable!("category validated by caller"),
    }
    x.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
    x
}

/// Deterministically renders one clip; exposed for tests and tooling.
pub(crate) fn render_clip(
    seed: u64,
    category_id: u8,
    index: usize,
    longest: bool,
) -> Result<Vec<f32>> {
    label_for_category(category_id)?;
    let mut rng = Rng64::seed_from_u64(mix_seed(
        seed ^ mix_seed(category_id as u64 * 1000 + index as u64),
    ));
    let n = if longest {
        MAX_SYNTH_SAMPLES
    } else {
        let u: f64 = rng.random();
        let span = (MAX_SYNTH_SAMPLES - MIN_SYNTH_SAMPLES) as f64;
        MIN_SYNTH_SAMPLES + (span * u * u * u).round() as usize
    };
    Ok(render(category_id, index, n, &mut rng))
}

/// Writes `<out>/<category_id>/clip_NNN.wav` for every requested clip.
///
/// Durations fall in [2 s, 8.735 s], skewed short; the first clip of the lowest non-empty
/// category is always exactly [`MAX_SYNTH_SAMPLES`] long.
pub fn synth_corpus(spec: &SynthSpec, out_dir: &Path) -> Result<usize> {
    std::fs::create_dir_all(out_dir)?;
    for &cat in spec.counts.keys() {
        label_for_category(cat)?;
    }
    let first = spec
        .counts
        .iter()
        .find(|(_, &c)| c > 0)
        .map(|(&cat, _)| cat);
    let mut written = 0;
    for (&cat, &count) in &spec.counts {
        if count == 0 {
            continue;
        }
        let dir = out_dir.join(cat.to_string());
        std::fs::create_dir_all(&dir)?;
        for i in 0..count {
            let samples = render_clip(spec.seed, cat, i, Some(cat) == first && i == 0)?;
            write_wav(&dir.join(format!("clip_{i:03}.wav")), &samples)?;
            written += 1;
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio_io::{build_manifest, Label};
    use crate::error::Error;

    #[test]
    fn standard_counts_split_57_35() {
        let spec = SynthSpec::standard(1);
        assert_eq!(spec.total(), 92);
        let falls: usize = spec
            .counts
            .iter()
            .filter(|(&c, _)| label_for_category(c).unwrap() == Label::Fall)
            .map(|(_, n)| n)
            .sum();
        assert_eq!(falls, 57);
        assert_eq!(spec.total() - falls, 35);
    }

    #[test]
    fn small_corpus_layout_and_lengths() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            seed: 4,
            counts: [(1, 2), (5, 3), (8, 1)].into_iter().collect(),
        };
        assert_eq!(synth_corpus(&spec, dir.path()).unwrap(), 6);
        let m = build_manifest(dir.path(), 0).unwrap();
        assert_eq!(m.entries.len(), 6);
        assert_eq!(m.max_len_samples, MAX_SYNTH_SAMPLES);
        for e in &m.entries {
            let clip = m.load(e).unwrap();
            assert!(clip.len() >= MIN_SYNTH_SAMPLES && clip.len() <= MAX_SYNTH_SAMPLES);
            assert!(clip.samples.iter().all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn zero_counts_give_empty_directory() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            seed: 0,
            counts: CORPUS_COUNTS.iter().map(|&(c, _)| (c, 0)).collect(),
        };
        assert_eq!(synth_corpus(&spec, dir.path()).unwrap(), 0);
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
        assert!(matches!(
            build_manifest(dir.path(), 0),
            Err(Error::EmptyCategory(_))
        ));
    }

    #[test]
    fn water_centroid_below_2khz() {
        for i in 0..4 {
            let x = render_clip(9, 5, i, false).unwrap();
            let c = crate::dsp::spectral_centroid(&x, SR);
            assert!(c < 2000.0, "clip {i}: centroid {c}");
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        assert_eq!(
            render_clip(3, 6, 2, false).unwrap(),
            render_clip(3, 6, 2, false).unwrap()
        );
        assert_ne!(
            render_clip(3, 6, 2, false).unwrap(),
            render_clip(4, 6, 2, false).unwrap()
        );
    }
}
