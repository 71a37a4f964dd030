//! Default augmentation plans and the plan file format (one JSON spec per line).
//!
//! The default plans are a construction of this crate: 14 class-safe slots
//! for fall clips and 100 slots for no-fall clips. `augment1` is the fixed
//! pipeline gain transition -> Gaussian noise -> pitch shift; the other
//! `augmentN` composites are seeded random pipelines of 2-4 atomic
//! transforms.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AugmentationSpec, Scope};
use crate::dsp::mix_seed;
use crate::error::Result;

type Spec = AugmentationSpec;

fn any(name: &str, transform: &str, seed: u64) -> Spec {
    Spec::new(name, transform, Scope::AnyClass, seed)
}

fn starred(name: &str, transform: &str, seed: u64) -> Spec {
    Spec::new(name, transform, Scope::NoFallOnly, seed)
}

fn signed(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    let v = rng.random_range(lo..hi);
    if rng.random_bool(0.5) {
        v
    } else {
        -v
    }
}

/// A randomly parameterized class-safe atomic transform.
fn random_any(rng: &mut ChaCha8Rng, name: &str, seed: u64) -> Spec {
    match rng.random_range(0..7) {
        0 => any(name, "gaussian_noise", seed).param("std", rng.random_range(0.001..0.01)),
        1 => any(name, "gain", seed).param("gain_db", signed(rng, 1.0, 6.0)),
        2 => any(name, "gain_transition", seed)
            .param("start_db", rng.random_range(-12.0..0.0))
            .param("end_db", rng.random_range(-3.0..6.0)),
        3 => any(name, "loudness_normalization", seed)
            .param("target_db", rng.random_range(-30.0..-16.0)),
        4 => any(name, "pitch_shift", seed).param("semitones", signed(rng, 0.5, 2.0)),
        5 => any(name, "resample", seed).param(
            "rate_hz",
            [8000.0, 11_025.0, 12_000.0][rng.random_range(0..3)],
        ),
        _ => any(name, "time_stretch", seed).param("rate", rng.random_range(0.85..1.15)),
    }
}

/// A randomly parameterized no-fall-only atomic transform.
fn random_starred(rng: &mut ChaCha8Rng, name: &str, seed: u64) -> Spec {
    match rng.random_range(0..17) {
        0 => starred(name, "time_shift", seed).param("fraction", signed(rng, 0.05, 0.3)),
        1 => starred(name, "high_pass", seed).param("freq_hz", rng.random_range(100.0..400.0)),
        2 => starred(name, "low_pass", seed).param("freq_hz", rng.random_range(2500.0..6000.0)),
        3 => starred(name, "band_pass", seed)
            .param("freq_hz", rng.random_range(800.0..2500.0))
            .param("q", rng.random_range(0.5..1.0)),
        4 => starred(name, "band_stop", seed)
            .param("freq_hz", rng.random_range(500.0..3000.0))
            .param("q", rng.random_range(1.0..3.0)),
        5 => starred(name, "peaking", seed)
            .param("freq_hz", rng.random_range(300.0..3000.0))
            .param("gain_db", signed(rng, 3.0, 9.0)),
        6 => starred(name, "low_shelf", seed)
            .param("freq_hz", 250.0)
            .param("gain_db", signed(rng, 2.0, 6.0)),
        7 => starred(name, "high_shelf", seed)
            .param("freq_hz", 3000.0)
            .param("gain_db", signed(rng, 2.0, 6.0)),
        8 => starred(name, "gaussian_snr", seed).param("snr_db", rng.random_range(10.0..30.0)),
        9 => starred(name, "reverse", seed),
        10 => starred(name, "clipping_distortion", seed)
            .param("percentile", rng.random_range(5.0..20.0)),
        11 => starred(name, "polarity_inversion", seed),
        12 => {
            starred(name, "tanh_distortion", seed).param("distortion", rng.random_range(0.1..0.5))
        }
        13 => starred(name, "time_mask", seed).param("fraction", rng.random_range(0.05..0.2)),
        14 => starred(name, "normalize", seed),
        15 => starred(name, "mp3_compression", seed)
            .param("bits", rng.random_range(6..=10) as f64)
            .param("cutoff_hz", rng.random_range(3000.0..6000.0)),
        _ => {
            let mut s = starred(name, "seven_band_eq", seed);
            for key in super::EQ_KEYS {
                s = s.param(key, rng.random_range(-6.0..6.0));
            }
            s
        }
    }
}

fn random_composite(rng: &mut ChaCha8Rng, name: &str, seed: u64, scope: Scope) -> Spec {
    let n = rng.random_range(2..=4);
    let steps: Vec<Spec> = (0..n)
        .map(|i| {
            let step_name = format!("{name}.{i}");
            // every starred pipeline carries at least one starred step
            if scope == Scope::NoFallOnly && (i == 0 || rng.random_bool(0.5)) {
                random_starred(rng, &step_name, seed)
            } else {
                random_any(rng, &step_name, seed)
            }
        })
        .collect();
    Spec::composite(name, scope, seed, steps)
}

fn augment1(seed: u64) -> Spec {
    Spec::composite(
        "augment1",
        Scope::AnyClass,
        seed,
        vec![
            any("augment1.0", "gain_transition", seed)
                .param("start_db", -6.0)
                .param("end_db", 3.0),
            any("augment1.1", "gaussian_noise", seed).param("std", 0.004),
            any("augment1.2", "pitch_shift", seed).param("semitones", 1.0),
        ],
    )
}

/// 14 class-safe slots applied to every fall clip.
pub fn default_fall_plan(seed: u64) -> Vec<Spec> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed ^ 0xFA11));
    vec![
        any("gaussian_noise_a", "gaussian_noise", seed).param("std", 0.003),
        any("gaussian_noise_b", "gaussian_noise", seed).param("std", 0.008),
        any("gain_up", "gain", seed).param("gain_db", 4.0),
        any("gain_down", "gain", seed).param("gain_db", -6.0),
        any("gain_transition", "gain_transition", seed),
        any("loudness_normalization", "loudness_normalization", seed).param("target_db", -20.0),
        any("pitch_up", "pitch_shift", seed).param("semitones", 2.0),
        any("pitch_down", "pitch_shift", seed).param("semitones", -2.0),
        any("resample", "resample", seed).param("rate_hz", 8000.0),
        any("time_stretch_slow", "time_stretch", seed).param("rate", 0.9),
        any("time_stretch_fast", "time_stretch", seed).param("rate", 1.1),
        augment1(seed),
        random_composite(&mut rng, "augment2", seed, Scope::AnyClass),
        random_composite(&mut rng, "augment13", seed, Scope::AnyClass),
    ]
}

/// 100 slots applied to every no-fall clip: the fall slots, two more
/// class-safe composites, every starred atomic transform, 55 starred
/// composites and a few re-parameterized repeats.
pub fn default_nofall_plan(seed: u64) -> Vec<Spec> {
    let mut plan = default_fall_plan(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed ^ 0x0FA11));
    for name in ["augment14", "augment15"] {
        plan.push(random_composite(&mut rng, name, seed, Scope::AnyClass));
    }
    let mut eq = starred("seven_band_eq", "seven_band_eq", seed);
    for (i, key) in super::EQ_KEYS.iter().enumerate() {
        eq = eq.param(key, [3.0, -2.0, 1.5, -3.0, 2.0, 4.0, -4.0][i]);
    }
    plan.extend([
        starred("time_shift", "time_shift", seed).param("fraction", 0.15),
        starred("high_pass", "high_pass", seed).param("freq_hz", 200.0),
        starred("peaking", "peaking", seed)
            .param("freq_hz", 1200.0)
            .param("gain_db", 6.0),
        starred("low_pass", "low_pass", seed).param("freq_hz", 4000.0),
        starred("band_pass", "band_pass", seed)
            .param("freq_hz", 1500.0)
            .param("q", 0.7),
        starred("band_stop", "band_stop", seed)
            .param("freq_hz", 1000.0)
            .param("q", 2.0),
        starred("high_shelf", "high_shelf", seed)
            .param("freq_hz", 3000.0)
            .param("gain_db", -6.0),
        starred("low_shelf", "low_shelf", seed)
            .param("freq_hz", 250.0)
            .param("gain_db", 4.0),
        starred("gaussian_snr", "gaussian_snr", seed).param("snr_db", 20.0),
        starred("reverse", "reverse", seed),
        starred("clipping_distortion", "clipping_distortion", seed).param("percentile", 10.0),
        starred("polarity_inversion", "polarity_inversion", seed),
        starred("tanh_distortion", "tanh_distortion", seed).param("distortion", 0.3),
        starred("time_mask", "time_mask", seed).param("fraction", 0.1),
        starred("normalize", "normalize", seed),
        starred("mp3_compression", "mp3_compression", seed)
            .param("bits", 8.0)
            .param("cutoff_hz", 4000.0),
        eq,
    ]);
    for i in (3..=12).chain(16..=60) {
        plan.push(random_composite(
            &mut rng,
            &format!("augment{i}"),
            seed,
            Scope::NoFallOnly,
        ));
    }
    plan.extend([
        starred("time_shift_b", "time_shift", seed).param("fraction", -0.2),
        starred("time_shift_c", "time_shift", seed).param("fraction", 0.3),
        starred("gaussian_snr_b", "gaussian_snr", seed).param("snr_db", 10.0),
        starred("gaussian_snr_c", "gaussian_snr", seed).param("snr_db", 30.0),
        starred("time_mask_b", "time_mask", seed).param("fraction", 0.2),
        starred("time_mask_c", "time_mask", seed).param("fraction", 0.05),
        starred("tanh_distortion_b", "tanh_distortion", seed).param("distortion", 0.6),
        starred("mp3_compression_b", "mp3_compression", seed)
            .param("bits", 6.0)
            .param("cutoff_hz", 3000.0),
        random_starred(&mut rng, "seven_band_eq_b", seed),
        starred("clipping_distortion_b", "clipping_distortion", seed).param("percentile", 20.0),
        any("pitch_up_small", "pitch_shift", seed).param("semitones", 1.0),
        any("pitch_down_small", "pitch_shift", seed).param("semitones", -1.0),
    ]);
    plan
}

pub fn write_plan(path: &Path, plan: &[Spec]) -> Result<()> {
    let mut out = String::new();
    for spec in plan {
        out.push_str(&serde_json::to_string(spec)?);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_plan(path: &Path) -> Result<Vec<Spec>> {
    std::fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|l| serde_json::from_str(l).map_err(Into::into))
        .collect()
}
