//! Corpus expansion through waveform transforms.
//!
//! Transforms that may destroy or hide a fall event (shifts, masks, filters,
//! distortions, ...) are restricted to no-fall clips; the rest may be applied
//! to either class.

mod plan;
pub mod transforms;
pub mod vocoder;

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use plan::{default_fall_plan, default_nofall_plan, read_plan, write_plan};

use crate::audio_io::{write_wav, AudioClip, DatasetManifest, Label, ManifestEntry};
use crate::dsp::{hash_str, mix_seed, FilterKind};
use crate::error::{Error, Result};

/// Which classes a transform may be applied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    AnyClass,
    NoFallOnly,
}

/// One slot of an augmentation plan.
///
/// `transform` names an atomic transform or `composite`, in which case
/// `steps` run in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    pub name: String,
    pub transform: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    pub scope: Scope,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub steps: Vec<AugmentationSpec>,
}

impl AugmentationSpec {
    pub fn new(
        name: impl Into<String>,
        transform: impl Into<String>,
        scope: Scope,
        seed: u64,
    ) -> Self {
        Self {
            name: name.into(),
            transform: transform.into(),
            params: BTreeMap::new(),
            scope,
            seed,
            steps: Vec::new(),
        }
    }

    pub fn param(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }

    pub fn composite(
        name: impl Into<String>,
        scope: Scope,
        seed: u64,
        steps: Vec<AugmentationSpec>,
    ) -> Self {
        Self {
            steps,
            ..Self::new(name, "composite", scope, seed)
        }
    }

    /// Tag recorded on outputs of this spec.
    pub fn tag(&self) -> String {
        format!("{}-s{}", self.name, self.seed)
    }

    /// The strictest of the declared scope and the scope the transform needs.
    pub fn effective_scope(&self) -> Result<Scope> {
        Ok(self.scope.max(Op::parse(self)?.required_scope()))
    }
}

#[derive(Debug, Clone)]
enum Op {
    GaussianNoise(f64),
    Gain(f64),
    GainTransition {
        start_db: f64,
        end_db: f64,
        start: f64,
        end: f64,
    },
    Loudness(f64),
    PitchShift(f64),
    Resample(u32),
    TimeStretch(f64),
    TimeShift(f64),
    Filter {
        kind: FilterKind,
        freq: f64,
        q: f64,
    },
    GaussianSnr(f64),
    Reverse,
    Clipping(f64),
    Polarity,
    Tanh(f64),
    TimeMask(f64),
    Normalize(f64),
    Compression {
        bits: u32,
        cutoff: f64,
    },
    Equalizer([f64; 7]),
    Composite(Vec<(AugmentationSpec, Op)>),
}

struct Params<'a> {
    spec: &'a AugmentationSpec,
    used: HashSet<&'static str>,
}

impl<'a> Params<'a> {
    fn get(&mut self, key: &'static str, default: f64, lo: f64, hi: f64) -> Result<f64> {
        self.used.insert(key);
        let v = self.spec.params.get(key).copied().unwrap_or(default);
        if !v.is_finite() || v < lo || v > hi {
            return Err(Error::ParamOutOfRange {
                transform: self.spec.name.clone(),
                name: key.to_string(),
                value: v,
            });
        }
        Ok(v)
    }

    fn finish(self) -> Result<()> {
        match self
            .spec
            .params
            .keys()
            .find(|k| !self.used.contains(k.as_str()))
        {
            Some(k) => Err(Error::InvalidArgument(format!(
                "unknown parameter `{k}` for transform `{}`",
                self.spec.transform
            ))),
            None => Ok(()),
        }
    }
}

const EQ_KEYS: [&str; 7] = [
    "gain0_db", "gain1_db", "gain2_db", "gain3_db", "gain4_db", "gain5_db", "gain6_db",
];

impl Op {
    fn parse(spec: &AugmentationSpec) -> Result<Op> {
        let mut p = Params {
            spec,
            used: HashSet::new(),
        };
        let filter = |p: &mut Params, kind: FilterKind| -> Result<Op> {
            Ok(Op::Filter {
                kind,
                freq: p.get("freq_hz", 1000.0, 20.0, 7900.0)?,
                q: p.get("q", 0.707, 0.1, 20.0)?,
            })
        };
        let op = match spec.transform.as_str() {
            "gaussian_noise" => Op::GaussianNoise(p.get("std", 0.005, 0.0, 0.5)?),
            "gain" => Op::Gain(p.get("gain_db", 0.0, -40.0, 40.0)?),
            "gain_transition" => {
                let start = p.get("start_frac", 0.2, 0.0, 1.0)?;
                let end = p.get("end_frac", 0.8, start, 1.0)?;
                Op::GainTransition {
                    start_db: p.get("start_db", -12.0, -40.0, 40.0)?,
                    end_db: p.get("end_db", 6.0, -40.0, 40.0)?,
                    start,
                    end,
                }
            }
            "loudness_normalization" => Op::Loudness(p.get("target_db", -24.0, -60.0, 0.0)?),
            "pitch_shift" => Op::PitchShift(p.get("semitones", 2.0, -12.0, 12.0)?),
            "resample" => Op::Resample(p.get("rate_hz", 8000.0, 4000.0, 48_000.0)?.round() as u32),
            "time_stretch" => Op::TimeStretch(p.get("rate", 1.1, 0.8, 1.25)?),
            "time_shift" => Op::TimeShift(p.get("fraction", 0.1, -0.5, 0.5)?),
            "high_pass" => filter(&mut p, FilterKind::HighPass)?,
            "low_pass" => filter(&mut p, FilterKind::LowPass)?,
            "band_pass" => filter(&mut p, FilterKind::BandPass)?,
            "band_stop" => filter(&mut p, FilterKind::BandStop)?,
            "peaking" | "low_shelf" | "high_shelf" => {
                let gain_db = p.get("gain_db", 6.0, -24.0, 24.0)?;
                let kind = match spec.transform.as_str() {
                    "peaking" => FilterKind::Peaking { gain_db },
                    "low_shelf" => FilterKind::LowShelf { gain_db },
                    _ => FilterKind::HighShelf { gain_db },
                };
                filter(&mut p, kind)?
            }
            "gaussian_snr" => Op::GaussianSnr(p.get("snr_db", 20.0, -10.0, 80.0)?),
            "reverse" => Op::Reverse,
            "clipping_distortion" => Op::Clipping(p.get("percentile", 10.0, 0.0, 80.0)?),
            "polarity_inversion" => Op::Polarity,
            "tanh_distortion" => Op::Tanh(p.get("distortion", 0.3, 0.0, 1.0)?),
            "time_mask" => Op::TimeMask(p.get("fraction", 0.1, 0.0, 0.5)?),
            "normalize" => Op::Normalize(p.get("peak", 1.0, 1e-3, 1.0)?),
            "mp3_compression" => Op::Compression {
                bits: p.get("bits", 8.0, 2.0, 16.0)?.round() as u32,
                cutoff: p.get("cutoff_hz", 4000.0, 500.0, 7900.0)?,
            },
            "seven_band_eq" => {
                let mut gains = [0.0; 7];
                for (g, key) in gains.iter_mut().zip(EQ_KEYS) {
                    *g = p.get(key, 0.0, -12.0, 12.0)?;
                }
                Op::Equalizer(gains)
            }
            "composite" => {
                if spec.steps.is_empty() {
                    return Err(Error::EmptyPlan);
                }
                let steps = spec
                    .steps
                    .iter()
                    .map(|s| Op::parse(s).map(|op| (s.clone(), op)))
                    .collect::<Result<Vec<_>>>()?;
                Op::Composite(steps)
            }
            other => return Err(Error::UnknownTransform(other.to_string())),
        };
        p.finish()?;
        Ok(op)
    }

    fn required_scope(&self) -> Scope {
        match self {
            Op::GaussianNoise(_)
            | Op::Gain(_)
            | Op::GainTransition { .. }
            | Op::Loudness(_)
            | Op::PitchShift(_)
            | Op::Resample(_)
            | Op::TimeStretch(_) => Scope::AnyClass,
            Op::Composite(steps) => steps
                .iter()
                .map(|(s, op)| s.scope.max(op.required_scope()))
                .max()
                .unwrap_or(Scope::AnyClass),
            _ => Scope::NoFallOnly,
        }
    }

    fn run(&self, x: &[f32], rng: &mut ChaCha8Rng, source_id: &str) -> Vec<f32> {
        use transforms as t;
        match self {
            Op::GaussianNoise(std) => t::gaussian_noise(x, *std, rng),
            Op::Gain(db) => t::gain(x, *db),
            Op::GainTransition {
                start_db,
                end_db,
                start,
                end,
            } => t::gain_transition(x, *start_db, *end_db, *start, *end),
            Op::Loudness(db) => t::loudness_normalization(x, *db),
            Op::PitchShift(semitones) => vocoder::pitch_shift(x, *semitones),
            Op::Resample(rate) => t::resample_round_trip(x, *rate),
            Op::TimeStretch(rate) => vocoder::time_stretch(x, *rate),
            Op::TimeShift(fraction) => t::time_shift(x, *fraction),
            Op::Filter { kind, freq, q } => t::filter(x, *kind, *freq, *q),
            Op::GaussianSnr(snr) => t::gaussian_snr(x, *snr, rng),
            Op::Reverse => t::reverse(x),
            Op::Clipping(pct) => t::clipping_distortion(x, *pct),
            Op::Polarity => t::polarity_inversion(x),
            Op::Tanh(d) => t::tanh_distortion(x, *d),
            Op::TimeMask(fraction) => t::time_mask(x, *fraction, rng),
            Op::Normalize(p) => t::peak_normalize(x, *p),
            Op::Compression { bits, cutoff } => t::lossy_compression(x, *bits, *cutoff),
            Op::Equalizer(gains) => t::seven_band_eq(x, gains),
            Op::Composite(steps) => steps.iter().fold(x.to_vec(), |acc, (spec, op)| {
                op.run(&acc, &mut clip_rng(spec, source_id), source_id)
            }),
        }
    }
}

/// RNG stream for one (spec, source clip) pair, independent of processing order.
fn clip_rng(spec: &AugmentationSpec, source_id: &str) -> ChaCha8Rng {
    let key =
        mix_seed(spec.seed) ^ mix_seed(hash_str(source_id)).rotate_left(17) ^ hash_str(&spec.name);
    ChaCha8Rng::seed_from_u64(mix_seed(key))
}

/// Applies one spec to the unpadded part of `clip`.
pub fn apply(spec: &AugmentationSpec, clip: &AudioClip) -> Result<AudioClip> {
    let op = Op::parse(spec)?;
    let scope = spec.scope.max(op.required_scope());
    if scope == Scope::NoFallOnly && clip.label == Label::Fall {
        return Err(Error::ScopeViolation {
            transform: spec.name.clone(),
        });
    }
    let content = &clip.samples[..clip.original_len.min(clip.samples.len())];
    let mut out = op.run(
        content,
        &mut clip_rng(spec, &clip.source_id),
        &clip.source_id,
    );
    out.iter_mut().for_each(|v| {
        *v = if v.is_finite() {
            v.clamp(-1.0, 1.0)
        } else {
            0.0
        };
    });
    Ok(AudioClip {
        original_len: out.len(),
        samples: out,
        sample_rate_hz: clip.sample_rate_hz,
        category_id: clip.category_id,
        label: clip.label,
        source_id: clip.source_id.clone(),
        augment_tag: Some(spec.tag()),
    })
}

fn validate_plan(plan: &[AugmentationSpec], require_any_class: bool) -> Result<()> {
    if plan.is_empty() {
        return Err(Error::EmptyPlan);
    }
    let mut names = HashSet::new();
    for spec in plan {
        let scope = spec.effective_scope()?;
        if require_any_class && scope != Scope::AnyClass {
            return Err(Error::ScopeViolation {
                transform: spec.name.clone(),
            });
        }
        if !names.insert(spec.tag()) {
            return Err(Error::InvalidArgument(format!(
                "duplicate plan slot `{}`",
                spec.tag()
            )));
        }
    }
    Ok(())
}

/// Writes every original clip plus one variant per plan slot into `out_dir`.
///
/// Fall clips get `fall_plan`, no-fall clips get `nofall_plan`. Variants
/// inherit the split of their source and are truncated to the manifest's
/// `max_len_samples` so the padded length of the corpus does not change.
pub fn expand_corpus(
    manifest: &DatasetManifest,
    fall_plan: &[AugmentationSpec],
    nofall_plan: &[AugmentationSpec],
    out_dir: &Path,
) -> Result<DatasetManifest> {
    validate_plan(fall_plan, true)?;
    validate_plan(nofall_plan, false)?;
    let max_len = manifest.max_len_samples;
    let mut entries = Vec::new();
    for entry in &manifest.entries {
        let clip = manifest.load(entry)?;
        let cat_dir = out_dir.join(entry.category_id.to_string());
        std::fs::create_dir_all(&cat_dir)?;
        let stem = Path::new(&entry.path)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mut original = clip.samples.clone();
        original.truncate(max_len.max(1));
        write_wav(&cat_dir.join(format!("{stem}.wav")), &original)?;
        entries.push(ManifestEntry {
            path: format!("{}/{stem}.wav", entry.category_id),
            ..entry.clone()
        });
        let plan = match entry.label {
            Label::Fall => fall_plan,
            Label::NoFall => nofall_plan,
        };
        for spec in plan {
            let mut out = apply(spec, &clip)?;
            out.samples.truncate(max_len.max(1));
            let tag = spec.tag();
            let rel = format!("{}/{stem}__{tag}.wav", entry.category_id);
            write_wav(&out_dir.join(&rel), &out.samples)?;
            entries.push(ManifestEntry {
                path: rel,
                category_id: entry.category_id,
                label: entry.label,
                split: entry.split,
                augment_tag: Some(tag),
                source_id: entry.source_id.clone(),
            });
        }
    }
    entries.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(DatasetManifest {
        root: out_dir.to_path_buf(),
        entries,
        max_len_samples: max_len,
        seed: manifest.seed,
    })
}
