//! Audio ingestion: WAV decoding, resampling to 16 kHz, length normalization,
//! corpus manifests with stratified splits, and a procedural corpus generator.

mod manifest;
mod resample;
mod synth;
mod wav;

pub use manifest::{
    build_manifest, build_manifest_with, split_counts, DatasetManifest, ManifestEntry, Split,
    SplitPolicy,
};
pub use resample::{resample, Resampler};
pub use synth::{synth_corpus, SynthSpec, CORPUS_COUNTS, MAX_SYNTH_SAMPLES};
pub use wav::{decode_wav, decode_wav_bytes, encode_wav, read_wav_mono, write_wav};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Working sample rate of every clip after ingestion.
pub const SAMPLE_RATE: u32 = 16_000;

/// Every scenario category used by the corpus (there is no category 7).
pub const CATEGORIES: [u8; 8] = [1, 2, 3, 4, 5, 6, 8, 9];

/// Binary class of a clip. `Fall` is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Fall,
    NoFall,
}

impl Label {
    /// Output neuron carrying this class: 0 for `Fall`, 1 for `NoFall`.
    pub fn index(self) -> usize {
        match self {
            Label::Fall => 0,
            Label::NoFall => 1,
        }
    }

    pub fn from_index(index: usize) -> Self {
        if index == 0 {
            Label::Fall
        } else {
            Label::NoFall
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Fall => "fall",
            Label::NoFall => "no_fall",
        }
    }
}

/// Class of a scenario category.
pub fn label_for_category(category_id: u8) -> Result<Label> {
    match category_id {
        1 | 3 | 6 | 8 | 9 => Ok(Label::Fall),
        2 | 4 | 5 => Ok(Label::NoFall),
        other => Err(Error::UnknownCategory(other)),
    }
}

/// A mono 16 kHz waveform plus its corpus metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate_hz: u32,
    /// Sample count before any zero padding.
    pub original_len: usize,
    pub category_id: u8,
    pub label: Label,
    pub source_id: String,
    pub augment_tag: Option<String>,
}

impl AudioClip {
    /// Wraps already-resampled 16 kHz samples.
    pub fn new(samples: Vec<f32>, category_id: u8, source_id: impl Into<String>) -> Result<Self> {
        let label = label_for_category(category_id)?;
        Ok(Self {
            original_len: samples.len(),
            samples,
            sample_rate_hz: SAMPLE_RATE,
            category_id,
            label,
            source_id: source_id.into(),
            augment_tag: None,
        })
    }

    /// Clip with no category, used for streamed audio. Category 0 is never
    /// written to a manifest.
    pub fn unlabeled(samples: Vec<f32>) -> Self {
        Self {
            original_len: samples.len(),
            samples,
            sample_rate_hz: SAMPLE_RATE,
            category_id: 0,
            label: Label::NoFall,
            source_id: String::new(),
            augment_tag: None,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.original_len as f64 / self.sample_rate_hz as f64
    }
}

/// Post-pads `clip` with zeros to exactly `target_len` samples.
pub fn pad_to_length(mut clip: AudioClip, target_len: usize) -> Result<AudioClip> {
    if clip.samples.len() > target_len {
        return Err(Error::ClipTooLong {
            len: clip.samples.len(),
            target: target_len,
        });
    }
    clip.samples.resize(target_len, 0.0);
    Ok(clip)
}
