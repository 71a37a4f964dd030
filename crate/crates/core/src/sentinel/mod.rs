//! Streaming inference: slide a window over live or replayed audio, score
//! each window with a trained checkpoint, and raise debounced fall alerts.

mod alert;
mod daemon;
mod source;

pub use alert::{
    dispatch_alert, AlertEvent, AlertStatus, Debouncer, Endpoint, RetryPolicy, ALERT_FORMAT_VERSION,
};
pub use daemon::{run_daemon, CaptureMode, DaemonConfig, DaemonReport};
pub use source::{AudioSource, PcmSource, SampleSource};

use serde::{Deserialize, Serialize};

use crate::audio_io::{AudioClip, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::experiments::clip_fall_probability;
use crate::features::Extractor;
use crate::transformer::Model;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub window_s: f64,
    pub stride_s: f64,
}

impl WindowConfig {
    /// Window and stride in samples.
    pub fn samples(&self) -> (usize, usize) {
        let sr = SAMPLE_RATE as f64;
        (
            (self.window_s * sr).round() as usize,
            (self.stride_s * sr).round() as usize,
        )
    }

    /// Windows that fit in `len` samples: `floor((len - window) / stride) + 1`.
    pub fn count(&self, len: usize) -> usize {
        let (w, s) = self.samples();
        if len < w || s == 0 {
            0
        } else {
            (len - w) / s + 1
        }
    }

    fn validate(&self, model: &Model<f32>) -> Result<()> {
        let (w, s) = self.samples();
        if w == 0 || s == 0 || s > w {
            return Err(Error::InvalidArgument(format!(
                "need 0 < stride <= window, got window {} s, stride {} s",
                self.window_s, self.stride_s
            )));
        }
        let max = model_target_len(model)?;
        if w > max {
            return Err(Error::InvalidArgument(format!(
                "window of {w} samples exceeds the checkpoint's {max}-sample input"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowScore {
    pub start_s: f64,
    pub end_s: f64,
    pub fall_probability: f64,
}

fn model_target_len(model: &Model<f32>) -> Result<usize> {
    model.cfg.target_len.ok_or_else(|| {
        Error::CheckpointMismatch("checkpoint does not record its clip length".into())
    })
}

/// Feature extractor for the checkpoint's training features.
pub fn checkpoint_extractor(model: &Model<f32>) -> Result<Extractor> {
    let spec = model.cfg.features.ok_or_else(|| {
        Error::CheckpointMismatch("checkpoint does not record its feature extraction".into())
    })?;
    let (rows, cols) = spec.shape(model_target_len(model)?);
    if cols != model.cfg.input_dim || rows > model.cfg.max_frames {
        return Err(Error::CheckpointMismatch(format!(
            "features are {rows}x{cols} but the encoder takes width {} and {} frames",
            model.cfg.input_dim, model.cfg.max_frames
        )));
    }
    spec.extractor()
}

/// Scores one window exactly like offline evaluation of a clip: zero-pad
/// to the training length, featurize, Eval-mode forward pass.
pub fn score_window(model: &Model<f32>, extractor: &Extractor, samples: Vec<f32>) -> Result<f64> {
    clip_fall_probability(model, extractor, AudioClip::unlabeled(samples))
}

/// Scores every full window of `samples` (16 kHz mono) in time order.
/// Samples after the last full window are not scored.
pub fn stream_classify(
    model: &Model<f32>,
    samples: &[f32],
    windows: WindowConfig,
) -> Result<Vec<WindowScore>> {
    windows.validate(model)?;
    let extractor = checkpoint_extractor(model)?;
    let (w, s) = windows.samples();
    let sr = SAMPLE_RATE as f64;
    let n = windows.count(samples.len());
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let start = k * s;
        out.push(WindowScore {
            start_s: start as f64 / sr,
            end_s: (start + w) as f64 / sr,
            fall_probability: score_window(model, &extractor, samples[start..start + w].to_vec())?,
        });
    }
    if n == 0 && !samples.is_empty() {
        let e = Error::StreamUnderrun(format!(
            "{} samples do not fill a {w}-sample window",
            samples.len()
        ));
        log::warn!("{e}");
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
