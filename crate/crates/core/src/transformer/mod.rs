//! Transformer encoder classifier trained from scratch on CPU.
//!
//! A batch of feature matrices becomes one packed sequence per clip: a
//! learned CLS row, then the clip's frames, optionally projected to
//! `d_model`, plus sinusoidal position encodings. The CLS row's final state
//! feeds an MLP head and a two-way softmax (Fall, NoFall).

mod checkpoint;
mod gradcheck;
mod graph;
mod model;
mod optim;
mod params;
mod tensor;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use gradcheck::{check_gradients, relative_error, GradCheckReport};
pub use graph::{Graph, NodeId, Segment};
pub use model::{position_encoding, weighted_loss, BatchOutput, Layout, Model};
pub use optim::Adam;
pub(crate) use params::{filled, xavier_uniform};
pub use params::{ParamId, ParamSet, Tensor};
pub use tensor::{gemm, Scalar, View, ViewMut};
pub use train::{class_weights, score, train, Dataset, EpochMetrics, TrainHyper, TrainOutcome};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureKind, FeatureSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConfigId {
    A,
    B,
    C,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub config_id: ConfigId,
    pub input_dim: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ff_dim: usize,
    pub dropout: f64,
    pub mlp_head: Vec<usize>,
    pub n_classes: usize,
    pub use_projection: bool,
    pub max_frames: usize,
    /// Pre-norm residual blocks with a final layer norm when true,
    /// post-norm blocks otherwise.
    pub norm_first: bool,
    pub cls_init: f64,
    /// Feature extraction the model was trained on, with the padded clip length.
    pub features: Option<FeatureSpec>,
    pub target_len: Option<usize>,
}

impl ModelConfig {
    fn encoder(config_id: ConfigId, input_dim: usize, max_frames: usize) -> Self {
        Self {
            config_id,
            input_dim,
            d_model: 512,
            n_layers: 12,
            n_heads: 12,
            ff_dim: 1024,
            dropout: 0.1,
            mlp_head: vec![265, 64, 10],
            n_classes: 2,
            use_projection: true,
            max_frames,
            norm_first: true,
            cls_init: 1.0,
            features: None,
            target_len: None,
        }
    }

    /// Segmented raw audio.
    pub fn a(input_dim: usize, max_frames: usize) -> Self {
        Self::encoder(ConfigId::A, input_dim, max_frames)
    }

    /// Diff features.
    pub fn b(input_dim: usize, max_frames: usize) -> Self {
        Self::encoder(ConfigId::B, input_dim, max_frames)
    }

    /// Log mel spectrograms: no projection, no MLP head, d_model = mel bins.
    pub fn c(n_mels: usize, max_frames: usize) -> Self {
        Self {
            d_model: n_mels,
            n_heads: 6,
            ff_dim: 2 * n_mels,
            mlp_head: Vec::new(),
            use_projection: false,
            ..Self::encoder(ConfigId::C, n_mels, max_frames)
        }
    }

    /// The published configuration for a feature family, sized for clips
    /// padded to `target_len` samples.
    pub fn for_features(spec: FeatureSpec, target_len: usize) -> Self {
        let (rows, cols) = spec.shape(target_len);
        let mut cfg = match spec.kind() {
            FeatureKind::Diff => Self::b(cols, rows),
            FeatureKind::LogMel => Self::c(cols, rows),
            FeatureKind::SegmentedRaw | FeatureKind::Combined => Self::a(cols, rows),
        };
        cfg.features = Some(spec);
        cfg.target_len = Some(target_len);
        cfg
    }

    /// Per-head width; rounds up when `d_model` is not a multiple of the
    /// head count.
    pub fn head_dim(&self) -> usize {
        self.d_model.div_ceil(self.n_heads.max(1))
    }

    /// Width of the concatenated attention heads.
    pub fn attn_inner(&self) -> usize {
        self.n_heads * self.head_dim()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.d_model == 0 || self.n_heads == 0 || self.ff_dim == 0 || self.input_dim == 0 {
            return bad(format!("degenerate model dimensions: {self:?}"));
        }
        if self.n_classes != 2 {
            return bad(format!(
                "binary classifier needs 2 classes, got {}",
                self.n_classes
            ));
        }
        if !self.use_projection && self.d_model != self.input_dim {
            return bad(format!(
                "without projection d_model ({}) must equal input width ({})",
                self.d_model, self.input_dim
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.mlp_head.contains(&0) {
            return bad("zero-width MLP layer".into());
        }
        Ok(())
    }
}

/// Closed-form trainable parameter count.
pub fn param_count(cfg: &ModelConfig) -> usize {
    let d = cfg.d_model;
    let inner = cfg.attn_inner();
    let projection = if cfg.use_projection {
        cfg.input_dim * d + d
    } else {
        0
    };
    let attention = d * 3 * inner + 3 * inner + inner * d + d;
    let feed_forward = 2 * d * cfg.ff_dim + cfg.ff_dim + d;
    let norms = 4 * d;
    let final_norm = if cfg.norm_first { 2 * d } else { 0 };
    let widths: Vec<usize> = std::iter::once(d)
        .chain(cfg.mlp_head.iter().copied())
        .chain([cfg.n_classes])
        .collect();
    let head: usize = widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
    cfg.input_dim
        + projection
        + cfg.n_layers * (attention + feed_forward + norms)
        + final_norm
        + head
}
