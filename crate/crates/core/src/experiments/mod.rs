//! Evaluation protocol: metrics, pairwise category recall, ablation grids
//! and the DNN / SVM baselines, all driven from a dataset manifest.

mod ablation;
mod dnn;
mod metrics;
mod svm;

pub use ablation::{ablation_cells, run_ablation, AblationAxis, AblationCell, AblationRow};
pub use dnn::{baseline_dnn, train_dnn, Dnn, DNN_HIDDEN};
pub use metrics::{decide, threshold_sweep, Confusion, EvalReport, ThresholdPoint};
pub use svm::{
    baseline_svm, flatten_dataset, gram_matrix, train_svm, Kernel, Svm, SvmFit, SvmParams,
};

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::audio_io::{pad_to_length, AudioClip, DatasetManifest, Label, ManifestEntry, Split};
use crate::error::{Error, Result};
use crate::features::{Extractor, FeatureMatrix, FeatureSpec};
use crate::transformer::{train, Dataset, Mode, Model, ModelConfig, TrainHyper, TrainOutcome};

/// Clips of one manifest split, padded to a common length and featurized on
/// demand.
pub struct ManifestDataset<'m> {
    manifest: &'m DatasetManifest,
    entries: Vec<&'m ManifestEntry>,
    extractor: Extractor,
    target_len: usize,
}

impl<'m> ManifestDataset<'m> {
    pub fn new(
        manifest: &'m DatasetManifest,
        split: Split,
        spec: FeatureSpec,
        target_len: usize,
    ) -> Result<Self> {
        Self::from_entries(manifest, manifest.split(split).collect(), spec, target_len)
    }

    pub fn from_entries(
        manifest: &'m DatasetManifest,
        entries: Vec<&'m ManifestEntry>,
        spec: FeatureSpec,
        target_len: usize,
    ) -> Result<Self> {
        Ok(Self {
            manifest,
            entries,
            extractor: spec.extractor()?,
            target_len,
        })
    }

    pub fn entry(&self, i: usize) -> &'m ManifestEntry {
        self.entries[i]
    }

    pub fn spec(&self) -> &FeatureSpec {
        self.extractor.spec()
    }

    pub fn target_len(&self) -> usize {
        self.target_len
    }

    pub fn clip(&self, i: usize) -> Result<AudioClip> {
        pad_to_length(self.manifest.load(self.entries[i])?, self.target_len)
    }
}

impl Dataset for ManifestDataset<'_> {
    fn len(&self) -> usize {
        self.entries.len()
    }

    fn label(&self, i: usize) -> Label {
        self.entries[i].label
    }

    fn features(&self, i: usize) -> Result<FeatureMatrix> {
        self.extractor.extract(&self.clip(i)?)
    }
}

/// Anything that maps feature matrices to a Fall probability.
pub trait Classifier {
    fn fall_probabilities(&self, xs: &[&FeatureMatrix]) -> Result<Vec<f64>>;
}

impl Classifier for Model<f32> {
    /// Clips are scored one at a time so a clip's probability never depends
    /// on what else shares its batch.
    fn fall_probabilities(&self, xs: &[&FeatureMatrix]) -> Result<Vec<f64>> {
        xs.iter()
            .map(|x| Ok(self.forward(x, Mode::Eval, 0)?[Label::Fall.index()] as f64))
            .collect()
    }
}

/// Fall probability of one clip exactly as [`evaluate`] computes it: pad to
/// the model's training length, featurize, Eval-mode forward pass.
pub fn clip_fall_probability(
    model: &Model<f32>,
    extractor: &Extractor,
    clip: AudioClip,
) -> Result<f64> {
    let target = model_target_len(model)?;
    let x = extractor.extract(&pad_to_length(clip, target)?)?;
    Ok(model.fall_probabilities(&[&x])?[0])
}

fn model_features(model: &Model<f32>) -> Result<FeatureSpec> {
    model.cfg.features.ok_or_else(|| {
        Error::CheckpointMismatch("model config does not record its feature extraction".into())
    })
}

fn model_target_len(model: &Model<f32>) -> Result<usize> {
    model.cfg.target_len.ok_or_else(|| {
        Error::CheckpointMismatch("model config does not record its clip length".into())
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipPrediction {
    pub path: String,
    pub category_id: u8,
    pub label: Label,
    pub p_fall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub report: EvalReport,
    pub predictions: Vec<ClipPrediction>,
}

impl Evaluation {
    pub fn from_predictions(predictions: Vec<ClipPrediction>) -> Self {
        let p: Vec<f64> = predictions.iter().map(|c| c.p_fall).collect();
        let truth: Vec<Label> = predictions.iter().map(|c| c.label).collect();
        let mut report = EvalReport::from_probabilities(&p, &truth);
        report.per_pair_recall = pair_recall(&predictions)
            .into_iter()
            .map(|((f, n), r)| (format!("{f}-{n}"), r))
            .collect();
        Self {
            report,
            predictions,
        }
    }
}

/// Scores every clip of `data` with `classifier`, `batch` clips at a time.
pub fn evaluate_dataset(
    classifier: &dyn Classifier,
    data: &ManifestDataset<'_>,
    batch: usize,
) -> Result<Evaluation> {
    let mut predictions = Vec::with_capacity(data.len());
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch.max(1)) {
        let feats = chunk
            .iter()
            .map(|&i| data.features(i))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&FeatureMatrix> = feats.iter().collect();
        let probs = classifier.fall_probabilities(&refs)?;
        for (&i, p) in chunk.iter().zip(probs) {
            let e = data.entry(i);
            predictions.push(ClipPrediction {
                path: e.path.clone(),
                category_id: e.category_id,
                label: e.label,
                p_fall: p,
            });
        }
    }
    Ok(Evaluation::from_predictions(predictions))
}

fn check_model_input(model: &Model<f32>, spec: &FeatureSpec, target_len: usize) -> Result<()> {
    let (rows, cols) = spec.shape(target_len);
    if cols != model.cfg.input_dim || rows > model.cfg.max_frames {
        return Err(Error::ShapeMismatch(format!(
            "features are {rows}x{cols}, model expects width {} and at most {} frames",
            model.cfg.input_dim, model.cfg.max_frames
        )));
    }
    Ok(())
}

/// Eval-mode inference over one split with the features the model was
/// trained on.
pub fn evaluate(
    model: &Model<f32>,
    manifest: &DatasetManifest,
    split: Split,
) -> Result<Evaluation> {
    let spec = model_features(model)?;
    let target_len = model_target_len(model)?;
    check_model_input(model, &spec, target_len)?;
    let data = ManifestDataset::new(manifest, split, spec, target_len)?;
    evaluate_dataset(model, &data, 20)
}

/// Fall recall for every (fall category, no-fall category) pair present in
/// `predictions`. Only clips of the two categories enter a pair, and since
/// recall counts Fall clips alone the no-fall category never moves it.
pub fn pair_recall(predictions: &[ClipPrediction]) -> BTreeMap<(u8, u8), f64> {
    let mut falls = BTreeSet::new();
    let mut nofalls = BTreeSet::new();
    for p in predictions {
        match p.label {
            Label::Fall => falls.insert(p.category_id),
            Label::NoFall => nofalls.insert(p.category_id),
        };
    }
    let mut out = BTreeMap::new();
    for &f in &falls {
        for &n in &nofalls {
            let mut c = Confusion::default();
            for p in predictions
                .iter()
                .filter(|p| p.category_id == f || p.category_id == n)
            {
                c.add(decide(p.p_fall, 0.5), p.label);
            }
            out.insert((f, n), c.recall());
        }
    }
    out
}

/// Pairwise fall recall on the test split. Every category present in the
/// manifest must also appear in the test split.
pub fn pairwise_analysis(
    model: &Model<f32>,
    manifest: &DatasetManifest,
) -> Result<BTreeMap<(u8, u8), f64>> {
    let all: BTreeSet<u8> = manifest.entries.iter().map(|e| e.category_id).collect();
    let test: BTreeSet<u8> = manifest.split(Split::Test).map(|e| e.category_id).collect();
    if let Some(&missing) = all.difference(&test).next() {
        return Err(Error::MissingCategory(missing));
    }
    Ok(pair_recall(
        &evaluate(model, manifest, Split::Test)?.predictions,
    ))
}

/// Trains `cfg` on the manifest's train split, selecting on the val split.
/// `cfg.features` decides the extraction; clips are padded to the
/// manifest's longest clip.
pub fn train_on_manifest(
    manifest: &DatasetManifest,
    cfg: ModelConfig,
    hyper: &TrainHyper,
    seed: u64,
    log: Option<&mut dyn Write>,
) -> Result<TrainOutcome> {
    let spec = cfg
        .features
        .ok_or_else(|| Error::InvalidArgument("model config needs a feature spec".into()))?;
    let target_len = cfg.target_len.unwrap_or(manifest.max_len_samples);
    let mut cfg = cfg;
    cfg.target_len = Some(target_len);
    let train_set = ManifestDataset::new(manifest, Split::Train, spec, target_len)?;
    let val_set = ManifestDataset::new(manifest, Split::Val, spec, target_len)?;
    let model = Model::init(cfg, seed)?;
    check_model_input(&model, &spec, target_len)?;
    let val: Option<&dyn Dataset> = if val_set.is_empty() {
        None
    } else {
        Some(&val_set)
    };
    train(model, &train_set, val, hyper, seed, log)
}
