use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{Layout, Model};
use super::optim::Adam;
use super::Mode;
use crate::audio_io::Label;
use crate::dsp::mix_seed;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

/// Indexed source of labelled feature matrices.
pub trait Dataset {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn label(&self, i: usize) -> Label;

    fn features(&self, i: usize) -> Result<FeatureMatrix>;
}

impl Dataset for Vec<(FeatureMatrix, Label)> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn label(&self, i: usize) -> Label {
        self[i].1
    }

    fn features(&self, i: usize) -> Result<FeatureMatrix> {
        Ok(self[i].0.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    /// (Fall, NoFall) loss weights; inverse class frequency when `None`.
    pub class_weights: Option<[f64; 2]>,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            batch_size: 20,
            epochs: 10,
            lr: 1e-5,
            class_weights: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation accuracy (the last
    /// epoch when there is no validation set).
    pub model: Model<f32>,
    pub metrics: Vec<EpochMetrics>,
    pub best_epoch: Option<usize>,
    pub class_weights: [f64; 2],
}

/// Inverse-frequency weights scaled so the majority class weighs 1.
pub fn class_weights(labels: impl IntoIterator<Item = Label>) -> [f64; 2] {
    let mut counts = [0usize; 2];
    for l in labels {
        counts[l.index()] += 1;
    }
    let max = *counts.iter().max().unwrap() as f64;
    counts.map(|c| if c == 0 { 1.0 } else { max / c as f64 })
}

fn diverged(epoch: usize, e: Error) -> Error {
    match e {
        Error::NonFiniteActivation(r) | Error::NonFiniteGradient(r) => {
            Error::DivergedTraining { epoch, reason: r }
        }
        other => other,
    }
}

fn log_record(
    log: &mut Option<&mut dyn Write>,
    epoch: usize,
    split: &str,
    loss: f64,
    accuracy: f64,
) -> Result<()> {
    if let Some(w) = log.as_mut() {
        let rec =
            serde_json::json!({"epoch": epoch, "split": split, "loss": loss, "accuracy": accuracy});
        writeln!(w, "{rec}")?;
    }
    Ok(())
}

/// Eval-mode loss and accuracy over a whole dataset.
pub fn score(
    model: &Model<f32>,
    data: &dyn Dataset,
    weights: [f64; 2],
    batch: usize,
) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut correct = 0;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch.max(1)) {
        let feats = chunk
            .iter()
            .map(|&i| data.features(i))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&FeatureMatrix> = feats.iter().collect();
        let probs = model.predict(&refs, Mode::Eval, 0)?;
        for (p, &i) in probs.iter().zip(chunk) {
            let y = data.label(i).index();
            let p = [p[0] as f64, p[1] as f64];
            loss += super::model::weighted_loss(p, y, weights);
            correct += usize::from((p[0] >= p[1]) == (y == 0));
        }
    }
    let n = data.len().max(1) as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Mini-batch Adam over shuffled batches, keeping the best validation epoch.
pub fn train(
    mut model: Model<f32>,
    train_set: &dyn Dataset,
    val_set: Option<&dyn Dataset>,
    hyper: &TrainHyper,
    seed: u64,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainOutcome> {
    if train_set.is_empty() || val_set.is_some_and(|v| v.is_empty()) {
        return Err(Error::InvalidArgument(
            "train and validation sets must be non-empty".into(),
        ));
    }
    let weights = hyper
        .class_weights
        .unwrap_or_else(|| class_weights((0..train_set.len()).map(|i| train_set.label(i))));
    let mut opt = Adam::new(&model.params, hyper.lr);
    let mut grads = model.grad_buffers();
    let mut metrics = Vec::with_capacity(hyper.epochs);
    let mut best: Option<(f64, usize, Model<f32>)> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=hyper.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed ^ (epoch as u64) << 20));
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (b, chunk) in order.chunks(hyper.batch_size.max(1)).enumerate() {
            let feats = chunk
                .iter()
                .map(|&i| train_set.features(i))
                .collect::<Result<Vec<_>>>()?;
            let batch: Vec<(&FeatureMatrix, usize)> = feats
                .iter()
                .zip(chunk)
                .map(|(f, &i)| (f, train_set.label(i).index()))
                .collect();
            grads
                .iter_mut()
                .for_each(|g| g.iter_mut().for_each(|v| *v = 0.0));
            let dropout_seed = mix_seed(seed ^ ((epoch as u64) << 40) ^ b as u64);
            let out = model
                .loss_and_grads(
                    &batch,
                    weights,
                    Mode::Train,
                    dropout_seed,
                    Layout::Packed,
                    &mut grads,
                )
                .map_err(|e| diverged(epoch, e))?;
            opt.update(&mut model.params, &grads);
            loss_sum += out.loss as f64 * batch.len() as f64;
            correct += out
                .probs
                .iter()
                .zip(&batch)
                .filter(|(p, (_, y))| (p[0] >= p[1]) == (*y == 0))
                .count();
        }
        if !model.params.all_finite() {
            return Err(Error::DivergedTraining {
                epoch,
                reason: "non-finite parameter after update".into(),
            });
        }
        let n = train_set.len() as f64;
        let mut m = EpochMetrics {
            epoch,
            train_loss: loss_sum / n,
            train_accuracy: correct as f64 / n,
            val_loss: None,
            val_accuracy: None,
        };
        log_record(&mut log, epoch, "train", m.train_loss, m.train_accuracy)?;
        if let Some(val) = val_set {
            let (vl, va) =
                score(&model, val, weights, hyper.batch_size).map_err(|e| diverged(epoch, e))?;
            m.val_loss = Some(vl);
            m.val_accuracy = Some(va);
            log_record(&mut log, epoch, "val", vl, va)?;
            if best.as_ref().is_none_or(|(acc, _, _)| va > *acc) {
                best = Some((va, epoch, model.clone()));
            }
        }
        log::info!(
            "epoch {epoch}: train loss {:.4} acc {:.4}, val acc {:?}",
            m.train_loss,
            m.train_accuracy,
            m.val_accuracy
        );
        metrics.push(m);
    }
    let (model, best_epoch) = match best {
        Some((_, e, m)) => (m, Some(e)),
        None => {
            let last = (hyper.epochs > 0).then_some(hyper.epochs);
            (model, last)
        }
    };
    Ok(TrainOutcome {
        model,
        metrics,
        best_epoch,
        class_weights: weights,
    })
}
