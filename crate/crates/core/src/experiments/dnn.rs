use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{evaluate_dataset, Classifier, Evaluation, ManifestDataset};
use crate::audio_io::{DatasetManifest, Label, Split};
use crate::dsp::mix_seed;
use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, FeatureSpec};
use crate::transformer::{
    class_weights, filled, weighted_loss, xavier_uniform, Adam, Dataset, EpochMetrics, Graph,
    ParamId, ParamSet, TrainHyper,
};

/// Hidden layer widths of the dense baseline.
pub const DNN_HIDDEN: [usize; 2] = [256, 64];

/// Fully connected ReLU network over flattened, mask-zeroed features.
#[derive(Clone)]
pub struct Dnn {
    pub params: ParamSet<f32>,
    pub input_dim: usize,
    layers: Vec<(ParamId, ParamId)>,
}

impl Dnn {
    pub fn init(input_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::default();
        let mut layers = Vec::new();
        let mut width = input_dim;
        for (i, out) in DNN_HIDDEN.into_iter().chain([2]).enumerate() {
            let w = params.add(format!("fc{i}.w"), xavier_uniform(width, out, &mut rng));
            let b = params.add(format!("fc{i}.b"), filled(out, 0.0));
            layers.push((w, b));
            width = out;
        }
        Self {
            params,
            input_dim,
            layers,
        }
    }

    fn logits(
        &self,
        gr: &mut Graph<'_, f32>,
        xs: &[&FeatureMatrix],
    ) -> Result<crate::transformer::NodeId> {
        let mut flat = Vec::with_capacity(xs.len() * self.input_dim);
        for x in xs {
            let v = x.masked_flat();
            if v.len() != self.input_dim {
                return Err(Error::ShapeMismatch(format!(
                    "flattened features have {} values, network expects {}",
                    v.len(),
                    self.input_dim
                )));
            }
            flat.extend(v);
        }
        let mut h = gr.input(flat, xs.len(), self.input_dim);
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            h = gr.linear(h, w, Some(b));
            if i + 1 < self.layers.len() {
                h = gr.relu(h);
            }
        }
        Ok(h)
    }

    fn step(
        &self,
        batch: &[(&FeatureMatrix, usize)],
        weights: [f64; 2],
        grads: &mut [Vec<f32>],
    ) -> Result<(f64, Vec<[f32; 2]>)> {
        let xs: Vec<&FeatureMatrix> = batch.iter().map(|b| b.0).collect();
        let labels: Vec<usize> = batch.iter().map(|b| b.1).collect();
        let w: Vec<f32> = labels.iter().map(|&y| weights[y] as f32).collect();
        let mut gr = Graph::new(&self.params, None);
        let logits = self.logits(&mut gr, &xs)?;
        let (loss, probs) = gr.softmax_xent(logits, &labels, &w);
        let value = gr.value(loss)[0] as f64;
        if !value.is_finite() {
            return Err(Error::NonFiniteActivation("dense baseline loss".into()));
        }
        gr.backward(loss, grads);
        Ok((value, probs.chunks_exact(2).map(|p| [p[0], p[1]]).collect()))
    }
}

impl Classifier for Dnn {
    fn fall_probabilities(&self, xs: &[&FeatureMatrix]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(xs.len());
        for x in xs {
            let mut gr = Graph::new(&self.params, None);
            let logits = self.logits(&mut gr, &[x])?;
            let (_, probs) = gr.softmax_xent(logits, &[0], &[1.0]);
            out.push(probs[Label::Fall.index()] as f64);
        }
        Ok(out)
    }
}

fn accuracy_and_loss(net: &Dnn, data: &dyn Dataset, weights: [f64; 2]) -> Result<(f64, f64)> {
    let (mut loss, mut correct) = (0.0, 0usize);
    for i in 0..data.len() {
        let x = data.features(i)?;
        let p = net.fall_probabilities(&[&x])?[0];
        let y = data.label(i).index();
        loss += weighted_loss([p, 1.0 - p], y, weights);
        correct += usize::from((p >= 0.5) == (y == 0));
    }
    let n = data.len().max(1) as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Same optimizer, batch size, epochs, class weighting and best-validation
/// selection as the Transformer.
pub fn train_dnn(
    train_set: &dyn Dataset,
    val_set: Option<&dyn Dataset>,
    hyper: &TrainHyper,
    seed: u64,
    mut log: Option<&mut dyn Write>,
) -> Result<(Dnn, Vec<EpochMetrics>)> {
    if train_set.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let input_dim = train_set.features(0)?.masked_flat().len();
    let mut net = Dnn::init(input_dim, seed);
    let weights = hyper
        .class_weights
        .unwrap_or_else(|| class_weights((0..train_set.len()).map(|i| train_set.label(i))));
    let mut opt = Adam::new(&net.params, hyper.lr);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut metrics = Vec::new();
    let mut best: Option<(f64, Dnn)> = None;
    for epoch in 1..=hyper.epochs {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(
            seed ^ (epoch as u64) << 20,
        )));
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for chunk in order.chunks(hyper.batch_size.max(1)) {
            let feats = chunk
                .iter()
                .map(|&i| train_set.features(i))
                .collect::<Result<Vec<_>>>()?;
            let batch: Vec<(&FeatureMatrix, usize)> = feats
                .iter()
                .zip(chunk)
                .map(|(f, &i)| (f, train_set.label(i).index()))
                .collect();
            let mut grads: Vec<Vec<f32>> = net
                .params
                .iter()
                .map(|(_, _, t)| vec![0.0; t.len()])
                .collect();
            let (loss, probs) =
                net.step(&batch, weights, &mut grads)
                    .map_err(|e| Error::DivergedTraining {
                        epoch,
                        reason: e.to_string(),
                    })?;
            opt.update(&mut net.params, &grads);
            loss_sum += loss * batch.len() as f64;
            correct += probs
                .iter()
                .zip(&batch)
                .filter(|(p, (_, y))| (p[0] >= p[1]) == (*y == 0))
                .count();
        }
        let n = train_set.len() as f64;
        let mut m = EpochMetrics {
            epoch,
            train_loss: loss_sum / n,
            train_accuracy: correct as f64 / n,
            val_loss: None,
            val_accuracy: None,
        };
        if let Some(val) = val_set.filter(|v| !v.is_empty()) {
            let (vl, va) = accuracy_and_loss(&net, val, weights)?;
            m.val_loss = Some(vl);
            m.val_accuracy = Some(va);
            if best.as_ref().is_none_or(|(acc, _)| va > *acc) {
                best = Some((va, net.clone()));
            }
        }
        if let Some(w) = log.as_mut() {
            writeln!(w, "{}", serde_json::to_string(&m)?)?;
        }
        metrics.push(m);
    }
    Ok((best.map_or(net, |(_, n)| n), metrics))
}

/// Trains on the train split (selecting on val) and evaluates on test.
pub fn baseline_dnn(
    manifest: &DatasetManifest,
    spec: FeatureSpec,
    hyper: &TrainHyper,
    seed: u64,
) -> Result<Evaluation> {
    let len = manifest.max_len_samples;
    let train_set = ManifestDataset::new(manifest, Split::Train, spec, len)?;
    let val_set = ManifestDataset::new(manifest, Split::Val, spec, len)?;
    let test_set = ManifestDataset::new(manifest, Split::Test, spec, len)?;
    let (net, _) = train_dnn(&train_set, Some(&val_set), hyper, seed, None)?;
    evaluate_dataset(&net, &test_set, 20)
}
