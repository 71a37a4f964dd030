use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, NodeId, Segment};
use super::params::{filled, xavier_uniform, ParamId, ParamSet};
use super::tensor::Scalar;
use super::{Mode, ModelConfig};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

/// How a batch is laid out for the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// Only valid frames enter the encoder, keeping their original positions.
    Packed,
    /// Every frame enters; invalid frames are excluded as attention keys.
    Full,
}

struct LayerIds {
    ln1: (ParamId, ParamId),
    qkv: (ParamId, ParamId),
    out: (ParamId, ParamId),
    ln2: (ParamId, ParamId),
    ff1: (ParamId, ParamId),
    ff2: (ParamId, ParamId),
}

struct Ids {
    cls: ParamId,
    proj: Option<(ParamId, ParamId)>,
    layers: Vec<LayerIds>,
    final_ln: Option<(ParamId, ParamId)>,
    mlp: Vec<(ParamId, ParamId)>,
    head: (ParamId, ParamId),
}

/// Expected parameter names and shapes for a configuration, in creation order.
pub(crate) fn param_layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let d = cfg.d_model;
    let inner = cfg.attn_inner();
    let mut v: Vec<(String, Vec<usize>)> = vec![("cls".into(), vec![cfg.input_dim])];
    let lin = |v: &mut Vec<_>, name: &str, i: usize, o: usize| {
        v.push((format!("{name}.w"), vec![i, o]));
        v.push((format!("{name}.b"), vec![o]));
    };
    if cfg.use_projection {
        lin(&mut v, "proj", cfg.input_dim, d);
    }
    for l in 0..cfg.n_layers {
        v.push((format!("layer{l}.ln1.g"), vec![d]));
        v.push((format!("layer{l}.ln1.b"), vec![d]));
        lin(&mut v, &format!("layer{l}.attn.qkv"), d, 3 * inner);
        lin(&mut v, &format!("layer{l}.attn.out"), inner, d);
        v.push((format!("layer{l}.ln2.g"), vec![d]));
        v.push((format!("layer{l}.ln2.b"), vec![d]));
        lin(&mut v, &format!("layer{l}.ff1"), d, cfg.ff_dim);
        lin(&mut v, &format!("layer{l}.ff2"), cfg.ff_dim, d);
    }
    if cfg.norm_first {
        v.push(("final_ln.g".into(), vec![d]));
        v.push(("final_ln.b".into(), vec![d]));
    }
    let mut width = d;
    for (i, &m) in cfg.mlp_head.iter().enumerate() {
        lin(&mut v, &format!("mlp{i}"), width, m);
        width = m;
    }
    lin(&mut v, "head", width, cfg.n_classes);
    v
}

impl Ids {
    fn resolve<T: Scalar>(cfg: &ModelConfig, ps: &ParamSet<T>) -> Result<Self> {
        for (name, shape) in param_layout(cfg) {
            let id = ps
                .id(&name)
                .ok_or_else(|| Error::CheckpointMismatch(format!("missing parameter {name}")))?;
            if ps.get(id).shape != shape {
                return Err(Error::CheckpointMismatch(format!(
                    "{name} has shape {:?}, config expects {shape:?}",
                    ps.get(id).shape
                )));
            }
        }
        let id = |n: &str| ps.id(n).expect("checked above");
        let pair = |n: &str, a: &str, b: &str| (id(&format!("{n}.{a}")), id(&format!("{n}.{b}")));
        Ok(Self {
            cls: id("cls"),
            proj: cfg.use_projection.then(|| pair("proj", "w", "b")),
            layers: (0..cfg.n_layers)
                .map(|l| LayerIds {
                    ln1: pair(&format!("layer{l}.ln1"), "g", "b"),
                    qkv: pair(&format!("layer{l}.attn.qkv"), "w", "b"),
                    out: pair(&format!("layer{l}.attn.out"), "w", "b"),
                    ln2: pair(&format!("layer{l}.ln2"), "g", "b"),
                    ff1: pair(&format!("layer{l}.ff1"), "w", "b"),
                    ff2: pair(&format!("layer{l}.ff2"), "w", "b"),
                })
                .collect(),
            final_ln: cfg.norm_first.then(|| pair("final_ln", "g", "b")),
            mlp: (0..cfg.mlp_head.len())
                .map(|i| pair(&format!("mlp{i}"), "w", "b"))
                .collect(),
            head: pair("head", "w", "b"),
        })
    }
}

/// Sinusoidal encoding: even columns sin, odd columns cos.
pub fn position_encoding(pos: usize, d: usize) -> Vec<f64> {
    (0..d)
        .map(|i| {
            let angle = pos as f64 / 10_000f64.powf((2 * (i / 2)) as f64 / d as f64);
            if i % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}

/// Encoder classifier: configuration plus parameters.
pub struct Model<T: Scalar> {
    pub cfg: ModelConfig,
    pub params: ParamSet<T>,
    ids: Ids,
}

impl<T: Scalar> Clone for Model<T> {
    fn clone(&self) -> Self {
        Self::from_params(self.cfg.clone(), self.params.clone()).expect("valid model")
    }
}

pub struct BatchOutput<T> {
    pub loss: T,
    /// Class probabilities per sample (Fall, NoFall).
    pub probs: Vec<[T; 2]>,
}

struct Built {
    logits: NodeId,
    attention: Vec<NodeId>,
}

impl<T: Scalar> Model<T> {
    /// Xavier-uniform weights, zero biases, unit layer-norm gains and a CLS
    /// row of ones.
    pub fn init(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::default();
        for (name, shape) in param_layout(&cfg) {
            let t = if name == "cls" {
                filled(shape[0], cfg.cls_init)
            } else if shape.len() == 2 {
                xavier_uniform(shape[0], shape[1], &mut rng)
            } else if name.ends_with(".g") {
                filled(shape[0], 1.0)
            } else {
                filled(shape[0], 0.0)
            };
            ps.add(name, t);
        }
        Self::from_params(cfg, ps)
    }

    pub fn from_params(cfg: ModelConfig, params: ParamSet<T>) -> Result<Self> {
        cfg.validate()?;
        let ids = Ids::resolve(&cfg, &params)?;
        Ok(Self { cfg, params, ids })
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model::from_params(self.cfg.clone(), self.params.cast()).expect("same layout")
    }

    /// Zeroed gradient buffers, one per parameter.
    pub fn grad_buffers(&self) -> Vec<Vec<T>> {
        self.params
            .iter()
            .map(|(_, _, t)| vec![T::zero(); t.len()])
            .collect()
    }

    fn check_input(&self, x: &FeatureMatrix) -> Result<()> {
        if x.cols != self.cfg.input_dim {
            return Err(Error::ShapeMismatch(format!(
                "input has {} columns, model expects {}",
                x.cols, self.cfg.input_dim
            )));
        }
        if x.rows > self.cfg.max_frames {
            return Err(Error::ShapeMismatch(format!(
                "input has {} frames, model supports at most {}",
                x.rows, self.cfg.max_frames
            )));
        }
        Ok(())
    }

    fn build(&self, gr: &mut Graph<'_, T>, xs: &[&FeatureMatrix], layout: Layout) -> Result<Built> {
        let cfg = &self.cfg;
        let din = cfg.input_dim;
        let mut data = Vec::new();
        let mut segs = Vec::with_capacity(xs.len());
        let mut positions = Vec::new();
        let mut key_valid = Vec::new();
        let mut rows = 0;
        for x in xs {
            self.check_input(x)?;
            let keep: Vec<usize> = match layout {
                Layout::Packed => (0..x.rows).filter(|&i| x.mask[i]).collect(),
                Layout::Full => (0..x.rows).collect(),
            };
            segs.push(Segment {
                start: rows,
                len: keep.len(),
            });
            rows += keep.len();
            positions.push(0);
            key_valid.push(true);
            for i in keep {
                data.extend(x.row(i).iter().map(|&v| T::c(v as f64)));
                positions.push(i + 1);
                key_valid.push(x.mask[i]);
            }
        }
        let input = gr.input(data, rows, din);
        let (mut h, segs) = gr.prepend_row(input, self.ids.cls, &segs);
        if let Some((w, b)) = self.ids.proj {
            h = gr.linear(h, w, Some(b));
        }
        let d = cfg.d_model;
        let mut pe = Vec::with_capacity(positions.len() * d);
        for &p in &positions {
            pe.extend(position_encoding(p, d).into_iter().map(T::c));
        }
        let pe = gr.input(pe, positions.len(), d);
        h = gr.add(h, pe);
        h = gr.dropout(h, cfg.dropout);

        let mask = (layout == Layout::Full).then_some(key_valid.as_slice());
        let mut attention = Vec::with_capacity(cfg.n_layers);
        for l in &self.ids.layers {
            let attend = |gr: &mut Graph<'_, T>, x: NodeId, attention: &mut Vec<NodeId>| {
                let qkv = gr.linear(x, l.qkv.0, Some(l.qkv.1));
                let a = gr.attention(qkv, cfg.n_heads, cfg.head_dim(), segs.clone(), mask);
                attention.push(a);
                let o = gr.linear(a, l.out.0, Some(l.out.1));
                gr.dropout(o, cfg.dropout)
            };
            let feed = |gr: &mut Graph<'_, T>, x: NodeId| {
                let f = gr.linear(x, l.ff1.0, Some(l.ff1.1));
                let f = gr.relu(f);
                let f = gr.linear(f, l.ff2.0, Some(l.ff2.1));
                gr.dropout(f, cfg.dropout)
            };
            if cfg.norm_first {
                let n = gr.layer_norm(h, l.ln1.0, l.ln1.1);
                let a = attend(gr, n, &mut attention);
                h = gr.add(h, a);
                let n = gr.layer_norm(h, l.ln2.0, l.ln2.1);
                let f = feed(gr, n);
                h = gr.add(h, f);
            } else {
                let a = attend(gr, h, &mut attention);
                let s = gr.add(h, a);
                h = gr.layer_norm(s, l.ln1.0, l.ln1.1);
                let f = feed(gr, h);
                let s = gr.add(h, f);
                h = gr.layer_norm(s, l.ln2.0, l.ln2.1);
            }
        }
        if let Some((g, b)) = self.ids.final_ln {
            h = gr.layer_norm(h, g, b);
        }
        let mut z = gr.gather_rows(h, segs.iter().map(|s| s.start).collect());
        for &(w, b) in &self.ids.mlp {
            z = gr.linear(z, w, Some(b));
            z = gr.relu(z);
        }
        let logits = gr.linear(z, self.ids.head.0, Some(self.ids.head.1));
        if let Some(bad) = gr.value(logits).iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteActivation(format!(
                "logit {bad} is not finite"
            )));
        }
        Ok(Built { logits, attention })
    }

    fn graph_rng(mode: Mode, seed: u64) -> Option<ChaCha8Rng> {
        (mode == Mode::Train).then(|| ChaCha8Rng::seed_from_u64(seed))
    }

    /// Class probabilities (Fall, NoFall) for each input.
    pub fn predict(&self, xs: &[&FeatureMatrix], mode: Mode, seed: u64) -> Result<Vec<[T; 2]>> {
        self.predict_with(xs, mode, seed, Layout::Packed)
    }

    pub fn predict_with(
        &self,
        xs: &[&FeatureMatrix],
        mode: Mode,
        seed: u64,
        layout: Layout,
    ) -> Result<Vec<[T; 2]>> {
        let mut gr = Graph::new(&self.params, Self::graph_rng(mode, seed));
        let built = self.build(&mut gr, xs, layout)?;
        let mut out = Vec::with_capacity(xs.len());
        for r in gr.value(built.logits).chunks_exact(2) {
            let mut p = [r[0], r[1]];
            super::graph::softmax_in_place(&mut p);
            out.push(p);
        }
        Ok(out)
    }

    /// Single-input forward pass.
    pub fn forward(&self, x: &FeatureMatrix, mode: Mode, seed: u64) -> Result<[T; 2]> {
        Ok(self.predict(&[x], mode, seed)?[0])
    }

    /// Attention weights of every layer for one input, computed over all
    /// frames with invalid frames masked as keys. Each entry holds one
    /// `(N+1) x (N+1)` block per head.
    pub fn attention_maps(&self, x: &FeatureMatrix) -> Result<Vec<Vec<T>>> {
        let mut gr = Graph::new(&self.params, None);
        let built = self.build(&mut gr, &[x], Layout::Full)?;
        Ok(built
            .attention
            .iter()
            .map(|&a| gr.attention_probs(a).expect("attention node").to_vec())
            .collect())
    }

    /// Mean weighted cross-entropy over the batch; parameter gradients are
    /// added into `grads`.
    pub fn loss_and_grads(
        &self,
        batch: &[(&FeatureMatrix, usize)],
        class_weights: [f64; 2],
        mode: Mode,
        seed: u64,
        layout: Layout,
        grads: &mut [Vec<T>],
    ) -> Result<BatchOutput<T>> {
        let xs: Vec<&FeatureMatrix> = batch.iter().map(|b| b.0).collect();
        let labels: Vec<usize> = batch.iter().map(|b| b.1).collect();
        let weights: Vec<T> = labels.iter().map(|&y| T::c(class_weights[y])).collect();
        let mut gr = Graph::new(&self.params, Self::graph_rng(mode, seed));
        let built = self.build(&mut gr, &xs, layout)?;
        let (loss, probs) = gr.softmax_xent(built.logits, &labels, &weights);
        let loss_value = gr.value(loss)[0];
        gr.backward(loss, grads);
        for (g, (_, name, _)) in grads.iter().zip(self.params.iter()) {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient(name.to_string()));
            }
        }
        Ok(BatchOutput {
            loss: loss_value,
            probs: probs.chunks_exact(2).map(|p| [p[0], p[1]]).collect(),
        })
    }
}

/// `-w[label] * ln(max(probs[label], 1e-12))` for one prediction.
pub fn weighted_loss(probs: [f64; 2], label: usize, class_weights: [f64; 2]) -> f64 {
    -class_weights[label] * probs[label].max(super::graph::LOG_PROB_FLOOR).ln()
}
