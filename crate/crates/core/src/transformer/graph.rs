//! Tape-based reverse-mode differentiation over row-major 2-D values.
//!
//! Every node holds a `rows x cols` matrix. Parameters are referenced by id
//! and never copied into the tape; their gradients are accumulated into a
//! caller-owned buffer by [`Graph::backward`].

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{ParamId, ParamSet};
use super::tensor::{gemm, Scalar, View, ViewMut};

pub type NodeId = usize;

pub const LN_EPS: f64 = 1e-5;
pub const LOG_PROB_FLOOR: f64 = 1e-12;

/// Per-sample row range inside a packed batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
}

enum Op<T> {
    Leaf,
    Linear {
        x: NodeId,
        w: ParamId,
        b: Option<ParamId>,
    },
    Add(NodeId, NodeId),
    Relu(NodeId),
    Dropout {
        x: NodeId,
        scale: Vec<T>,
    },
    LayerNorm {
        x: NodeId,
        g: ParamId,
        b: ParamId,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Attention {
        qkv: NodeId,
        heads: usize,
        head_dim: usize,
        segs: Vec<Segment>,
        probs: Vec<T>,
    },
    PrependRow {
        x: NodeId,
        p: ParamId,
        segs: Vec<Segment>,
    },
    GatherRows {
        x: NodeId,
        idx: Vec<usize>,
    },
    SoftmaxXent {
        logits: NodeId,
        dlogits: Vec<T>,
    },
}

struct Node<T> {
    value: Vec<T>,
    rows: usize,
    cols: usize,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Graph<'p, T: Scalar> {
    params: &'p ParamSet<T>,
    nodes: Vec<Node<T>>,
    rng: Option<ChaCha8Rng>,
}

impl<'p, T: Scalar> Graph<'p, T> {
    /// `rng` drives dropout; `None` disables it (evaluation).
    pub fn new(params: &'p ParamSet<T>, rng: Option<ChaCha8Rng>) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            rng,
        }
    }

    fn push(
        &mut self,
        value: Vec<T>,
        rows: usize,
        cols: usize,
        op: Op<T>,
        needs_grad: bool,
    ) -> NodeId {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node {
            value,
            rows,
            cols,
            op,
            needs_grad,
        });
        self.nodes.len() - 1
    }

    pub fn value(&self, id: NodeId) -> &[T] {
        &self.nodes[id].value
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        (self.nodes[id].rows, self.nodes[id].cols)
    }

    pub fn input(&mut self, value: Vec<T>, rows: usize, cols: usize) -> NodeId {
        self.push(value, rows, cols, Op::Leaf, false)
    }

    pub fn linear(&mut self, x: NodeId, w: ParamId, b: Option<ParamId>) -> NodeId {
        let wt = self.params.get(w);
        let (din, dout) = wt.dims2();
        let (rows, cols) = self.shape(x);
        assert_eq!(
            cols,
            din,
            "linear {} expects width {din}, got {cols}",
            self.params.name(w)
        );
        let mut y = vec![T::zero(); rows * dout];
        if let Some(b) = b {
            let bias = self.params.value(b);
            for r in y.chunks_exact_mut(dout) {
                r.copy_from_slice(bias);
            }
        }
        let beta = if b.is_some() { T::one() } else { T::zero() };
        gemm(
            T::one(),
            View::new(&self.nodes[x].value, rows, din),
            View::new(&wt.values, din, dout),
            beta,
            ViewMut::new(&mut y, rows, dout),
        );
        self.push(y, rows, dout, Op::Linear { x, w, b }, true)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.shape(a), self.shape(b));
        let y = self.nodes[a]
            .value
            .iter()
            .zip(&self.nodes[b].value)
            .map(|(&p, &q)| p + q)
            .collect();
        let (rows, cols) = self.shape(a);
        let ng = self.nodes[a].needs_grad || self.nodes[b].needs_grad;
        self.push(y, rows, cols, Op::Add(a, b), ng)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let y = self.nodes[x]
            .value
            .iter()
            .map(|&v| v.max(T::zero()))
            .collect();
        let (rows, cols) = self.shape(x);
        let ng = self.nodes[x].needs_grad;
        self.push(y, rows, cols, Op::Relu(x), ng)
    }

    /// Inverted dropout; identity when the graph has no RNG or `p == 0`.
    pub fn dropout(&mut self, x: NodeId, p: f64) -> NodeId {
        let Some(rng) = self.rng.as_mut().filter(|_| p > 0.0) else {
            return x;
        };
        let keep = T::c(1.0 / (1.0 - p));
        let scale: Vec<T> = (0..self.nodes[x].value.len())
            .map(|_| {
                if rng.random::<f64>() < p {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let y = self.nodes[x]
            .value
            .iter()
            .zip(&scale)
            .map(|(&v, &s)| v * s)
            .collect();
        let (rows, cols) = self.shape(x);
        let ng = self.nodes[x].needs_grad;
        self.push(y, rows, cols, Op::Dropout { x, scale }, ng)
    }

    pub fn layer_norm(&mut self, x: NodeId, g: ParamId, b: ParamId) -> NodeId {
        let (rows, cols) = self.shape(x);
        let (gamma, beta) = (self.params.value(g), self.params.value(b));
        let n = T::c(cols as f64);
        let eps = T::c(LN_EPS);
        let mut xhat = vec![T::zero(); rows * cols];
        let mut inv_std = vec![T::zero(); rows];
        let mut y = vec![T::zero(); rows * cols];
        for r in 0..rows {
            let row = &self.nodes[x].value[r * cols..(r + 1) * cols];
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let is = T::one() / (var + eps).sqrt();
            inv_std[r] = is;
            for c in 0..cols {
                let h = (row[c] - mean) * is;
                xhat[r * cols + c] = h;
                y[r * cols + c] = h * gamma[c] + beta[c];
            }
        }
        self.push(
            y,
            rows,
            cols,
            Op::LayerNorm {
                x,
                g,
                b,
                xhat,
                inv_std,
            },
            true,
        )
    }

    /// Scaled dot-product attention within each segment. `qkv` packs
    /// queries, keys and values as `[Q | K | V]`, each `heads * head_dim`
    /// wide. `key_valid`, when given, marks usable key rows; invalid keys get
    /// exactly zero weight.
    pub fn attention(
        &mut self,
        qkv: NodeId,
        heads: usize,
        head_dim: usize,
        segs: Vec<Segment>,
        key_valid: Option<&[bool]>,
    ) -> NodeId {
        let (rows, cols) = self.shape(qkv);
        let inner = heads * head_dim;
        assert_eq!(cols, 3 * inner);
        let scale = T::c(1.0 / (head_dim as f64).sqrt());
        let total: usize = segs.iter().map(|s| s.len * s.len * heads).sum();
        let mut probs = vec![T::zero(); total];
        let mut out = vec![T::zero(); rows * inner];
        let src = &self.nodes[qkv].value;
        let mut off = 0;
        for s in &segs {
            let l = s.len;
            let base = &src[s.start * cols..(s.start + l) * cols];
            for h in 0..heads {
                let p = &mut probs[off..off + l * l];
                off += l * l;
                gemm(
                    scale,
                    View::block(base, l, cols, h * head_dim, head_dim),
                    View::block(base, l, cols, inner + h * head_dim, head_dim).t(),
                    T::zero(),
                    ViewMut::new(p, l, l),
                );
                for row in p.chunks_exact_mut(l) {
                    if let Some(valid) = key_valid {
                        for (j, v) in row.iter_mut().enumerate() {
                            if !valid[s.start + j] {
                                *v = T::neg_infinity();
                            }
                        }
                    }
                    softmax_in_place(row);
                }
                gemm(
                    T::one(),
                    View::new(p, l, l),
                    View::block(base, l, cols, 2 * inner + h * head_dim, head_dim),
                    T::zero(),
                    ViewMut::block(
                        &mut out[s.start * inner..],
                        l,
                        inner,
                        h * head_dim,
                        head_dim,
                    ),
                );
            }
        }
        let ng = self.nodes[qkv].needs_grad;
        self.push(
            out,
            rows,
            inner,
            Op::Attention {
                qkv,
                heads,
                head_dim,
                segs,
                probs,
            },
            ng,
        )
    }

    /// Attention weights of an attention node, one `len x len` block per
    /// (segment, head) in segment-major order.
    pub fn attention_probs(&self, id: NodeId) -> Option<&[T]> {
        match &self.nodes[id].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Inserts the parameter row before each segment of `x`. Returns the new
    /// node and the segments of the output.
    pub fn prepend_row(
        &mut self,
        x: NodeId,
        p: ParamId,
        segs: &[Segment],
    ) -> (NodeId, Vec<Segment>) {
        let (rows, cols) = self.shape(x);
        let row = self.params.value(p);
        assert_eq!(row.len(), cols, "prepended row width");
        let mut y = Vec::with_capacity((rows + segs.len()) * cols);
        let mut out_segs = Vec::with_capacity(segs.len());
        for s in segs {
            out_segs.push(Segment {
                start: y.len() / cols,
                len: s.len + 1,
            });
            y.extend_from_slice(row);
            y.extend_from_slice(&self.nodes[x].value[s.start * cols..(s.start + s.len) * cols]);
        }
        let n = y.len() / cols;
        let id = self.push(
            y,
            n,
            cols,
            Op::PrependRow {
                x,
                p,
                segs: segs.to_vec(),
            },
            true,
        );
        (id, out_segs)
    }

    pub fn gather_rows(&mut self, x: NodeId, idx: Vec<usize>) -> NodeId {
        let cols = self.nodes[x].cols;
        let mut y = Vec::with_capacity(idx.len() * cols);
        for &i in &idx {
            y.extend_from_slice(&self.nodes[x].value[i * cols..(i + 1) * cols]);
        }
        let ng = self.nodes[x].needs_grad;
        let n = idx.len();
        self.push(y, n, cols, Op::GatherRows { x, idx }, ng)
    }

    /// Mean over rows of `-w[i] * ln(max(softmax(logits_i)[label_i], floor))`.
    /// Returns the 1x1 loss node and the per-row probabilities.
    pub fn softmax_xent(
        &mut self,
        logits: NodeId,
        labels: &[usize],
        weights: &[T],
    ) -> (NodeId, Vec<T>) {
        let (rows, cols) = self.shape(logits);
        assert_eq!(labels.len(), rows);
        let mut probs = self.nodes[logits].value.clone();
        for r in probs.chunks_exact_mut(cols) {
            softmax_in_place(r);
        }
        let inv_b = T::one() / T::c(rows.max(1) as f64);
        let floor = T::c(LOG_PROB_FLOOR);
        let mut loss = T::zero();
        let mut dlogits = vec![T::zero(); rows * cols];
        for r in 0..rows {
            let p = &probs[r * cols..(r + 1) * cols];
            let (y, w) = (labels[r], weights[r]);
            loss -= w * p[y].max(floor).ln();
            if p[y] >= floor {
                for c in 0..cols {
                    let target = if c == y { T::one() } else { T::zero() };
                    dlogits[r * cols + c] = w * inv_b * (p[c] - target);
                }
            }
        }
        let id = self.push(
            vec![loss * inv_b],
            1,
            1,
            Op::SoftmaxXent { logits, dlogits },
            true,
        );
        (id, probs)
    }

    /// Back-propagates from the scalar node `root`, adding parameter
    /// gradients into `grads` (indexed by [`ParamId`]).
    pub fn backward(&self, root: NodeId, grads: &mut [Vec<T>]) {
        let mut g: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        g[root] = Some(vec![T::one(); self.nodes[root].value.len()]);
        for id in (0..=root).rev() {
            let Some(dy) = g[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf => {}
                Op::Linear { x, w, b } => {
                    let (rows, din, dout) = (node.rows, self.nodes[*x].cols, node.cols);
                    gemm(
                        T::one(),
                        View::new(&self.nodes[*x].value, rows, din).t(),
                        View::new(&dy, rows, dout),
                        T::one(),
                        ViewMut::new(&mut grads[w.0], din, dout),
                    );
                    if let Some(b) = b {
                        let gb = &mut grads[b.0];
                        for r in dy.chunks_exact(dout) {
                            gb.iter_mut().zip(r).for_each(|(a, &v)| *a += v);
                        }
                    }
                    if self.nodes[*x].needs_grad {
                        let dx = self.grad_buf(&mut g, *x);
                        gemm(
                            T::one(),
                            View::new(&dy, rows, dout),
                            View::new(self.params.value(*w), din, dout).t(),
                            T::one(),
                            ViewMut::new(dx, rows, din),
                        );
                    }
                }
                Op::Add(a, b) => {
                    for &i in [a, b].iter() {
                        if self.nodes[*i].needs_grad {
                            let dx = self.grad_buf(&mut g, *i);
                            dx.iter_mut().zip(&dy).for_each(|(a, &v)| *a += v);
                        }
                    }
                }
                Op::Relu(x) => {
                    let xv = &self.nodes[*x].value;
                    let dx = self.grad_buf(&mut g, *x);
                    for ((d, &v), &u) in dx.iter_mut().zip(&dy).zip(xv) {
                        if u > T::zero() {
                            *d += v;
                        }
                    }
                }
                Op::Dropout { x, scale } => {
                    let dx = self.grad_buf(&mut g, *x);
                    for ((d, &v), &s) in dx.iter_mut().zip(&dy).zip(scale) {
                        *d += v * s;
                    }
                }
                Op::LayerNorm {
                    x,
                    g: gp,
                    b,
                    xhat,
                    inv_std,
                } => {
                    let cols = node.cols;
                    let gamma = self.params.value(*gp);
                    {
                        let gg = &mut grads[gp.0];
                        for (r, h) in dy.chunks_exact(cols).zip(xhat.chunks_exact(cols)) {
                            for c in 0..cols {
                                gg[c] += r[c] * h[c];
                            }
                        }
                    }
                    {
                        let gb = &mut grads[b.0];
                        for r in dy.chunks_exact(cols) {
                            gb.iter_mut().zip(r).for_each(|(a, &v)| *a += v);
                        }
                    }
                    if self.nodes[*x].needs_grad {
                        let n = T::c(cols as f64);
                        let dx = self.grad_buf(&mut g, *x);
                        let mut dxhat = vec![T::zero(); cols];
                        for r in 0..node.rows {
                            let (dyr, h) = (
                                &dy[r * cols..(r + 1) * cols],
                                &xhat[r * cols..(r + 1) * cols],
                            );
                            for c in 0..cols {
                                dxhat[c] = dyr[c] * gamma[c];
                            }
                            let m1 = dxhat.iter().copied().sum::<T>() / n;
                            let m2 = dxhat.iter().zip(h).map(|(&a, &b)| a * b).sum::<T>() / n;
                            for c in 0..cols {
                                dx[r * cols + c] += inv_std[r] * (dxhat[c] - m1 - h[c] * m2);
                            }
                        }
                    }
                }
                Op::Attention {
                    qkv,
                    heads,
                    head_dim,
                    segs,
                    probs,
                } => {
                    if self.nodes[*qkv].needs_grad {
                        self.attention_backward(&mut g, &dy, *qkv, *heads, *head_dim, segs, probs);
                    }
                }
                Op::PrependRow { x, p, segs } => {
                    let cols = node.cols;
                    let mut out_row = 0;
                    {
                        let gp = &mut grads[p.0];
                        let mut r = 0;
                        for s in segs {
                            gp.iter_mut()
                                .zip(&dy[r * cols..(r + 1) * cols])
                                .for_each(|(a, &v)| *a += v);
                            r += s.len + 1;
                        }
                    }
                    if self.nodes[*x].needs_grad {
                        let dx = self.grad_buf(&mut g, *x);
                        for s in segs {
                            let src = &dy[(out_row + 1) * cols..(out_row + 1 + s.len) * cols];
                            dx[s.start * cols..(s.start + s.len) * cols]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(a, &v)| *a += v);
                            out_row += s.len + 1;
                        }
                    }
                }
                Op::GatherRows { x, idx } => {
                    let cols = node.cols;
                    let dx = self.grad_buf(&mut g, *x);
                    for (k, &i) in idx.iter().enumerate() {
                        dx[i * cols..(i + 1) * cols]
                            .iter_mut()
                            .zip(&dy[k * cols..(k + 1) * cols])
                            .for_each(|(a, &v)| *a += v);
                    }
                }
                Op::SoftmaxXent { logits, dlogits } => {
                    let dx = self.grad_buf(&mut g, *logits);
                    dx.iter_mut()
                        .zip(dlogits)
                        .for_each(|(a, &v)| *a += v * dy[0]);
                }
            }
        }
    }

    fn grad_buf<'g>(&self, g: &'g mut [Option<Vec<T>>], id: NodeId) -> &'g mut Vec<T> {
        let n = self.nodes[id].value.len();
        g[id].get_or_insert_with(|| vec![T::zero(); n])
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        g: &mut [Option<Vec<T>>],
        dy: &[T],
        qkv: NodeId,
        heads: usize,
        head_dim: usize,
        segs: &[Segment],
        probs: &[T],
    ) {
        let cols = self.nodes[qkv].cols;
        let inner = heads * head_dim;
        let scale = T::c(1.0 / (head_dim as f64).sqrt());
        let src = &self.nodes[qkv].value;
        let dqkv = self.grad_buf(g, qkv);
        let mut off = 0;
        let mut dp = Vec::new();
        for s in segs {
            let l = s.len;
            let base = &src[s.start * cols..(s.start + l) * cols];
            let dbase = &mut dqkv[s.start * cols..(s.start + l) * cols];
            let dout = &dy[s.start * inner..(s.start + l) * inner];
            for h in 0..heads {
                let p = &probs[off..off + l * l];
                off += l * l;
                let hd = h * head_dim;
                dp.clear();
                dp.resize(l * l, T::zero());
                // dP = dOut V^T
                gemm(
                    T::one(),
                    View::block(dout, l, inner, hd, head_dim),
                    View::block(base, l, cols, 2 * inner + hd, head_dim).t(),
                    T::zero(),
                    ViewMut::new(&mut dp, l, l),
                );
                // dV += P^T dOut
                gemm(
                    T::one(),
                    View::new(p, l, l).t(),
                    View::block(dout, l, inner, hd, head_dim),
                    T::one(),
                    ViewMut::block(dbase, l, cols, 2 * inner + hd, head_dim),
                );
                // dS = P * (dP - rowsum(dP * P))
                for (dr, pr) in dp.chunks_exact_mut(l).zip(p.chunks_exact(l)) {
                    let dot = dr.iter().zip(pr).map(|(&a, &b)| a * b).sum::<T>();
                    dr.iter_mut()
                        .zip(pr)
                        .for_each(|(d, &q)| *d = q * (*d - dot));
                }
                // dQ += scale dS K ; dK += scale dS^T Q
                gemm(
                    scale,
                    View::new(&dp, l, l),
                    View::block(base, l, cols, inner + hd, head_dim),
                    T::one(),
                    ViewMut::block(dbase, l, cols, hd, head_dim),
                );
                gemm(
                    scale,
                    View::new(&dp, l, l).t(),
                    View::block(base, l, cols, hd, head_dim),
                    T::one(),
                    ViewMut::block(dbase, l, cols, inner + hd, head_dim),
                );
            }
        }
    }
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}
