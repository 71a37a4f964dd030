//! Soft-margin SVM trained by sequential minimal optimization over a
//! precomputed kernel matrix, with second-order working-set selection.
//!
//! Flattened features run to ~137k dimensions, so the Gram matrix of plain
//! dot products is built by streaming the dataset in chunks; the RBF kernel
//! is derived from it through `|a - b|^2 = a.a + b.b - 2 a.b`. A linear
//! model collapses to one weight vector. An RBF model has to keep its
//! support vectors, which is only practical for desk-scale corpora.

use serde::{Deserialize, Serialize};

use super::{evaluate_dataset, Classifier, Evaluation, ManifestDataset};
use crate::audio_io::{DatasetManifest, Label, Split};
use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, FeatureSpec};
use crate::transformer::{gemm, Dataset, View, ViewMut};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Kernel {
    Linear,
    /// `exp(-gamma |a - b|^2)`; `None` means `1 / num_features`.
    Rbf {
        gamma: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub kernel: Kernel,
    pub c: f64,
    /// Stopping tolerance on the maximal KKT violating pair.
    pub tol: f64,
    pub max_iter: usize,
}

impl SvmParams {
    pub fn new(kernel: Kernel) -> Self {
        Self {
            kernel,
            c: 1.0,
            tol: 1e-3,
            max_iter: 1_000_000,
        }
    }
}

#[derive(Debug, Clone)]
enum Expansion {
    Linear(Vec<f64>),
    Rbf {
        gamma: f64,
        /// (alpha_i * y_i, x_i, |x_i|^2)
        support: Vec<(f64, Vec<f32>, f64)>,
    },
}

#[derive(Debug, Clone)]
pub struct Svm {
    pub bias: f64,
    pub input_dim: usize,
    expansion: Expansion,
}

impl Svm {
    pub fn decision(&self, x: &[f32]) -> Result<f64> {
        if x.len() != self.input_dim {
            return Err(Error::ShapeMismatch(format!(
                "SVM expects {} features, got {}",
                self.input_dim,
                x.len()
            )));
        }
        let s = match &self.expansion {
            Expansion::Linear(w) => dot64(w, x),
            Expansion::Rbf { gamma, support } => {
                let xx = sq_norm(x);
                support
                    .iter()
                    .map(|(coef, sv, ss)| {
                        coef * (-gamma * (ss + xx - 2.0 * dot(sv, x)).max(0.0)).exp()
                    })
                    .sum()
            }
        };
        Ok(s + self.bias)
    }

    pub fn support_vectors(&self) -> Option<usize> {
        match &self.expansion {
            Expansion::Linear(_) => None,
            Expansion::Rbf { support, .. } => Some(support.len()),
        }
    }
}

impl Classifier for Svm {
    /// Logistic squashing of the decision value, so the argmax rule used
    /// everywhere else reduces to the sign of the kernel expansion.
    fn fall_probabilities(&self, xs: &[&FeatureMatrix]) -> Result<Vec<f64>> {
        xs.iter()
            .map(|x| Ok(1.0 / (1.0 + (-self.decision(&x.masked_flat())?).exp())))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SvmFit {
    pub model: Svm,
    pub alphas: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Largest margin violation over the training set after fitting.
    pub max_kkt_violation: f64,
}

impl SvmFit {
    pub fn check_converged(&self) -> Result<()> {
        if self.converged {
            Ok(())
        } else {
            Err(Error::NonConvergence {
                passes: self.iterations,
            })
        }
    }
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&p, &q)| p as f64 * q as f64).sum()
}

fn dot64(a: &[f64], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&p, &q)| p * q as f64).sum()
}

fn sq_norm(a: &[f32]) -> f64 {
    dot(a, a)
}

fn sign(label: Label) -> f64 {
    match label {
        Label::Fall => 1.0,
        Label::NoFall => -1.0,
    }
}

/// Flattened, mask-zeroed features of every clip.
pub fn flatten_dataset(data: &dyn Dataset) -> Result<Vec<Vec<f32>>> {
    (0..data.len())
        .map(|i| Ok(data.features(i)?.masked_flat()))
        .collect()
}

fn load_rows(
    data: &dyn Dataset,
    range: std::ops::Range<usize>,
    dim: &mut Option<usize>,
) -> Result<Vec<f32>> {
    let mut out = Vec::new();
    for i in range {
        let v = data.features(i)?.masked_flat();
        match *dim {
            None => *dim = Some(v.len()),
            Some(d) if d != v.len() => {
                return Err(Error::ShapeMismatch(format!(
                    "clip {i} flattens to {} values, expected {d}",
                    v.len()
                )))
            }
            _ => {}
        }
        out.extend(v);
    }
    Ok(out)
}

/// Row-major `n x n` matrix of dot products between flattened clips, and
/// the feature count. At most two chunks of `chunk` clips are resident.
pub fn gram_matrix(data: &dyn Dataset, chunk: usize) -> Result<(Vec<f64>, usize)> {
    let n = data.len();
    let chunk = chunk.max(1);
    let mut dim = None;
    let mut g = vec![0.0; n * n];
    let starts: Vec<usize> = (0..n).step_by(chunk).collect();
    for (ci, &a0) in starts.iter().enumerate() {
        let a1 = (a0 + chunk).min(n);
        let a = load_rows(data, a0..a1, &mut dim)?;
        let d = dim.unwrap_or(0);
        for &b0 in &starts[ci..] {
            let b1 = (b0 + chunk).min(n);
            let b_owned;
            let b: &[f32] = if b0 == a0 {
                &a
            } else {
                b_owned = load_rows(data, b0..b1, &mut dim)?;
                &b_owned
            };
            let (m, k) = (a1 - a0, b1 - b0);
            let mut block = vec![0f32; m * k];
            gemm(
                1.0,
                View::new(&a, m, d),
                View::new(b, k, d).t(),
                0.0,
                ViewMut::new(&mut block, m, k),
            );
            for r in 0..m {
                for c in 0..k {
                    let v = block[r * k + c] as f64;
                    g[(a0 + r) * n + b0 + c] = v;
                    g[(b0 + c) * n + a0 + r] = v;
                }
            }
        }
    }
    Ok((g, dim.unwrap_or(0)))
}

fn kernel_from_gram(gram: &[f64], n: usize, kernel: Kernel, dim: usize) -> (Vec<f64>, Option<f64>) {
    match kernel {
        Kernel::Linear => (gram.to_vec(), None),
        Kernel::Rbf { gamma } => {
            let gamma = gamma.unwrap_or(1.0 / dim.max(1) as f64);
            let mut k = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    let d2 = (gram[i * n + i] + gram[j * n + j] - 2.0 * gram[i * n + j]).max(0.0);
                    k[i * n + j] = (-gamma * d2).exp();
                }
            }
            (k, Some(gamma))
        }
    }
}

struct SmoResult {
    alphas: Vec<f64>,
    bias: f64,
    iterations: usize,
    converged: bool,
}

/// Dual solver for `min 1/2 a'Qa - e'a, 0 <= a <= C, y'a = 0` with
/// `Q_ij = y_i y_j K_ij`.
fn smo(k: &[f64], y: &[f64], c: f64, tol: f64, max_iter: usize) -> SmoResult {
    let n = y.len();
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let up = |a: f64, yt: f64| (yt > 0.0 && a < c) || (yt < 0.0 && a > 0.0);
    let low = |a: f64, yt: f64| (yt > 0.0 && a > 0.0) || (yt < 0.0 && a < c);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            if up(alpha[t], y[t]) && -y[t] * grad[t] >= gmax {
                gmax = -y[t] * grad[t];
                i = t;
            }
        }
        let mut gmin = f64::INFINITY;
        let mut j = usize::MAX;
        let mut best = f64::INFINITY;
        for t in 0..n {
            if !low(alpha[t], y[t]) {
                continue;
            }
            let v = -y[t] * grad[t];
            gmin = gmin.min(v);
            if i != usize::MAX && v < gmax {
                let b = gmax - v;
                let a = (k[i * n + i] + k[t * n + t] - 2.0 * k[i * n + t]).max(1e-12);
                let obj = -b * b / a;
                if obj <= best {
                    best = obj;
                    j = t;
                }
            }
        }
        if i == usize::MAX || j == usize::MAX || gmax - gmin < tol {
            converged = true;
            break;
        }
        iterations += 1;

        let (yi, yj) = (y[i], y[j]);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        let quad = (k[i * n + i] + k[j * n + j] - 2.0 * k[i * n + j]).max(1e-12);
        if yi != yj {
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 && alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = diff;
            } else if diff <= 0.0 && alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 && alpha[i] > c {
                alpha[i] = c;
                alpha[j] = c - diff;
            } else if diff <= 0.0 && alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c && alpha[i] > c {
                alpha[i] = c;
                alpha[j] = sum - c;
            } else if sum <= c && alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c && alpha[j] > c {
                alpha[j] = c;
                alpha[i] = sum - c;
            } else if sum <= c && alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += y[t] * (yi * k[t * n + i] * di + yj * k[t * n + j] * dj);
        }
    }

    // Offset: average over free vectors, else the midpoint of the feasible
    // interval.
    let (mut sum, mut free) = (0.0, 0usize);
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] > 0.0 && alpha[t] < c {
            sum += yg;
            free += 1;
        } else if (alpha[t] >= c && y[t] < 0.0) || (alpha[t] <= 0.0 && y[t] > 0.0) {
            ub = ub.min(yg);
        } else {
            lb = lb.max(yg);
        }
    }
    let rho = if free > 0 {
        sum / free as f64
    } else {
        (ub + lb) / 2.0
    };
    SmoResult {
        alphas: alpha,
        bias: -rho,
        iterations,
        converged,
    }
}

/// Largest violation of the soft-margin optimality conditions on the
/// training set: `y f(x) >= 1` for `a = 0`, `y f(x) = 1` for `0 < a < C`,
/// `y f(x) <= 1` for `a = C`.
fn kkt_violation(k: &[f64], y: &[f64], alphas: &[f64], bias: f64, c: f64) -> f64 {
    let n = y.len();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let f: f64 = (0..n).map(|j| alphas[j] * y[j] * k[i * n + j]).sum::<f64>() + bias;
        let m = y[i] * f;
        let v = if alphas[i] <= 0.0 {
            (1.0 - m).max(0.0)
        } else if alphas[i] >= c {
            (m - 1.0).max(0.0)
        } else {
            (m - 1.0).abs()
        };
        worst = worst.max(v);
    }
    worst
}

/// Fits an SVM on every clip of `data`.
pub fn train_svm(data: &dyn Dataset, params: &SvmParams) -> Result<SvmFit> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let n = data.len();
    let (gram, dim) = gram_matrix(data, 256)?;
    let (k, gamma) = kernel_from_gram(&gram, n, params.kernel, dim);
    drop(gram);
    let y: Vec<f64> = (0..n).map(|i| sign(data.label(i))).collect();
    let res = smo(&k, &y, params.c, params.tol, params.max_iter);
    if !res.converged {
        log::warn!(
            "SMO stopped after {} iterations without converging",
            res.iterations
        );
    }
    let max_kkt_violation = kkt_violation(&k, &y, &res.alphas, res.bias, params.c);
    drop(k);

    let support: Vec<usize> = (0..n).filter(|&i| res.alphas[i] > 0.0).collect();
    let expansion = match gamma {
        None => {
            let mut w = vec![0.0; dim];
            for &i in &support {
                let coef = res.alphas[i] * y[i];
                for (wv, &xv) in w.iter_mut().zip(&data.features(i)?.masked_flat()) {
                    *wv += coef * xv as f64;
                }
            }
            Expansion::Linear(w)
        }
        Some(gamma) => Expansion::Rbf {
            gamma,
            support: support
                .iter()
                .map(|&i| {
                    let x = data.features(i)?.masked_flat();
                    let s = sq_norm(&x);
                    Ok((res.alphas[i] * y[i], x, s))
                })
                .collect::<Result<_>>()?,
        },
    };
    Ok(SvmFit {
        model: Svm {
            bias: res.bias,
            input_dim: dim,
            expansion,
        },
        alphas: res.alphas,
        iterations: res.iterations,
        converged: res.converged,
        max_kkt_violation,
    })
}

/// Fits on the train split and evaluates on test. A fit that hit the
/// iteration cap is still evaluated; `SvmFit::check_converged` reports it.
pub fn baseline_svm(
    manifest: &DatasetManifest,
    spec: FeatureSpec,
    params: &SvmParams,
) -> Result<(Evaluation, SvmFit)> {
    let len = manifest.max_len_samples;
    let train_set = ManifestDataset::new(manifest, Split::Train, spec, len)?;
    let test_set = ManifestDataset::new(manifest, Split::Test, spec, len)?;
    let fit = train_svm(&train_set, params)?;
    let eval = evaluate_dataset(&fit.model, &test_set, 64)?;
    Ok((eval, fit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{FeatureKind, FeatureMeta};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn point(x: f32, y: f32, label: Label) -> (FeatureMatrix, Label) {
        let m = FeatureMatrix {
            data: vec![x, y],
            rows: 1,
            cols: 2,
            mask: vec![true],
            kind: FeatureKind::SegmentedRaw,
            meta: FeatureMeta::default(),
        };
        (m, label)
    }

    fn accuracy(model: &Svm, data: &[(FeatureMatrix, Label)]) -> f64 {
        let hits = data
            .iter()
            .filter(|(x, l)| (model.decision(&x.data).unwrap() >= 0.0) == (*l == Label::Fall))
            .count();
        hits as f64 / data.len() as f64
    }

    fn blobs(seed: u64) -> Vec<(FeatureMatrix, Label)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..40)
            .map(|i| {
                let (cx, l) = if i % 2 == 0 {
                    (2.0, Label::Fall)
                } else {
                    (-2.0, Label::NoFall)
                };
                point(
                    cx + rng.random_range(-0.5..0.5),
                    rng.random_range(-1.0..1.0),
                    l,
                )
            })
            .collect()
    }

    fn xor(seed: u64) -> Vec<(FeatureMatrix, Label)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..80)
            .map(|i| {
                let (sx, sy) = [(1.0, 1.0), (-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0)][i % 4];
                let l = if sx * sy > 0.0 {
                    Label::Fall
                } else {
                    Label::NoFall
                };
                point(
                    sx + rng.random_range(-0.25..0.25),
                    sy + rng.random_range(-0.25..0.25),
                    l,
                )
            })
            .collect()
    }

    #[test]
    fn separable_blobs_linear() {
        let data = blobs(1);
        let fit = train_svm(&data, &SvmParams::new(Kernel::Linear)).unwrap();
        fit.check_converged().unwrap();
        assert_eq!(accuracy(&fit.model, &data), 1.0);
        assert_eq!(accuracy(&fit.model, &blobs(2)), 1.0);
    }

    #[test]
    fn xor_needs_a_nonlinear_kernel() {
        let data = xor(3);
        let lin = train_svm(&data, &SvmParams::new(Kernel::Linear)).unwrap();
        assert!(
            accuracy(&lin.model, &data) <= 0.75,
            "linear {}",
            accuracy(&lin.model, &data)
        );
        let rbf = train_svm(&data, &SvmParams::new(Kernel::Rbf { gamma: None })).unwrap();
        rbf.check_converged().unwrap();
        assert_eq!(accuracy(&rbf.model, &data), 1.0);
        assert_eq!(accuracy(&rbf.model, &xor(4)), 1.0);
    }

    #[test]
    fn support_vectors_satisfy_kkt() {
        for (data, kernel) in [
            (blobs(5), Kernel::Linear),
            (xor(6), Kernel::Rbf { gamma: None }),
        ] {
            let fit = train_svm(&data, &SvmParams::new(kernel)).unwrap();
            assert!(
                fit.max_kkt_violation <= 1e-3,
                "{kernel:?}: {}",
                fit.max_kkt_violation
            );
            let y: f64 = data
                .iter()
                .zip(&fit.alphas)
                .map(|((_, l), a)| sign(*l) * a)
                .sum();
            assert!(y.abs() < 1e-9);
            assert!(fit.alphas.iter().all(|&a| (0.0..=1.0).contains(&a)));
        }
    }

    #[test]
    fn iteration_cap_reports_nonconvergence_with_usable_model() {
        let data = xor(7);
        let params = SvmParams {
            max_iter: 2,
            ..SvmParams::new(Kernel::Rbf { gamma: None })
        };
        let fit = train_svm(&data, &params).unwrap();
        assert!(matches!(
            fit.check_converged(),
            Err(Error::NonConvergence { passes: 2 })
        ));
        assert!(fit.model.decision(&data[0].0.data).unwrap().is_finite());
    }

    #[test]
    fn chunked_gram_matches_direct_dot_products() {
        let data = xor(8);
        let (g, dim) = gram_matrix(&data, 7).unwrap();
        assert_eq!(dim, 2);
        let n = data.len();
        for i in 0..n {
            for j in 0..n {
                let want = dot(&data[i].0.data, &data[j].0.data);
                assert!((g[i * n + j] - want).abs() < 1e-5);
            }
        }
    }
}
