//! Finite-difference verification of the analytic gradients.

use super::model::{Layout, Model};
use super::params::ParamId;
use super::Mode;
use crate::error::Result;
use crate::features::FeatureMatrix;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Entries whose coarse central difference straddled a ReLU kink or lost
    /// precision and were re-measured with the fine step.
    pub refined: usize,
    pub max_rel_error: f64,
    pub worst: String,
}

/// `|a - n| / max(|a|, |n|, 1e-6)`. The floor keeps round-off in the
/// difference quotient (around 1e-11 here) from dominating gradients that
/// are exactly zero, such as those of attention key biases.
pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Compares every parameter scalar's analytic gradient with a central
/// difference of step `eps`. Entries that disagree by more than `tol` are
/// re-measured with step `fine_eps`; the reported error is the one from
/// the final measurement.
pub fn check_gradients(
    model: &Model<f64>,
    batch: &[(&FeatureMatrix, usize)],
    class_weights: [f64; 2],
    layout: Layout,
    eps: f64,
    fine_eps: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    let loss = |m: &Model<f64>| -> Result<f64> {
        let mut g = m.grad_buffers();
        Ok(
            m.loss_and_grads(batch, class_weights, Mode::Eval, 0, layout, &mut g)?
                .loss,
        )
    };
    let mut analytic = model.grad_buffers();
    model.loss_and_grads(batch, class_weights, Mode::Eval, 0, layout, &mut analytic)?;
    let mut probe = model.clone();
    let mut report = GradCheckReport {
        checked: 0,
        refined: 0,
        max_rel_error: 0.0,
        worst: String::new(),
    };
    for (pi, grad) in analytic.iter().enumerate() {
        let id = ParamId(pi);
        for (k, &a) in grad.iter().enumerate() {
            let orig = probe.params.get(id).values[k];
            let mut central = |h: f64| -> Result<f64> {
                probe.params.get_mut(id).values[k] = orig + h;
                let up = loss(&probe)?;
                probe.params.get_mut(id).values[k] = orig - h;
                let down = loss(&probe)?;
                probe.params.get_mut(id).values[k] = orig;
                Ok((up - down) / (2.0 * h))
            };
            let mut numeric = central(eps)?;
            let mut rel = relative_error(a, numeric);
            if rel > tol {
                numeric = central(fine_eps)?;
                rel = relative_error(a, numeric);
                report.refined += 1;
            }
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = format!(
                    "{}[{k}]: analytic {a:e}, numeric {numeric:e}",
                    model.params.name(id)
                );
            }
        }
    }
    Ok(report)
}
