use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::audio_io::Label;

/// Binary confusion counts with Fall as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Confusion {
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a Label, &'a Label)>) -> Self {
        let mut c = Confusion::default();
        for (pred, truth) in pairs {
            c.add(*pred, *truth);
        }
        c
    }

    pub fn add(&mut self, pred: Label, truth: Label) {
        match (pred, truth) {
            (Label::Fall, Label::Fall) => self.tp += 1,
            (Label::NoFall, Label::NoFall) => self.tn += 1,
            (Label::Fall, Label::NoFall) => self.fp += 1,
            (Label::NoFall, Label::Fall) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(flatten)]
    pub counts: Confusion,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Fall recall per "fall_category-nofall_category" pair.
    #[serde(default)]
    pub per_pair_recall: BTreeMap<String, f64>,
    #[serde(default)]
    pub threshold_sweep: Vec<ThresholdPoint>,
}

impl EvalReport {
    pub fn from_confusion(counts: Confusion) -> Self {
        Self {
            counts,
            accuracy: counts.accuracy(),
            precision: counts.precision(),
            recall: counts.recall(),
            f1: counts.f1(),
            per_pair_recall: BTreeMap::new(),
            threshold_sweep: Vec::new(),
        }
    }

    /// Argmax decisions (Fall when its probability is at least one half).
    pub fn from_probabilities(p_fall: &[f64], truth: &[Label]) -> Self {
        let preds: Vec<Label> = p_fall.iter().map(|&p| decide(p, 0.5)).collect();
        let mut r = Self::from_confusion(Confusion::from_pairs(preds.iter().zip(truth)));
        r.threshold_sweep = threshold_sweep(p_fall, truth, 20);
        r
    }
}

pub fn decide(p_fall: f64, threshold: f64) -> Label {
    if p_fall >= threshold {
        Label::Fall
    } else {
        Label::NoFall
    }
}

/// Precision and recall at thresholds `0, 1/steps, ..., 1`.
pub fn threshold_sweep(p_fall: &[f64], truth: &[Label], steps: usize) -> Vec<ThresholdPoint> {
    (0..=steps)
        .map(|k| {
            let threshold = k as f64 / steps as f64;
            let preds: Vec<Label> = p_fall.iter().map(|&p| decide(p, threshold)).collect();
            let c = Confusion::from_pairs(preds.iter().zip(truth));
            ThresholdPoint {
                threshold,
                precision: c.precision(),
                recall: c.recall(),
                f1: c.f1(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_classifier_on_test_split_sizes() {
        let c = Confusion {
            tp: 87,
            tn: 356,
            fp: 0,
            fn_: 0,
        };
        let r = EvalReport::from_confusion(c);
        assert_eq!((r.accuracy, r.f1), (1.0, 1.0));
    }

    #[test]
    fn balanced_errors() {
        let r = EvalReport::from_confusion(Confusion {
            tp: 1,
            tn: 1,
            fp: 1,
            fn_: 1,
        });
        assert_eq!(
            (r.precision, r.recall, r.f1, r.accuracy),
            (0.5, 0.5, 0.5, 0.5)
        );
    }

    #[test]
    fn zero_denominators_give_zero() {
        let r = EvalReport::from_confusion(Confusion {
            tp: 0,
            tn: 5,
            fp: 0,
            fn_: 0,
        });
        assert_eq!((r.precision, r.recall, r.f1), (0.0, 0.0, 0.0));
        assert_eq!(
            EvalReport::from_confusion(Confusion::default()).accuracy,
            0.0
        );
    }

    #[test]
    fn sweep_endpoints() {
        let truth = [Label::Fall, Label::NoFall, Label::Fall];
        let s = threshold_sweep(&[0.9, 0.4, 0.2], &truth, 4);
        assert_eq!(s.len(), 5);
        assert_eq!(s[0].recall, 1.0);
        assert!((s[0].precision - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(s[2].recall, 0.5);
    }

    #[test]
    fn report_json_uses_fn_key() {
        let r = EvalReport::from_confusion(Confusion {
            tp: 2,
            tn: 3,
            fp: 1,
            fn_: 4,
        });
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        assert_eq!(v["fn"], 4);
        let back: EvalReport = serde_json::from_value(v).unwrap();
        assert_eq!(back, r);
    }
}
