use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const THRESHOLD: f64 = 0.5;

/// A positive-class probability and whether the subject has the disease.
pub type Score = (f64, bool);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    #[serde(with = "super::nonfinite")]
    pub acc: f64,
    /// NaN without positive subjects.
    #[serde(with = "super::nonfinite")]
    pub sen: f64,
    /// NaN without negative subjects.
    #[serde(with = "super::nonfinite")]
    pub spe: f64,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        f64::NAN
    } else {
        a as f64 / b as f64
    }
}

/// Positive iff `prob >= threshold`.
pub fn confusion_metrics(scores: &[Score], threshold: f64) -> Result<Confusion> {
    if scores.is_empty() {
        return Err(Error::Data("no scores to evaluate".into()));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for &(p, pos) in scores {
        match (p >= threshold, pos) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    Ok(Confusion {
        tp,
        fp,
        tn,
        fn_,
        acc: ratio(tp + tn, scores.len()),
        sen: ratio(tp, tp + fn_),
        spe: ratio(tn, tn + fp),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Scores `>= threshold` are called positive; the curve starts at `+inf`.
    #[serde(with = "super::nonfinite")]
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Roc {
    /// From `(0, 0)` at `+inf` down to `(1, 1)` at `-inf`.
    pub points: Vec<RocPoint>,
    #[serde(with = "super::nonfinite")]
    pub auc: f64,
}

/// ROC over every distinct score with trapezoidal area. Equal scores form a
/// single step, which counts tied positive/negative pairs as one half.
pub fn roc_auc(scores: &[Score]) -> Result<Roc> {
    let npos = scores.iter().filter(|s| s.1).count();
    let nneg = scores.len() - npos;
    if npos == 0 || nneg == 0 {
        return Err(Error::UndefinedAuc);
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == t {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let prev = *points.last().unwrap();
        let p = RocPoint {
            threshold: t,
            fpr: fp as f64 / nneg as f64,
            tpr: tp as f64 / npos as f64,
        };
        auc += (p.fpr - prev.fpr) * (p.tpr + prev.tpr) / 2.0;
        points.push(p);
    }
    points.push(RocPoint {
        threshold: f64::NEG_INFINITY,
        fpr: 1.0,
        tpr: 1.0,
    });
    Ok(Roc { points, auc })
}
