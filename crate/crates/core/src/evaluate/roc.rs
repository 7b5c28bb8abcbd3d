//! ROC curves, Mann-Whitney AUC and the closest-to-(0,1) operating point.
//!
//! Curves keep integer confusion counts, so the trapezoidal area and the
//! pair-count AUC are computed from the same integer numerator and agree
//! exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Scores `>= threshold` are called positive. The first point uses +inf.
    #[serde(with = "crate::evaluate::report::float_or_inf")]
    pub threshold: f64,
    pub tp: usize,
    pub fp: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub positives: usize,
    pub negatives: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub sensitivity: f64,
    pub specificity: f64,
    pub accuracy: f64,
    #[serde(with = "crate::evaluate::report::float_or_inf")]
    pub threshold: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

fn check(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            found: labels.len(),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("ROC scores".into()));
    }
    if labels.iter().any(|&y| y > 1) {
        return Err(Error::Invalid("labels must be 0 or 1".into()));
    }
    let positives = labels.iter().filter(|&&y| y == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::SingleClass);
    }
    Ok((positives, negatives))
}

pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<RocCurve> {
    let (positives, negatives) = check(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let (p, n) = (positives as f64, negatives as f64);
    let point = |tp: usize, fp: usize, threshold: f64| RocPoint {
        fpr: fp as f64 / n,
        tpr: tp as f64 / p,
        threshold,
        tp,
        fp,
    };
    let mut points = vec![point(0, 0, f64::INFINITY)];
    let (mut tp, mut fp) = (0, 0);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(point(tp, fp, s));
    }
    Ok(RocCurve {
        points,
        positives,
        negatives,
    })
}

/// Twice the trapezoidal area in count units, `2·P·N·area`.
fn trapezoid_numerator(curve: &RocCurve) -> u128 {
    curve
        .points
        .windows(2)
        .map(|w| (w[1].fp - w[0].fp) as u128 * (w[1].tp + w[0].tp) as u128)
        .sum()
}

pub fn roc_area(curve: &RocCurve) -> f64 {
    trapezoid_numerator(curve) as f64 / (2 * curve.positives as u128 * curve.negatives as u128) as f64
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (positives, negatives) = check(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Σ over positives of 2·#(negatives below) + #(negatives tied)
    let mut numerator: u128 = 0;
    let mut below = 0u128;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (mut pos, mut neg) = (0u128, 0u128);
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                pos += 1;
            } else {
                neg += 1;
            }
            i += 1;
        }
        numerator += pos * (2 * below + neg);
        below += neg;
    }
    Ok(numerator as f64 / (2 * positives as u128 * negatives as u128) as f64)
}

/// Point nearest to (0,1), ties going to higher sensitivity and then lower
/// threshold. Distances are compared exactly in integer units.
pub fn operating_point(curve: &RocCurve) -> OperatingPoint {
    let (p, n) = (curve.positives as u128, curve.negatives as u128);
    let dist = |pt: &RocPoint| {
        let miss = p - pt.tp as u128;
        (pt.fp as u128).pow(2) * p * p + miss * miss * n * n
    };
    let best = curve
        .points
        .iter()
        .min_by(|a, b| {
            dist(a)
                .cmp(&dist(b))
                .then(b.tp.cmp(&a.tp))
                .then(a.threshold.total_cmp(&b.threshold))
        })
        .expect("curve has endpoints");
    let tn = curve.negatives - best.fp;
    let fn_ = curve.positives - best.tp;
    OperatingPoint {
        sensitivity: best.tpr,
        specificity: tn as f64 / curve.negatives as f64,
        accuracy: (best.tp + tn) as f64 / (curve.positives + curve.negatives) as f64,
        threshold: best.threshold,
        tp: best.tp,
        fp: best.fp,
        tn,
        fn_,
    }
}
