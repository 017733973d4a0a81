//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use hiernote::corpus::Label;
use hiernote::encoder::TensorInfo;
use hiernote::metrics::Prediction;

/// Relative error of one tensor: `||analytic - numeric|| / max(||analytic||, ||numeric||)`.
#[derive(Debug, Clone)]
pub struct TensorError {
    pub name: String,
    pub relative_error: f64,
    pub analytic_norm: f64,
}

/// Floor on the normalizing norm. Some tensors have an identically zero
/// gradient (a key bias shifts every attention score of a query equally),
/// where both routes return pure rounding noise.
pub const NORM_FLOOR: f64 = 1e-6;

/// Central finite differences of `loss` around `theta`, compared per tensor
/// against `analytic`.
pub fn finite_difference_check(
    theta: &[f64],
    tensors: &[TensorInfo],
    analytic: &[f64],
    eps: f64,
    mut loss: impl FnMut(&[f64]) -> f64,
) -> Vec<TensorError> {
    let mut probe = theta.to_vec();
    let mut numeric = vec![0.0; theta.len()];
    for i in 0..theta.len() {
        probe[i] = theta[i] + eps;
        let up = loss(&probe);
        probe[i] = theta[i] - eps;
        let down = loss(&probe);
        probe[i] = theta[i];
        numeric[i] = (up - down) / (2.0 * eps);
    }
    tensors
        .iter()
        .map(|t| {
            let r = t.offset..t.offset + t.shape.iter().product::<usize>();
            let a = &analytic[r.clone()];
            let n = &numeric[r];
            let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let diff: f64 = a.iter().zip(n).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            let scale = norm(a).max(norm(n)).max(NORM_FLOOR);
            TensorError {
                name: t.name.clone(),
                relative_error: diff / scale,
                analytic_norm: norm(a),
            }
        })
        .collect()
}

/// O(P·N) pair counting.
pub fn brute_force_auroc(scores: &[f64], positive: &[bool]) -> f64 {
    let mut credit = 0.0;
    let mut pairs = 0usize;
    for (i, &si) in scores.iter().enumerate() {
        if !positive[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if positive[j] {
                continue;
            }
            pairs += 1;
            if si > sj {
                credit += 1.0;
            } else if si == sj {
                credit += 0.5;
            }
        }
    }
    credit / pairs as f64
}

/// Per-class (precision, recall, f1) for classes [TT-No, TT-Yes], counted
/// directly from label pairs.
pub fn confusion_oracle(truth: &[bool], predicted: &[bool]) -> [(f64, f64, f64); 2] {
    let mut out = [(0.0, 0.0, 0.0); 2];
    for (class, slot) in [false, true].into_iter().zip(out.iter_mut()) {
        let tp = truth.iter().zip(predicted).filter(|(&t, &p)| t == class && p == class).count() as f64;
        let predicted_class = predicted.iter().filter(|&&p| p == class).count() as f64;
        let actual_class = truth.iter().filter(|&&t| t == class).count() as f64;
        let precision = if predicted_class == 0.0 { 0.0 } else { tp / predicted_class };
        let recall = if actual_class == 0.0 { 0.0 } else { tp / actual_class };
        // harmonic mean of precision and recall, kept as a ratio of counts
        let denominator = predicted_class + actual_class;
        let f1 = if denominator == 0.0 { 0.0 } else { 2.0 * tp / denominator };
        *slot = (precision, recall, f1);
    }
    out
}

pub fn predictions(scores: &[f64], positive: &[bool]) -> Vec<Prediction> {
    scores
        .iter()
        .zip(positive)
        .enumerate()
        .map(|(i, (&s, &y))| Prediction::from_score(format!("p{i}"), s, if y { Label::TtYes } else { Label::TtNo }))
        .collect()
}
