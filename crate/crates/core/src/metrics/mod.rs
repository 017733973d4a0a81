//! AUROC, per-class and macro-averaged precision/recall/F1, replicate
//! aggregation and label-only baselines.

mod dummy;

pub use dummy::{dummy_predict, DummyKind, LabelDistribution};

use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::{Error, Result};

/// One scored patient. `score` is the probability of TT-Yes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub patient_id: String,
    pub score: f64,
    pub label_pred: Label,
    pub label_true: Label,
}

impl Prediction {
    /// Thresholds `score` at 0.5; exactly 0.5 goes to TT-No.
    pub fn from_score(patient_id: impl Into<String>, score: f64, label_true: Label) -> Self {
        Prediction {
            patient_id: patient_id.into(),
            score,
            label_pred: if score > 0.5 { Label::TtYes } else { Label::TtNo },
            label_true,
        }
    }
}

/// Mann–Whitney AUROC: the probability that a random TT-Yes patient
/// outscores a random TT-No patient, ties counting one half.
pub fn auroc(predictions: &[Prediction]) -> Result<f64> {
    let n_pos = predictions.iter().filter(|p| p.label_true.is_positive()).count();
    let n_neg = predictions.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<(f64, bool)> = predictions
        .iter()
        .map(|p| (p.score, p.label_true.is_positive()))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0));
    // sum of (1-based, tie-averaged) ranks of positives
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && order[j].0 == order[i].0 {
            j += 1;
        }
        let mid_rank = (i + 1 + j) as f64 / 2.0;
        rank_sum += mid_rank * order[i..j].iter().filter(|x| x.1).count() as f64;
        i = j;
    }
    let n_pos = n_pos as f64;
    Ok((rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg as f64))
}

/// Counts with TT-Yes as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub true_pos: usize,
    pub false_pos: usize,
    pub false_neg: usize,
    pub true_neg: usize,
}

impl ConfusionMatrix {
    pub fn from_predictions(predictions: &[Prediction]) -> Self {
        let mut m = ConfusionMatrix::default();
        for p in predictions {
            match (p.label_true, p.label_pred) {
                (Label::TtYes, Label::TtYes) => m.true_pos += 1,
                (Label::TtNo, Label::TtYes) => m.false_pos += 1,
                (Label::TtYes, Label::TtNo) => m.false_neg += 1,
                (Label::TtNo, Label::TtNo) => m.true_neg += 1,
            }
        }
        m
    }

    pub fn total(&self) -> usize {
        self.true_pos + self.false_pos + self.false_neg + self.true_neg
    }

    /// Scores of one class, treating it as the positive one.
    pub fn class_scores(&self, class: Label) -> ClassScores {
        let (tp, fp, fn_) = match class {
            Label::TtYes => (self.true_pos, self.false_pos, self.false_neg),
            Label::TtNo => (self.true_neg, self.false_neg, self.false_pos),
        };
        let mut zero_division = false;
        let mut ratio = |num: usize, den: usize| {
            if den == 0 {
                zero_division = true;
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = ratio(2 * tp, 2 * tp + fp + fn_);
        ClassScores {
            precision,
            recall,
            f1,
            support: tp + fn_,
            zero_division,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    /// Some ratio had a zero denominator and was reported as 0.
    pub zero_division: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroScores {
    pub macro_f1: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    /// Indexed by [`Label::index`]: TT-No first.
    pub per_class: [ClassScores; 2],
    pub confusion: ConfusionMatrix,
}

impl MacroScores {
    pub fn class(&self, label: Label) -> &ClassScores {
        &self.per_class[label.index()]
    }

    pub fn zero_division(&self) -> bool {
        self.per_class.iter().any(|c| c.zero_division)
    }
}

pub fn macro_scores(predictions: &[Prediction]) -> Result<MacroScores> {
    if predictions.is_empty() {
        return Err(Error::EmptyPredictions);
    }
    let confusion = ConfusionMatrix::from_predictions(predictions);
    let per_class = [
        confusion.class_scores(Label::TtNo),
        confusion.class_scores(Label::TtYes),
    ];
    let mean = |f: fn(&ClassScores) -> f64| (f(&per_class[0]) + f(&per_class[1])) / 2.0;
    Ok(MacroScores {
        macro_f1: mean(|c| c.f1),
        macro_precision: mean(|c| c.precision),
        macro_recall: mean(|c| c.recall),
        per_class,
        confusion,
    })
}

/// Metrics of one replicate run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub seed: u64,
    pub auroc: f64,
    pub scores: MacroScores,
}

impl RunMetrics {
    pub fn evaluate(seed: u64, predictions: &[Prediction]) -> Result<Self> {
        Ok(RunMetrics {
            seed,
            auroc: auroc(predictions)?,
            scores: macro_scores(predictions)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Per-metric medians over replicate runs, with the runs themselves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auroc: f64,
    pub macro_f1: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    /// Indexed by [`Label::index`]: TT-No first.
    pub per_class: [ClassSummary; 2],
    /// From the run whose macro F1 is the (lower) median.
    pub confusion_matrix: ConfusionMatrix,
    pub n_runs: usize,
    pub zero_division: bool,
    pub per_run: Vec<RunMetrics>,
    /// Seeds of runs that diverged and were left out of the medians.
    pub diverged_seeds: Vec<u64>,
}

impl MetricsReport {
    pub fn from_runs(per_run: Vec<RunMetrics>, diverged_seeds: Vec<u64>) -> Result<Self> {
        if per_run.is_empty() {
            return Err(Error::Divergence(format!(
                "all {} runs diverged",
                diverged_seeds.len()
            )));
        }
        let med = |f: &dyn Fn(&RunMetrics) -> f64| median(&per_run.iter().map(f).collect::<Vec<_>>());
        let class = |i: usize| ClassSummary {
            precision: med(&|r| r.scores.per_class[i].precision),
            recall: med(&|r| r.scores.per_class[i].recall),
            f1: med(&|r| r.scores.per_class[i].f1),
            support: per_run[0].scores.per_class[i].support,
        };
        let mut by_f1: Vec<&RunMetrics> = per_run.iter().collect();
        by_f1.sort_by(|a, b| a.scores.macro_f1.total_cmp(&b.scores.macro_f1).then(a.seed.cmp(&b.seed)));
        let pivot = by_f1[(by_f1.len() - 1) / 2];
        Ok(MetricsReport {
            auroc: med(&|r| r.auroc),
            macro_f1: med(&|r| r.scores.macro_f1),
            macro_precision: med(&|r| r.scores.macro_precision),
            macro_recall: med(&|r| r.scores.macro_recall),
            per_class: [class(0), class(1)],
            confusion_matrix: pivot.scores.confusion,
            n_runs: per_run.len(),
            zero_division: per_run.iter().any(|r| r.scores.zero_division()),
            per_run,
            diverged_seeds,
        })
    }

    pub fn single(seed: u64, predictions: &[Prediction]) -> Result<Self> {
        Self::from_runs(vec![RunMetrics::evaluate(seed, predictions)?], Vec::new())
    }
}

/// Median; the mean of the two middle values for even lengths.
///
/// # Panics
/// On an empty slice.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of nothing");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn preds(scores: &[f64], truth: &[u8]) -> Vec<Prediction> {
        scores
            .iter()
            .zip(truth)
            .enumerate()
            .map(|(i, (&s, &t))| Prediction::from_score(format!("p{i}"), s, Label::from_index(t as usize)))
            .collect()
    }

    #[test]
    fn auroc_examples() {
        let s = [0.9, 0.8, 0.3, 0.2];
        assert_eq!(auroc(&preds(&s, &[1, 1, 0, 0])).unwrap(), 1.0);
        assert_eq!(auroc(&preds(&s, &[1, 0, 0, 1])).unwrap(), 0.5);
        assert_eq!(auroc(&preds(&[0.4; 6], &[1, 0, 1, 0, 1, 1])).unwrap(), 0.5);
    }

    #[test]
    fn auroc_single_class_is_error() {
        assert!(matches!(auroc(&preds(&[0.1, 0.2], &[1, 1])), Err(Error::SingleClass)));
    }

    #[test]
    fn hand_confusion_matrix() {
        // TP=2, FP=1, FN=1, TN=1
        let p = preds(&[0.9, 0.8, 0.7, 0.1, 0.2], &[1, 1, 0, 1, 0]);
        let m = macro_scores(&p).unwrap();
        assert_eq!(
            m.confusion,
            ConfusionMatrix {
                true_pos: 2,
                false_pos: 1,
                false_neg: 1,
                true_neg: 1
            }
        );
        assert!((m.class(Label::TtYes).f1 - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.class(Label::TtNo).f1 - 0.5).abs() < 1e-15);
        assert!((m.macro_f1 - 7.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn all_positive_on_seventy_thirty() {
        let truth: Vec<u8> = (0..100).map(|i| u8::from(i < 70)).collect();
        let m = macro_scores(&preds(&[0.9; 100], &truth)).unwrap();
        assert!((m.macro_f1 - 0.5 * 1.4 / 1.7).abs() < 1e-12);
        assert!(m.class(Label::TtNo).zero_division);
        assert_eq!(m.macro_recall, 0.5);
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[0.58, 0.60, 0.61, 0.59, 0.62]), 0.60);
        assert_eq!(median(&[3.0, 1.0]), 2.0);
    }

    #[test]
    fn report_of_identical_runs() {
        let p = preds(&[0.9, 0.2, 0.7, 0.4], &[1, 0, 0, 1]);
        let run = RunMetrics::evaluate(1, &p).unwrap();
        let report = MetricsReport::from_runs(vec![run.clone(); 5], vec![]).unwrap();
        assert_eq!(report.auroc, run.auroc);
        assert_eq!(report.macro_f1, run.scores.macro_f1);
        assert_eq!(report.n_runs, 5);
    }
}
