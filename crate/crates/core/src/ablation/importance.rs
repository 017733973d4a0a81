//! Keyword-ablation importance: delete one topic's keywords from the test
//! notes, re-score the frozen model and record the drop in F1.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{remove_topic_words, topic_stats, Lexicon, Topic};
use crate::corpus::{Label, Patient};
use crate::error::{Error, Result};
use crate::hierarchy::FrozenPipeline;
use crate::metrics::{macro_scores, median, Prediction};

/// Which F1 the importance is measured in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum F1Mode {
    /// F1 of the TT-No class.
    #[default]
    TargetClass,
    /// Unweighted mean of both per-class F1 scores.
    Macro,
}

impl F1Mode {
    pub fn score(self, predictions: &[Prediction]) -> Result<f64> {
        let scores = macro_scores(predictions)?;
        Ok(match self {
            F1Mode::TargetClass => scores.class(Label::TtNo).f1,
            F1Mode::Macro => scores.macro_f1,
        })
    }
}

impl std::str::FromStr for F1Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "target_class" => Ok(F1Mode::TargetClass),
            "macro" => Ok(F1Mode::Macro),
            other => Err(Error::Config(format!("unknown F1 mode `{other}` (target_class or macro)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicImportance {
    pub topic: String,
    pub name: String,
    /// `baseline_f1 - ablated_f1` over the whole test set.
    pub raw_delta_f1: f64,
    /// The same difference restricted to patients whose model-input notes
    /// contain the topic; `None` when no patient does.
    pub normalized_delta_f1: Option<f64>,
    pub ablated_f1: f64,
    pub containing_baseline_f1: Option<f64>,
    pub containing_ablated_f1: Option<f64>,
    /// Patients whose model-input notes contain the topic.
    pub containing_patients: usize,
    /// Fraction of all test notes containing the topic.
    pub note_frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub model: String,
    pub f1_mode: F1Mode,
    pub baseline_f1: f64,
    pub n_patients: usize,
    /// In lexicon order.
    pub topics: Vec<TopicImportance>,
}

impl ImportanceReport {
    pub fn topic(&self, key: &str) -> Option<&TopicImportance> {
        self.topics.iter().find(|t| t.topic == key)
    }
}

fn subset(predictions: &[Prediction], keep: &[bool]) -> Vec<Prediction> {
    predictions
        .iter()
        .zip(keep)
        .filter(|(_, &k)| k)
        .map(|(p, _)| p.clone())
        .collect()
}

/// Ablates every topic of `lexicon` independently from the notes of `test`
/// and scores the frozen `model` on each ablated copy.
///
/// Patients whose model-input notes contain no keyword of a topic keep their
/// baseline prediction, so a topic absent from the test notes has a raw
/// delta of exactly zero.
pub fn ablate_and_score(
    model: &FrozenPipeline,
    test: &[&Patient],
    lexicon: &Lexicon,
    mode: F1Mode,
) -> Result<ImportanceReport> {
    if test.is_empty() {
        return Err(Error::EmptySplit("test"));
    }
    let baseline = model.predict(test)?;
    let baseline_f1 = mode.score(&baseline)?;
    let stats = topic_stats(test, lexicon);
    let selection = model.selection();
    let topics = lexicon
        .topics
        .iter()
        .zip(&stats)
        .map(|(topic, stat)| {
            let containing: Vec<bool> = test
                .iter()
                .map(|p| selection.select(p).iter().any(|n| topic.occurs_in(&n.text)))
                .collect();
            let ablated = ablated_predictions(model, test, topic, &containing, &baseline)?;
            let ablated_f1 = mode.score(&ablated)?;
            let n_containing = containing.iter().filter(|&&c| c).count();
            let (containing_baseline_f1, containing_ablated_f1) = if n_containing == 0 {
                (None, None)
            } else {
                (
                    Some(mode.score(&subset(&baseline, &containing))?),
                    Some(mode.score(&subset(&ablated, &containing))?),
                )
            };
            Ok(TopicImportance {
                topic: topic.key.clone(),
                name: topic.name.clone(),
                raw_delta_f1: baseline_f1 - ablated_f1,
                normalized_delta_f1: containing_baseline_f1.zip(containing_ablated_f1).map(|(b, a)| b - a),
                ablated_f1,
                containing_baseline_f1,
                containing_ablated_f1,
                containing_patients: n_containing,
                note_frequency: stat.note_frequency,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ImportanceReport {
        model: model.name(),
        f1_mode: mode,
        baseline_f1,
        n_patients: test.len(),
        topics,
    })
}

fn ablated_predictions(
    model: &FrozenPipeline,
    test: &[&Patient],
    topic: &Topic,
    containing: &[bool],
    baseline: &[Prediction],
) -> Result<Vec<Prediction>> {
    let affected: Vec<&Patient> = test
        .iter()
        .zip(containing)
        .filter(|(_, &c)| c)
        .map(|(p, _)| *p)
        .collect();
    let mut rescored = model
        .predict_with(&affected, &|text: &str| remove_topic_words(text, topic))?
        .into_iter();
    Ok(baseline
        .iter()
        .zip(containing)
        .map(|(b, &c)| if c { rescored.next().expect("one per affected patient") } else { b.clone() })
        .collect())
}

/// Per-topic medians over replicate reports of the same lexicon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceSummary {
    pub model: String,
    pub f1_mode: F1Mode,
    pub n_runs: usize,
    pub baseline_f1: f64,
    pub topics: Vec<TopicSummary>,
    pub per_run: Vec<ImportanceReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicSummary {
    pub topic: String,
    pub name: String,
    pub raw_delta_f1: f64,
    /// Median over the runs where it is defined.
    pub normalized_delta_f1: Option<f64>,
    pub note_frequency: f64,
}

impl ImportanceSummary {
    pub fn from_reports(reports: Vec<ImportanceReport>) -> Result<Self> {
        let first = reports
            .first()
            .ok_or_else(|| Error::Config("no importance reports to summarize".into()))?;
        let keys: Vec<&str> = first.topics.iter().map(|t| t.topic.as_str()).collect();
        if reports
            .iter()
            .any(|r| r.f1_mode != first.f1_mode || !r.topics.iter().map(|t| t.topic.as_str()).eq(keys.iter().copied()))
        {
            return Err(Error::ModelMismatch("importance reports differ in topics or F1 mode".into()));
        }
        let topics = first
            .topics
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let raw: Vec<f64> = reports.iter().map(|r| r.topics[i].raw_delta_f1).collect();
                let norm: Vec<f64> = reports.iter().filter_map(|r| r.topics[i].normalized_delta_f1).collect();
                TopicSummary {
                    topic: t.topic.clone(),
                    name: t.name.clone(),
                    raw_delta_f1: median(&raw),
                    normalized_delta_f1: (!norm.is_empty()).then(|| median(&norm)),
                    note_frequency: t.note_frequency,
                }
            })
            .collect();
        Ok(ImportanceSummary {
            model: first.model.clone(),
            f1_mode: first.f1_mode,
            n_runs: reports.len(),
            baseline_f1: median(&reports.iter().map(|r| r.baseline_f1).collect::<Vec<_>>()),
            topics,
            per_run: reports,
        })
    }

    pub fn topic(&self, key: &str) -> Option<&TopicSummary> {
        self.topics.iter().find(|t| t.topic == key)
    }
}

/// 1-based ranks with ties sharing the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation (Pearson correlation of average ranks).
/// `None` for fewer than two points, unequal lengths or a constant input.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

/// Raw deltas keyed by topic, for quick lookups in reports.
pub fn raw_deltas(summary: &ImportanceSummary) -> BTreeMap<String, f64> {
    summary.topics.iter().map(|t| (t.topic.clone(), t.raw_delta_f1)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 20.0, 5.0]), vec![2.0, 3.5, 3.5, 1.0]);
    }

    #[test]
    fn spearman_of_monotone_and_reversed() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(spearman(&x, &[2.0, 4.0, 9.0, 100.0]), Some(1.0));
        assert_eq!(spearman(&x, &[4.0, 3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&x, &[1.0; 4]), None);
    }

    #[test]
    fn two_equal_planted_and_four_neutral_topics() {
        // planted pair on top in either order, neutral four in any order
        let coupling = [2.5, 2.5, 0.0, 0.0, 0.0, 0.0];
        for importance in [
            [0.30, 0.20, 0.004, -0.003, 0.001, 0.0],
            [0.10, 0.25, -0.01, 0.002, 0.0, 0.003],
        ] {
            let rho = spearman(&coupling, &importance).unwrap();
            assert!((rho - 12.0 / (12.0f64 * 17.5).sqrt()).abs() < 1e-12, "{rho}");
            assert!(rho > 0.8);
        }
    }

    #[test]
    fn f1_mode_parses() {
        assert_eq!("macro".parse::<F1Mode>().unwrap(), F1Mode::Macro);
        assert!("micro".parse::<F1Mode>().is_err());
    }
}
