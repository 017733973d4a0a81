use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Prediction;
use crate::corpus::Label;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DummyKind {
    /// Always the training majority class.
    Prior,
    /// Labels drawn from the training class distribution.
    Stratified,
    /// Labels drawn 50/50.
    Uniform,
}

impl DummyKind {
    pub const ALL: [DummyKind; 3] = [DummyKind::Prior, DummyKind::Stratified, DummyKind::Uniform];

    pub fn display_name(self) -> &'static str {
        match self {
            DummyKind::Prior => "Dummy (Prior)",
            DummyKind::Stratified => "Dummy (Stratified)",
            DummyKind::Uniform => "Dummy (Uniform)",
        }
    }
}

/// Training-set class distribution, as the TT-Yes fraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelDistribution {
    pub positive: f64,
}

impl LabelDistribution {
    pub fn from_labels(labels: impl IntoIterator<Item = Label>) -> Self {
        let (mut pos, mut total) = (0usize, 0usize);
        for l in labels {
            total += 1;
            pos += usize::from(l.is_positive());
        }
        LabelDistribution {
            positive: if total == 0 { 0.5 } else { pos as f64 / total as f64 },
        }
    }

    pub fn prior(&self, label: Label) -> f64 {
        match label {
            Label::TtYes => self.positive,
            Label::TtNo => 1.0 - self.positive,
        }
    }

    /// TT-Yes when strictly more common, else TT-No.
    pub fn majority(&self) -> Label {
        if self.positive > 0.5 {
            Label::TtYes
        } else {
            Label::TtNo
        }
    }
}

/// Label-only predictions for `test` (patient id, true label) pairs.
///
/// Prior emits the majority label with the constant score
/// `P(TT-Yes)` from training, so all scores tie. Stratified and Uniform emit
/// sampled labels scored with the training prior of the sampled class and
/// with 0.5, respectively.
pub fn dummy_predict(
    kind: DummyKind,
    train: LabelDistribution,
    test: &[(&str, Label)],
    seed: u64,
) -> Vec<Prediction> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    test.iter()
        .map(|&(id, label_true)| {
            let (label_pred, score) = match kind {
                DummyKind::Prior => (train.majority(), train.positive),
                DummyKind::Stratified => {
                    let l = if rng.random::<f64>() < train.positive {
                        Label::TtYes
                    } else {
                        Label::TtNo
                    };
                    (l, train.prior(l))
                }
                DummyKind::Uniform => {
                    let l = if rng.random::<bool>() { Label::TtYes } else { Label::TtNo };
                    (l, 0.5)
                }
            };
            Prediction {
                patient_id: id.to_string(),
                score,
                label_pred,
                label_true,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{auroc, macro_scores};

    fn test_set(n: usize, positives: usize) -> Vec<(String, Label)> {
        (0..n)
            .map(|i| (format!("p{i}"), if i < positives { Label::TtYes } else { Label::TtNo }))
            .collect()
    }

    fn refs(set: &[(String, Label)]) -> Vec<(&str, Label)> {
        set.iter().map(|(s, l)| (s.as_str(), *l)).collect()
    }

    #[test]
    fn prior_closed_form() {
        let set = test_set(250, 175);
        let train = LabelDistribution { positive: 0.7 };
        let p = dummy_predict(DummyKind::Prior, train, &refs(&set), 0);
        assert!(p.iter().all(|x| x.label_pred == Label::TtYes));
        assert_eq!(auroc(&p).unwrap(), 0.5);
        let m = macro_scores(&p).unwrap();
        let q = 0.7;
        assert_eq!(m.macro_recall, 0.5);
        assert!((m.macro_precision - q / 2.0).abs() < 1e-12);
        assert!((m.macro_f1 - q / (1.0 + q)).abs() < 1e-12);
    }

    #[test]
    fn sampled_fractions() {
        let set = test_set(10_000, 5_000);
        let train = LabelDistribution { positive: 0.7 };
        let frac = |kind| {
            let p = dummy_predict(kind, train, &refs(&set), 3);
            p.iter().filter(|x| x.label_pred.is_positive()).count() as f64 / 10_000.0
        };
        assert!((frac(DummyKind::Stratified) - 0.70).abs() < 0.015);
        assert!((frac(DummyKind::Uniform) - 0.50).abs() < 0.015);
    }

    #[test]
    fn deterministic_given_seed() {
        let set = test_set(100, 40);
        let train = LabelDistribution::from_labels(set.iter().map(|x| x.1));
        assert_eq!(
            dummy_predict(DummyKind::Stratified, train, &refs(&set), 9),
            dummy_predict(DummyKind::Stratified, train, &refs(&set), 9)
        );
    }
}
