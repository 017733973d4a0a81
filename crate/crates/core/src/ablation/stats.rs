use serde::{Deserialize, Serialize};

use super::Lexicon;
use crate::corpus::Patient;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicStats {
    pub topic: String,
    /// Fraction of notes with at least one keyword.
    pub note_frequency: f64,
    /// Fraction of patients with at least one such note.
    pub patient_frequency: f64,
    /// TT-Yes fraction among the containing notes; `None` if there are none.
    pub positive_proportion: Option<f64>,
    pub containing_notes: usize,
}

/// Keyword presence per topic over all notes of `patients`, in lexicon order.
pub fn topic_stats(patients: &[&Patient], lexicon: &Lexicon) -> Vec<TopicStats> {
    let n_notes: usize = patients.iter().map(|p| p.notes.len()).sum();
    lexicon
        .topics
        .iter()
        .map(|topic| {
            let (mut notes, mut positive_notes, mut containing_patients) = (0usize, 0usize, 0usize);
            for p in patients {
                let hits = p.notes.iter().filter(|n| topic.occurs_in(&n.text)).count();
                notes += hits;
                if p.label.is_positive() {
                    positive_notes += hits;
                }
                containing_patients += usize::from(hits > 0);
            }
            TopicStats {
                topic: topic.key.clone(),
                note_frequency: ratio(notes, n_notes),
                patient_frequency: ratio(containing_patients, patients.len()),
                positive_proportion: (notes > 0).then(|| positive_notes as f64 / notes as f64),
                containing_notes: notes,
            }
        })
        .collect()
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}
