use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::{Note, Patient};
use crate::tokenizer::token_spans;

/// Number of whole-word tokens in `text`.
pub fn token_count(text: &str) -> usize {
    token_spans(text).count()
}

/// Which notes of a patient feed the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "n")]
pub enum NoteSelection {
    /// The single longest note.
    Single,
    /// Up to `n` longest notes, in timestamp order.
    Longest(usize),
}

impl NoteSelection {
    pub fn select<'a>(&self, patient: &'a Patient) -> Vec<&'a Note> {
        match *self {
            NoteSelection::Single => vec![select_single_note(patient)],
            NoteSelection::Longest(n) => select_notes_ms(patient, n),
        }
    }

    pub fn max_notes(&self) -> usize {
        match *self {
            NoteSelection::Single => 1,
            NoteSelection::Longest(n) => n,
        }
    }
}

/// Longest first; ties go to the later timestamp, then the larger note id.
fn by_preference(a: &(usize, &Note), b: &(usize, &Note)) -> Ordering {
    b.0.cmp(&a.0)
        .then_with(|| b.1.timestamp.cmp(&a.1.timestamp))
        .then_with(|| b.1.note_id.cmp(&a.1.note_id))
}

fn ranked(patient: &Patient) -> Vec<(usize, &Note)> {
    let mut notes: Vec<(usize, &Note)> = patient
        .notes
        .iter()
        .map(|n| (token_count(&n.text), n))
        .collect();
    notes.sort_by(by_preference);
    notes
}

/// The note with the most tokens; ties broken by latest timestamp, then
/// note id.
pub fn select_single_note(patient: &Patient) -> &Note {
    ranked(patient)
        .first()
        .map(|&(_, n)| n)
        .expect("patient has at least one note")
}

/// The `n` longest notes (ties by recency), returned in ascending timestamp
/// order.
pub fn select_notes_ms(patient: &Patient, n: usize) -> Vec<&Note> {
    let mut chosen: Vec<&Note> = ranked(patient).into_iter().take(n).map(|(_, n)| n).collect();
    chosen.sort_by(|a, b| {
        a.timestamp
            .cmp(&b.timestamp)
            .then_with(|| a.note_id.cmp(&b.note_id))
    });
    chosen
}
