//! Patients, their notes, and the line-delimited corpus file.
//!
//! A corpus file holds one JSON record per line. An optional first line of
//! the form `{"metadata": {...}}` carries free-form key/value provenance;
//! every other line is a patient:
//!
//! ```text
//! {"patient_id":"P00001","label":"TT-Yes","notes":[{"note_id":"P00001-N000","timestamp":1325376000,"text":"..."}]}
//! ```

mod generator;
mod notecount;
mod select;
mod split;

pub use generator::{generate_corpus, generate_corpus_with, GeneratorSpec, NoteLength};
pub use notecount::{NoteCountModel, NoteCountTargets};
pub use select::{select_notes_ms, select_single_note, token_count, NoteSelection};
pub use split::{split_patients, Split, TestView, TrainingView};

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary outcome: whether targeted therapy was administered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "TT-No")]
    TtNo,
    #[serde(rename = "TT-Yes")]
    TtYes,
}

impl Label {
    /// Class index used by the classifiers: TT-No = 0, TT-Yes = 1.
    pub fn index(self) -> usize {
        match self {
            Label::TtNo => 0,
            Label::TtYes => 1,
        }
    }

    pub fn from_index(index: usize) -> Self {
        if index == 1 {
            Label::TtYes
        } else {
            Label::TtNo
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::TtYes
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::TtNo => "TT-No",
            Label::TtYes => "TT-Yes",
        }
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Note {
    pub note_id: String,
    #[serde(skip)]
    pub patient_id: String,
    pub timestamp: i64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Patient {
    pub patient_id: String,
    pub label: Label,
    pub notes: Vec<Note>,
}

impl Patient {
    /// Builds a patient, stamping the patient id on every note and sorting
    /// notes by timestamp (ties by note id).
    pub fn new(patient_id: impl Into<String>, label: Label, mut notes: Vec<Note>) -> Result<Self> {
        let patient_id = patient_id.into();
        if notes.is_empty() {
            return Err(Error::InvalidCorpus(format!(
                "patient `{patient_id}` has no notes"
            )));
        }
        for note in &mut notes {
            if note.text.is_empty() {
                return Err(Error::InvalidCorpus(format!(
                    "note `{}` has empty text",
                    note.note_id
                )));
            }
            if note.timestamp < 0 {
                return Err(Error::InvalidCorpus(format!(
                    "note `{}` has a negative timestamp",
                    note.note_id
                )));
            }
            note.patient_id.clone_from(&patient_id);
        }
        sort_notes(&mut notes);
        Ok(Patient {
            patient_id,
            label,
            notes,
        })
    }
}

pub(crate) fn sort_notes(notes: &mut [Note]) {
    notes.sort_by(|a, b| {
        a.timestamp
            .cmp(&b.timestamp)
            .then_with(|| a.note_id.cmp(&b.note_id))
    });
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    pub patients: Vec<Patient>,
    pub metadata: BTreeMap<String, String>,
}

impl Corpus {
    /// Validates corpus-wide invariants: non-empty, unique patient ids and
    /// unique note ids.
    pub fn new(patients: Vec<Patient>, metadata: BTreeMap<String, String>) -> Result<Self> {
        if patients.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut patient_ids = HashSet::new();
        let mut note_ids = HashSet::new();
        for patient in &patients {
            if !patient_ids.insert(patient.patient_id.as_str()) {
                return Err(Error::DuplicatePatient(patient.patient_id.clone()));
            }
            for note in &patient.notes {
                if !note_ids.insert(note.note_id.as_str()) {
                    return Err(Error::DuplicateNote(note.note_id.clone()));
                }
            }
        }
        Ok(Corpus { patients, metadata })
    }

    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    pub fn patient(&self, patient_id: &str) -> Option<&Patient> {
        self.patients.iter().find(|p| p.patient_id == patient_id)
    }

    pub fn note_count(&self) -> usize {
        self.patients.iter().map(|p| p.notes.len()).sum()
    }

    pub fn positive_fraction(&self) -> f64 {
        let positives = self
            .patients
            .iter()
            .filter(|p| p.label.is_positive())
            .count();
        positives as f64 / self.patients.len().max(1) as f64
    }

    pub fn notes(&self) -> impl Iterator<Item = &Note> {
        self.patients.iter().flat_map(|p| p.notes.iter())
    }
}

#[derive(Serialize, Deserialize)]
struct MetadataLine {
    metadata: BTreeMap<String, String>,
}

pub fn read_corpus<R: Read>(reader: R) -> Result<Corpus> {
    let reader = BufReader::new(reader);
    let mut metadata = BTreeMap::new();
    let mut patients = Vec::new();
    for (index, line) in reader.lines().enumerate() {
        let line_no = index + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if value.get("metadata").is_some() && value.get("patient_id").is_none() {
            if !patients.is_empty() || !metadata.is_empty() {
                return Err(Error::Parse {
                    line: line_no,
                    message: "metadata record must be the first line".into(),
                });
            }
            let meta: MetadataLine = serde_json::from_value(value).map_err(|e| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            metadata = meta.metadata;
            continue;
        }
        let record: Patient = serde_json::from_value(value).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let patient = Patient::new(record.patient_id, record.label, record.notes).map_err(|e| {
            Error::Parse {
                line: line_no,
                message: e.to_string(),
            }
        })?;
        patients.push(patient);
    }
    Corpus::new(patients, metadata)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(file)
}

pub fn write_corpus<W: Write>(corpus: &Corpus, mut writer: W) -> Result<()> {
    let io = |e| Error::io("<corpus writer>", e);
    if !corpus.metadata.is_empty() {
        let line = serde_json::to_string(&MetadataLine {
            metadata: corpus.metadata.clone(),
        })?;
        writeln!(writer, "{line}").map_err(io)?;
    }
    for patient in &corpus.patients {
        let line = serde_json::to_string(patient)?;
        writeln!(writer, "{line}").map_err(io)?;
    }
    writer.flush().map_err(io)
}

pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_corpus(corpus, BufWriter::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn note(id: &str, ts: i64, text: &str) -> Note {
        Note {
            note_id: id.into(),
            patient_id: String::new(),
            timestamp: ts,
            text: text.into(),
        }
    }

    const TWO_PATIENTS: &str = r#"{"patient_id":"A","label":"TT-Yes","notes":[{"note_id":"a2","timestamp":20,"text":"second"},{"note_id":"a1","timestamp":10,"text":"first"}]}
{"patient_id":"B","label":"TT-No","notes":[{"note_id":"b1","timestamp":5,"text":"only"}]}
"#;

    #[test]
    fn load_sorts_notes_ascending() {
        let corpus = read_corpus(TWO_PATIENTS.as_bytes()).unwrap();
        assert_eq!(corpus.len(), 2);
        let a = corpus.patient("A").unwrap();
        let ids: Vec<_> = a.notes.iter().map(|n| n.note_id.as_str()).collect();
        assert_eq!(ids, ["a1", "a2"]);
        assert!(a.notes.iter().all(|n| n.patient_id == "A"));
        assert_eq!(corpus.patient("B").unwrap().label, Label::TtNo);
    }

    #[test]
    fn duplicate_patient_is_named() {
        let text = format!(
            "{}{}",
            TWO_PATIENTS,
            r#"{"patient_id":"A","label":"TT-No","notes":[{"note_id":"x","timestamp":1,"text":"t"}]}"#
        );
        let err = read_corpus(text.as_bytes()).unwrap_err();
        assert!(matches!(&err, Error::DuplicatePatient(id) if id == "A"), "{err}");
    }

    #[test]
    fn parse_error_carries_line_number() {
        let text = format!("{TWO_PATIENTS}{{not json\n");
        match read_corpus(text.as_bytes()).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(matches!(read_corpus("".as_bytes()), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn note_ties_break_by_id() {
        let p = Patient::new(
            "P",
            Label::TtYes,
            vec![note("n2", 3, "x"), note("n1", 3, "y")],
        )
        .unwrap();
        assert_eq!(p.notes[0].note_id, "n1");
    }

    #[test]
    fn invalid_notes_rejected() {
        assert!(Patient::new("P", Label::TtNo, vec![]).is_err());
        assert!(Patient::new("P", Label::TtNo, vec![note("n", 1, "")]).is_err());
        assert!(Patient::new("P", Label::TtNo, vec![note("n", -1, "t")]).is_err());
    }

    #[test]
    fn metadata_line_round_trips() {
        let mut metadata = BTreeMap::new();
        metadata.insert("source".to_string(), "unit".to_string());
        let mut corpus = read_corpus(TWO_PATIENTS.as_bytes()).unwrap();
        corpus.metadata = metadata;
        let mut first = Vec::new();
        write_corpus(&corpus, &mut first).unwrap();
        let reloaded = read_corpus(first.as_slice()).unwrap();
        assert_eq!(reloaded, corpus);
        let mut second = Vec::new();
        write_corpus(&reloaded, &mut second).unwrap();
        assert_eq!(first, second);
    }
}
