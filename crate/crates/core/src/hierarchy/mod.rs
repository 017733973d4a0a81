//! Two-step multi-note classification.
//!
//! Step 1 fine-tunes the note encoder with every selected note as its own
//! instance carrying the patient label. Step 2 freezes that encoder,
//! concatenates the pooled vectors of a patient's selected notes into
//! fixed slots and trains an MLP on one row per patient.

mod cache;
mod mlp;
mod pipeline;

pub use cache::{read_rep_cache, write_rep_cache, CacheRecord};
pub use mlp::{MlpModel, MlpShape};
pub use pipeline::{FrozenPipeline, Head};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{select_notes_ms, Label, NoteSelection, Patient, TrainingView};
use crate::encoder::{extract_representations, fit, Classifier, EncoderModel, Examples, FitOutcome, TrainConfig};
use crate::error::{Error, Result};
use crate::metrics::Prediction;
use crate::tokenizer::{encode, TokenSequence, Vocabulary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MsConfig {
    /// Maximum number of notes per patient.
    pub n: usize,
    pub mlp_hidden: usize,
    /// Dense layers including the output layer; 1 is logistic regression.
    pub mlp_layers: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for MsConfig {
    fn default() -> Self {
        MsConfig {
            n: 5,
            mlp_hidden: 128,
            mlp_layers: 2,
            dropout: 0.1,
            seed: 0,
        }
    }
}

impl MsConfig {
    pub fn with_n(n: usize) -> Self {
        MsConfig { n, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("MS n must be at least 1".into()));
        }
        if self.mlp_layers == 0 || self.mlp_hidden == 0 {
            return Err(Error::Config("mlp_layers and mlp_hidden must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("MLP dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// One patient's selected note vectors laid out in `n` slots.
///
/// Slot `i` holds `vector[i * rep_dim..(i + 1) * rep_dim]`; filled slots come
/// first, in ascending timestamp order, and empty slots are zero with mask 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcatRepresentation {
    pub patient_id: String,
    pub vector: Vec<f64>,
    pub present_mask: Vec<u8>,
}

impl ConcatRepresentation {
    /// Lays out `slots` (at most `n`, each of width `rep_dim`).
    pub fn from_slots(patient_id: impl Into<String>, slots: &[Vec<f64>], n: usize, rep_dim: usize) -> Result<Self> {
        if slots.is_empty() || slots.len() > n {
            return Err(Error::InvalidCorpus(format!("{} note vectors for {n} slots", slots.len())));
        }
        let mut vector = vec![0.0; n * rep_dim];
        for (slot, v) in vector.chunks_mut(rep_dim).zip(slots) {
            if v.len() != rep_dim {
                return Err(Error::WidthMismatch {
                    expected: rep_dim,
                    got: v.len(),
                });
            }
            slot.copy_from_slice(v);
        }
        let present_mask = (0..n).map(|i| u8::from(i < slots.len())).collect();
        Ok(ConcatRepresentation {
            patient_id: patient_id.into(),
            vector,
            present_mask,
        })
    }

    pub fn n(&self) -> usize {
        self.present_mask.len()
    }

    pub fn filled(&self) -> usize {
        self.present_mask.iter().filter(|&&m| m == 1).count()
    }
}

/// Step-1 instances: every selected note of every patient, labeled with its
/// patient's label.
pub fn step1_examples(
    patients: &[&Patient],
    vocab: &Vocabulary,
    selection: NoteSelection,
    max_len: usize,
) -> Vec<(TokenSequence, usize)> {
    patients
        .iter()
        .flat_map(|p| {
            selection
                .select(p)
                .into_iter()
                .map(move |note| (encode(vocab, &note.text, max_len), p.label.index()))
        })
        .collect()
}

/// Fine-tunes `model` on the selected notes of the training patients with
/// early stopping on the validation patients' notes.
pub fn train_step1(
    model: EncoderModel,
    vocab: &Vocabulary,
    view: &TrainingView<'_>,
    selection: NoteSelection,
    config: &TrainConfig,
    seed: u64,
) -> Result<FitOutcome<EncoderModel>> {
    let max_len = model.config().max_seq_len;
    let train = step1_examples(&view.train, vocab, selection, max_len);
    let valid = step1_examples(&view.valid, vocab, selection, max_len);
    log::info!(
        "step 1 ({selection:?}): {} train and {} valid note instances",
        train.len(),
        valid.len()
    );
    fit(
        model,
        &Examples::new(train.iter().map(|(s, y)| (s, *y))),
        &Examples::new(valid.iter().map(|(s, y)| (s, *y))),
        config,
        seed,
    )
}

/// [`build_concat_with`] on the unmodified note text.
pub fn build_concat(model: &EncoderModel, vocab: &Vocabulary, patient: &Patient, n: usize) -> Result<ConcatRepresentation> {
    build_concat_with(model, vocab, patient, n, str::to_owned)
}

/// Pooled vectors of the `n` longest notes of `patient`, with `transform`
/// applied to each note's text after selection.
pub fn build_concat_with<F>(
    model: &EncoderModel,
    vocab: &Vocabulary,
    patient: &Patient,
    n: usize,
    transform: F,
) -> Result<ConcatRepresentation>
where
    F: Fn(&str) -> String + Sync,
{
    if n == 0 {
        return Err(Error::Config("MS n must be at least 1".into()));
    }
    if patient.notes.is_empty() {
        return Err(Error::InvalidCorpus(format!("patient `{}` has no notes", patient.patient_id)));
    }
    let mut selected: Vec<crate::corpus::Note> = select_notes_ms(patient, n).into_iter().cloned().collect();
    for note in &mut selected {
        note.text = transform(&note.text);
    }
    let refs: Vec<&crate::corpus::Note> = selected.iter().collect();
    let slots: Vec<Vec<f64>> = extract_representations(model, vocab, &refs)?
        .into_iter()
        .map(|r| r.vector)
        .collect();
    ConcatRepresentation::from_slots(&patient.patient_id, &slots, n, model.config().hidden_dim)
}

/// [`build_concat`] for many patients, in parallel, preserving order.
pub fn build_concat_all(
    model: &EncoderModel,
    vocab: &Vocabulary,
    patients: &[&Patient],
    n: usize,
) -> Result<Vec<ConcatRepresentation>> {
    patients.par_iter().map(|p| build_concat(model, vocab, p, n)).collect()
}

fn check_widths(reps: &[&ConcatRepresentation], width: usize, n: usize) -> Result<()> {
    for r in reps {
        if r.vector.len() != width {
            return Err(Error::WidthMismatch {
                expected: width,
                got: r.vector.len(),
            });
        }
        if r.n() != n {
            return Err(Error::WidthMismatch { expected: n, got: r.n() });
        }
    }
    Ok(())
}

/// Trains the patient-level MLP on concatenated representations, one row per
/// patient. The MLP is initialized from `ms.seed`.
pub fn train_step2(
    train: &[(ConcatRepresentation, Label)],
    valid: &[(ConcatRepresentation, Label)],
    ms: &MsConfig,
    config: &TrainConfig,
    seed: u64,
) -> Result<FitOutcome<MlpModel>> {
    ms.validate()?;
    let first = train.first().ok_or(Error::EmptySplit("train"))?;
    if first.0.n() != ms.n {
        return Err(Error::WidthMismatch {
            expected: ms.n,
            got: first.0.n(),
        });
    }
    let width = first.0.vector.len();
    if width % ms.n != 0 {
        return Err(Error::WidthMismatch {
            expected: width / ms.n * ms.n,
            got: width,
        });
    }
    let all: Vec<&ConcatRepresentation> = train.iter().chain(valid).map(|(r, _)| r).collect();
    check_widths(&all, width, ms.n)?;
    let model = MlpModel::new(width / ms.n, ms.clone())?;
    fit(
        model,
        &Examples::new(train.iter().map(|(r, y)| (r, y.index()))),
        &Examples::new(valid.iter().map(|(r, y)| (r, y.index()))),
        config,
        seed,
    )
}

/// TT-Yes probability and label of one patient from the hierarchical model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MsPrediction {
    pub prob_tt_yes: f64,
    pub label: Label,
}

pub fn predict_ms(encoder: &EncoderModel, vocab: &Vocabulary, mlp: &MlpModel, patient: &Patient) -> Result<MsPrediction> {
    check_compatible(encoder, mlp)?;
    let rep = build_concat(encoder, vocab, patient, mlp.shape().ms.n)?;
    let prob_tt_yes = mlp.predict_proba(&rep)?[1];
    Ok(MsPrediction {
        prob_tt_yes,
        label: Prediction::from_score("", prob_tt_yes, Label::TtNo).label_pred,
    })
}

pub(crate) fn check_compatible(encoder: &EncoderModel, mlp: &MlpModel) -> Result<()> {
    if !encoder.is_trained() || !mlp.is_trained() {
        return Err(Error::Untrained);
    }
    let (h, r) = (encoder.config().hidden_dim, mlp.shape().rep_dim);
    if h != r {
        return Err(Error::ModelMismatch(format!(
            "encoder hidden size {h} differs from MLP slot width {r}"
        )));
    }
    Ok(())
}
