//! A frozen classifier that maps patients to TT-Yes scores, used for
//! evaluation and for ablation re-scoring.

use std::path::Path;

use rayon::prelude::*;

use super::{build_concat_with, check_compatible, MlpModel};
use crate::corpus::{select_single_note, NoteSelection, Patient};
use crate::encoder::{Classifier, EncoderModel};
use crate::error::{Error, Result};
use crate::metrics::Prediction;
use crate::tokenizer::{encode, Vocabulary};

const VOCAB_FILE: &str = "vocab.txt";
const ENCODER_FILE: &str = "encoder.ckpt";
const MLP_FILE: &str = "mlp.ckpt";

#[derive(Debug, Clone, PartialEq)]
pub enum Head {
    /// The encoder's own classifier on the patient's longest note.
    Single,
    /// The Step-2 MLP over up to `n` notes.
    Ms(MlpModel),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrozenPipeline {
    pub vocab: Vocabulary,
    pub encoder: EncoderModel,
    pub head: Head,
}

impl FrozenPipeline {
    pub fn single(vocab: Vocabulary, encoder: EncoderModel) -> Result<Self> {
        if !encoder.is_trained() {
            return Err(Error::Untrained);
        }
        Ok(FrozenPipeline {
            vocab,
            encoder,
            head: Head::Single,
        })
    }

    pub fn ms(vocab: Vocabulary, encoder: EncoderModel, mlp: MlpModel) -> Result<Self> {
        check_compatible(&encoder, &mlp)?;
        Ok(FrozenPipeline {
            vocab,
            encoder,
            head: Head::Ms(mlp),
        })
    }

    /// Table label: `single` or `MS-n`.
    pub fn name(&self) -> String {
        match &self.head {
            Head::Single => "single".into(),
            Head::Ms(mlp) => format!("MS-{}", mlp.shape().ms.n),
        }
    }

    /// Which notes of a patient the model reads.
    pub fn selection(&self) -> NoteSelection {
        match &self.head {
            Head::Single => NoteSelection::Single,
            Head::Ms(mlp) => NoteSelection::Longest(mlp.shape().ms.n),
        }
    }

    /// TT-Yes probability of `patient` with `transform` applied to the text of
    /// the selected notes. Selection always sees the original text.
    pub fn score_with<F>(&self, patient: &Patient, transform: &F) -> Result<f64>
    where
        F: Fn(&str) -> String + Sync,
    {
        match &self.head {
            Head::Single => {
                let note = select_single_note(patient);
                let seq = encode(&self.vocab, &transform(&note.text), self.encoder.config().max_seq_len);
                Ok(self.encoder.predict_proba(&seq)?[1])
            }
            Head::Ms(mlp) => {
                let rep = build_concat_with(&self.encoder, &self.vocab, patient, mlp.shape().ms.n, transform)?;
                Ok(mlp.predict_proba(&rep)?[1])
            }
        }
    }

    /// One prediction per patient, in input order.
    pub fn predict_with<F>(&self, patients: &[&Patient], transform: &F) -> Result<Vec<Prediction>>
    where
        F: Fn(&str) -> String + Sync,
    {
        patients
            .par_iter()
            .map(|p| {
                let score = self.score_with(p, transform)?;
                Ok(Prediction::from_score(&p.patient_id, score, p.label))
            })
            .collect()
    }

    pub fn predict(&self, patients: &[&Patient]) -> Result<Vec<Prediction>> {
        self.predict_with(patients, &str::to_owned)
    }

    /// Writes `vocab.txt`, `encoder.ckpt` and, for MS heads, `mlp.ckpt`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.vocab.save(dir.join(VOCAB_FILE))?;
        self.encoder.save(dir.join(ENCODER_FILE))?;
        if let Head::Ms(mlp) = &self.head {
            mlp.save(dir.join(MLP_FILE))?;
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let vocab = Vocabulary::load(dir.join(VOCAB_FILE))?;
        let encoder = EncoderModel::load(dir.join(ENCODER_FILE))?;
        if encoder.config().vocab_size != vocab.len() {
            return Err(Error::ModelMismatch(format!(
                "encoder expects {} tokens, vocabulary has {}",
                encoder.config().vocab_size,
                vocab.len()
            )));
        }
        let mlp_path = dir.join(MLP_FILE);
        if mlp_path.exists() {
            FrozenPipeline::ms(vocab, encoder, MlpModel::load(mlp_path)?)
        } else {
            FrozenPipeline::single(vocab, encoder)
        }
    }
}
