//! A small transformer encoder trained from scratch, its training loops and
//! its checkpoints.

mod checkpoint;
mod config;
mod model;
pub(crate) mod ops;
pub(crate) mod params;
mod replicate;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointHeader, CHECKPOINT_VERSION};
pub use config::{ModelConfig, PretrainConfig, StopMetric, TrainConfig};
pub use model::{EncoderModel, ForwardOutput};
pub use params::{Adam, ParamSet, TensorInfo};
pub use replicate::{run_replicates, Replicates};
pub use train::{fit, loss_and_grad, predict_scores, Classifier, EarlyStopping, EpochRecord, Examples, FitOutcome, StopDecision};

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Note;
use crate::error::{Error, Result};
use crate::tokenizer::{encode, MlmInstance, TokenSequence, Vocabulary};
pub(crate) use train::mix_seed;

const ENCODER_KIND: &str = "encoder";

impl Classifier for EncoderModel {
    type Input = TokenSequence;

    fn params(&self) -> &ParamSet {
        EncoderModel::params(self)
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        EncoderModel::params_mut(self)
    }

    fn example_loss_grad(
        &self,
        input: &TokenSequence,
        label: usize,
        scale: f64,
        rng: Option<&mut ChaCha8Rng>,
        grad: &mut [f64],
    ) -> Result<f64> {
        self.classify_example(input.real_ids(), label, scale, rng, grad)
    }

    fn predict_proba(&self, input: &TokenSequence) -> Result<[f64; 2]> {
        let p = self.forward_ids(input.real_ids())?.probabilities();
        Ok([p[0], p[1]])
    }

    fn mark_trained(&mut self) {
        EncoderModel::mark_trained(self);
    }
}

impl EncoderModel {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let header = CheckpointHeader {
            kind: ENCODER_KIND.into(),
            config: serde_json::to_value(self.config())?,
            trained: self.is_trained(),
            tensors: self.params().tensors().to_vec(),
        };
        save_checkpoint(path, &header, self.params())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (header, params) = load_checkpoint(path)?;
        if header.kind != ENCODER_KIND {
            return Err(Error::Checkpoint(format!("expected an encoder, found `{}`", header.kind)));
        }
        let config: ModelConfig = serde_json::from_value(header.config)?;
        EncoderModel::from_params(config, params, header.trained)
    }

    /// Combined pretraining loss of a batch: mean cross-entropy over all
    /// masked positions plus mean NSP cross-entropy, with its gradient.
    pub fn pretrain_loss_and_grad(
        &self,
        batch: &[&MlmInstance],
        dropout_seed: Option<u64>,
    ) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::Config("empty pretraining batch".into()));
        }
        let masked: usize = batch.iter().map(|i| i.masked_positions().count()).sum();
        let mlm_scale = if masked == 0 { 0.0 } else { 1.0 / masked as f64 };
        let nsp_scale = 1.0 / batch.len() as f64;
        let n = self.params().len();
        let partials: Vec<Result<(f64, f64, Vec<f64>)>> = (0..batch.len())
            .collect::<Vec<_>>()
            .par_chunks(4)
            .map(|idx| {
                let mut grad = vec![0.0; n];
                let (mut mlm, mut nsp) = (0.0, 0.0);
                for &i in idx {
                    let mut rng = dropout_seed.map(|s| ChaCha8Rng::seed_from_u64(mix_seed(&[s, i as u64])));
                    let (a, b) = self.pretrain_example(batch[i], mlm_scale, nsp_scale, rng.as_mut(), &mut grad)?;
                    mlm += a;
                    nsp += b;
                }
                Ok((mlm, nsp, grad))
            })
            .collect();
        let (mut mlm, mut nsp) = (0.0, 0.0);
        let mut grad = vec![0.0; n];
        for part in partials {
            let (a, b, g) = part?;
            mlm += a;
            nsp += b;
            for (x, y) in grad.iter_mut().zip(&g) {
                *x += y;
            }
        }
        let loss = mlm * mlm_scale + nsp * nsp_scale;
        if !loss.is_finite() {
            return Err(Error::Divergence(format!("pretraining loss became {loss}")));
        }
        Ok((loss, grad))
    }
}

/// Masked-LM plus next-sentence pretraining. Returns the mean training loss
/// of every epoch.
pub fn pretrain_mlm_nsp(
    model: &mut EncoderModel,
    instances: &[MlmInstance],
    config: &PretrainConfig,
) -> Result<Vec<f64>> {
    if instances.is_empty() {
        return Err(Error::Config("no pretraining instances".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("pretraining batch_size must be at least 1".into()));
    }
    let mut opt = Adam::new(model.params().len(), config.learning_rate, config.clip_norm);
    let mut order: Vec<usize> = (0..instances.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[config.seed, 0x4d4c4d]));
    let mut curve = Vec::with_capacity(config.epochs);
    let mut step = 0u64;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&MlmInstance> = chunk.iter().map(|&i| &instances[i]).collect();
            step += 1;
            let (loss, grad) = model.pretrain_loss_and_grad(&batch, Some(mix_seed(&[config.seed, step])))?;
            opt.step(model.params_mut().values_mut(), &grad);
            total += loss * chunk.len() as f64;
        }
        curve.push(total / instances.len() as f64);
    }
    Ok(curve)
}

/// Fine-tunes the classification head and encoder on labeled sequences with
/// early stopping on the validation set.
pub fn finetune_classifier(
    model: EncoderModel,
    train: &Examples<'_, TokenSequence>,
    valid: &Examples<'_, TokenSequence>,
    config: &TrainConfig,
    seed: u64,
) -> Result<FitOutcome<EncoderModel>> {
    fit(model, train, valid, config, seed)
}

/// Final-layer pooled vector of one note.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoteRepresentation {
    pub note_id: String,
    pub patient_id: String,
    pub vector: Vec<f64>,
}

/// Pooled vectors of `notes` from a trained model, dropout disabled.
pub fn extract_representations(
    model: &EncoderModel,
    vocab: &Vocabulary,
    notes: &[&Note],
) -> Result<Vec<NoteRepresentation>> {
    if !model.is_trained() {
        return Err(Error::Untrained);
    }
    let max_len = model.config().max_seq_len;
    notes
        .par_iter()
        .map(|note| {
            let seq = encode(vocab, &note.text, max_len);
            let out = model.forward_ids(seq.real_ids())?;
            Ok(NoteRepresentation {
                note_id: note.note_id.clone(),
                patient_id: note.patient_id.clone(),
                vector: out.pooled,
            })
        })
        .collect()
}
