//! Mini-batch training with early stopping, shared by the note encoder and
//! the patient-level MLP.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{StopMetric, TrainConfig};
use super::params::{Adam, ParamSet};
use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::metrics::{auroc, macro_scores, Prediction};

/// Examples per parallel work unit; gradients are summed in unit order so
/// results do not depend on the thread count.
const CHUNK: usize = 4;

/// A binary classifier trained by gradient descent on a flat parameter set.
pub trait Classifier: Clone + Send + Sync {
    type Input: Sync;

    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;

    /// Cross-entropy of one example. Adds `scale * dloss/dparams` to `grad`.
    /// Dropout is active iff `rng` is given.
    fn example_loss_grad(
        &self,
        input: &Self::Input,
        label: usize,
        scale: f64,
        rng: Option<&mut ChaCha8Rng>,
        grad: &mut [f64],
    ) -> Result<f64>;

    /// Eval-mode class probabilities `[P(TT-No), P(TT-Yes)]`.
    fn predict_proba(&self, input: &Self::Input) -> Result<[f64; 2]>;

    fn mark_trained(&mut self);
}

/// SplitMix64 finalizer, for deriving independent stream seeds.
pub(crate) fn mix_seed(parts: &[u64]) -> u64 {
    let mut z = 0x9e37_79b9_7f4a_7c15u64;
    for &p in parts {
        z = z.wrapping_add(p).wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    z
}

/// Mean cross-entropy over `batch` and its gradient. With `dropout_seed`,
/// example `i` draws its dropout masks from a stream seeded by
/// `(dropout_seed, i)`.
pub fn loss_and_grad<M: Classifier>(
    model: &M,
    batch: &[&M::Input],
    labels: &[usize],
    dropout_seed: Option<u64>,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() || batch.len() != labels.len() {
        return Err(Error::Config(format!(
            "batch of {} inputs with {} labels",
            batch.len(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Config(format!("label {bad} is not binary")));
    }
    let n = model.params().len();
    let scale = 1.0 / batch.len() as f64;
    let partials: Vec<Result<(f64, Vec<f64>)>> = (0..batch.len())
        .collect::<Vec<_>>()
        .par_chunks(CHUNK)
        .map(|idx| {
            let mut grad = vec![0.0; n];
            let mut loss = 0.0;
            for &i in idx {
                let mut rng = dropout_seed.map(|s| ChaCha8Rng::seed_from_u64(mix_seed(&[s, i as u64])));
                loss += model.example_loss_grad(batch[i], labels[i], scale, rng.as_mut(), &mut grad)?;
            }
            Ok((loss, grad))
        })
        .collect();
    let mut total = 0.0;
    let mut grad = vec![0.0; n];
    for part in partials {
        let (loss, g) = part?;
        total += loss;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    let loss = total * scale;
    if !loss.is_finite() {
        return Err(Error::Divergence(format!("loss became {loss}")));
    }
    Ok((loss, grad))
}

/// Eval-mode TT-Yes probabilities, in input order.
pub fn predict_scores<M: Classifier>(model: &M, inputs: &[&M::Input]) -> Result<Vec<f64>> {
    inputs
        .par_iter()
        .map(|x| model.predict_proba(x).map(|p| p[1]))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Stops once the monitored score has not strictly improved for `patience`
/// consecutive epochs (and at least `min_epochs` have run).
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    min_epochs: usize,
    best: Option<(usize, f64)>,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_epochs: usize) -> Self {
        EarlyStopping {
            patience,
            min_epochs,
            best: None,
            stale: 0,
        }
    }

    /// Records the score of `epoch` (1-based).
    pub fn observe(&mut self, epoch: usize, score: f64) -> StopDecision {
        if self.best.is_none_or(|(_, b)| score > b) {
            self.best = Some((epoch, score));
            self.stale = 0;
            return StopDecision::Improved;
        }
        self.stale += 1;
        if self.stale >= self.patience && epoch >= self.min_epochs {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.map(|(e, _)| e)
    }

    pub fn best_score(&self) -> Option<f64> {
        self.best.map(|(_, s)| s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
    pub valid_macro_f1: f64,
    /// `None` when the validation set holds a single class.
    pub valid_auroc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct FitOutcome<M> {
    /// Parameters from the best validation epoch.
    pub model: M,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
}

/// Labeled examples borrowed from the caller.
pub struct Examples<'a, I> {
    pub inputs: Vec<&'a I>,
    pub labels: Vec<usize>,
}

impl<'a, I> Examples<'a, I> {
    pub fn new(pairs: impl IntoIterator<Item = (&'a I, usize)>) -> Self {
        let (inputs, labels) = pairs.into_iter().unzip();
        Examples { inputs, labels }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

fn evaluate<M: Classifier>(model: &M, data: &Examples<'_, M::Input>) -> Result<(f64, f64, Option<f64>)> {
    let scores = predict_scores(model, &data.inputs)?;
    let preds: Vec<Prediction> = scores
        .iter()
        .zip(&data.labels)
        .map(|(&s, &y)| Prediction::from_score("", s, Label::from_index(y)))
        .collect();
    let loss = scores
        .iter()
        .zip(&data.labels)
        .map(|(&s, &y)| {
            let p = if y == 1 { s } else { 1.0 - s };
            -p.max(1e-300).ln()
        })
        .sum::<f64>()
        / scores.len() as f64;
    let f1 = macro_scores(&preds)?.macro_f1;
    Ok((loss, f1, auroc(&preds).ok()))
}

/// Trains `model` on `train` with Adam, evaluating on `valid` after every
/// epoch, and returns the parameters of the best validation epoch.
pub fn fit<M: Classifier>(
    mut model: M,
    train: &Examples<'_, M::Input>,
    valid: &Examples<'_, M::Input>,
    config: &TrainConfig,
    seed: u64,
) -> Result<FitOutcome<M>> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    if valid.is_empty() {
        return Err(Error::EmptySplit("valid"));
    }
    let mut opt = Adam::new(model.params().len(), config.learning_rate, config.clip_norm);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 0x5348]));
    let mut stopper = EarlyStopping::new(config.early_stop_patience, config.min_epochs);
    let mut best = model.clone();
    let mut history = Vec::new();
    let mut stopped_epoch = config.max_epochs;
    let mut step = 0u64;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let inputs: Vec<&M::Input> = batch.iter().map(|&i| train.inputs[i]).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| train.labels[i]).collect();
            step += 1;
            let (loss, grad) = loss_and_grad(&model, &inputs, &labels, Some(mix_seed(&[seed, step])))?;
            opt.step(model.params_mut().values_mut(), &grad);
            if !model.params().all_finite() {
                return Err(Error::Divergence(format!("non-finite parameters at epoch {epoch}")));
            }
            loss_sum += loss * batch.len() as f64;
        }
        let (valid_loss, valid_macro_f1, valid_auroc) = evaluate(&model, valid)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            valid_loss,
            valid_macro_f1,
            valid_auroc,
        };
        log::debug!("epoch {epoch}: {record:?}");
        history.push(record);
        let score = match config.early_stop_metric {
            StopMetric::MacroF1 => valid_macro_f1,
            StopMetric::Auroc => valid_auroc.unwrap_or(0.5),
        };
        match stopper.observe(epoch, score) {
            StopDecision::Improved => best = model.clone(),
            StopDecision::Continue => {}
            StopDecision::Stop => {
                stopped_epoch = epoch;
                break;
            }
        }
    }
    best.mark_trained();
    Ok(FitOutcome {
        model: best,
        history,
        best_epoch: stopper.best_epoch().unwrap_or(1),
        stopped_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn peak_at_four_with_patience_three_stops_at_seven() {
        let mut es = EarlyStopping::new(3, 0);
        let scores = [0.40, 0.45, 0.50, 0.62, 0.60, 0.61, 0.59, 0.70];
        let mut stopped = None;
        for (i, &s) in scores.iter().enumerate() {
            if es.observe(i + 1, s) == StopDecision::Stop {
                stopped = Some(i + 1);
                break;
            }
        }
        assert_eq!(stopped, Some(7));
        assert_eq!(es.best_epoch(), Some(4));
    }

    #[test]
    fn ties_do_not_count_as_improvement() {
        let mut es = EarlyStopping::new(1, 0);
        assert_eq!(es.observe(1, 0.5), StopDecision::Improved);
        assert_eq!(es.observe(2, 0.5), StopDecision::Stop);
    }

    #[test]
    fn min_epochs_defers_stopping() {
        let mut es = EarlyStopping::new(1, 4);
        es.observe(1, 0.5);
        assert_eq!(es.observe(2, 0.4), StopDecision::Continue);
        assert_eq!(es.observe(3, 0.4), StopDecision::Continue);
        assert_eq!(es.observe(4, 0.4), StopDecision::Stop);
    }

    #[test]
    fn seed_mixing_separates_streams() {
        assert_ne!(mix_seed(&[1, 2]), mix_seed(&[2, 1]));
        assert_eq!(mix_seed(&[7, 9]), mix_seed(&[7, 9]));
    }
}
