//! Patient-level multilayer perceptron over concatenated note vectors.
//!
//! The input row is the `n × rep_dim` concatenation followed by the `n`
//! presence flags. Hidden layers use ReLU and inverted dropout; the output
//! layer emits two logits.

use std::ops::Range;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ConcatRepresentation, MsConfig};
use crate::encoder::ops::{apply_mask, cross_entropy, dropout_mask, linear, linear_backward, softmax_in_place};
use crate::encoder::params::Init;
use crate::encoder::{load_checkpoint, save_checkpoint, CheckpointHeader, Classifier, ParamSet};
use crate::error::{Error, Result};

const MLP_KIND: &str = "mlp";

/// Everything needed to rebuild an [`MlpModel`] layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpShape {
    pub ms: MsConfig,
    /// Width of one note vector (the encoder's hidden size).
    pub rep_dim: usize,
}

impl MlpShape {
    /// Concatenated vector width, `n × rep_dim`.
    pub fn concat_width(&self) -> usize {
        self.ms.n * self.rep_dim
    }

    /// Network input width: the concatenation plus one presence flag per slot.
    pub fn input_width(&self) -> usize {
        self.concat_width() + self.ms.n
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_width()];
        w.extend(std::iter::repeat_n(self.ms.mlp_hidden, self.ms.mlp_layers - 1));
        w.push(2);
        w
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Dense {
    w: Range<usize>,
    b: Range<usize>,
    fan_in: usize,
    fan_out: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    shape: MlpShape,
    params: ParamSet,
    layers: Vec<Dense>,
    trained: bool,
}

fn layer_name(i: usize, last: bool) -> String {
    if last {
        "mlp.output".into()
    } else {
        format!("mlp.hidden{i}")
    }
}

impl MlpModel {
    pub fn new(rep_dim: usize, ms: MsConfig) -> Result<Self> {
        let shape = MlpShape { ms, rep_dim };
        shape.ms.validate()?;
        if rep_dim == 0 {
            return Err(Error::Config("representation width must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(shape.ms.seed);
        let mut params = ParamSet::default();
        let widths = shape.widths();
        let n_layers = widths.len() - 1;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, io)| {
                let (fan_in, fan_out) = (io[0], io[1]);
                let name = layer_name(i, i + 1 == n_layers);
                let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
                Dense {
                    w: params.add(format!("{name}.weight"), &[fan_in, fan_out], Init::Normal(std), &mut rng),
                    b: params.add(format!("{name}.bias"), &[fan_out], Init::Zeros, &mut rng),
                    fan_in,
                    fan_out,
                }
            })
            .collect();
        Ok(MlpModel {
            shape,
            params,
            layers,
            trained: false,
        })
    }

    /// Rebuilds a model around existing parameters, which must match the
    /// layout implied by `shape`.
    pub fn from_params(rep_dim: usize, ms: MsConfig, params: ParamSet, trained: bool) -> Result<Self> {
        let mut model = MlpModel::new(rep_dim, ms)?;
        if !model.params.same_layout(&params) {
            return Err(Error::ModelMismatch("parameter layout does not match the MLP shape".into()));
        }
        model.params = params;
        model.trained = trained;
        Ok(model)
    }

    pub fn shape(&self) -> &MlpShape {
        &self.shape
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn mark_trained(&mut self) {
        self.trained = true;
    }

    fn input_row(&self, rep: &ConcatRepresentation) -> Result<Vec<f64>> {
        let (n, width) = (self.shape.ms.n, self.shape.concat_width());
        if rep.vector.len() != width {
            return Err(Error::WidthMismatch {
                expected: width,
                got: rep.vector.len(),
            });
        }
        if rep.present_mask.len() != n {
            return Err(Error::WidthMismatch {
                expected: n,
                got: rep.present_mask.len(),
            });
        }
        let mut row = Vec::with_capacity(width + n);
        row.extend_from_slice(&rep.vector);
        row.extend(rep.present_mask.iter().map(|&m| f64::from(m)));
        Ok(row)
    }

    fn w(&self, r: &Range<usize>) -> &[f64] {
        self.params.get(r)
    }

    /// Output logits; dropout applies to hidden activations when `rng` is set.
    /// Returns the layer inputs and dropout masks for the backward pass.
    fn run(&self, row: Vec<f64>, mut rng: Option<&mut ChaCha8Rng>) -> (Vec<f64>, Vec<Vec<f64>>, Vec<Option<Vec<f64>>>) {
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut masks = Vec::with_capacity(last);
        let mut x = row;
        for (i, d) in self.layers.iter().enumerate() {
            let mut z = linear(&x, self.w(&d.w), self.w(&d.b), d.fan_in, d.fan_out);
            inputs.push(x);
            if i == last {
                return (z, inputs, masks);
            }
            z.iter_mut().for_each(|v| *v = v.max(0.0));
            let mask = rng
                .as_deref_mut()
                .filter(|_| self.shape.ms.dropout > 0.0)
                .map(|r| dropout_mask(z.len(), self.shape.ms.dropout, r));
            apply_mask(&mut z, mask.as_ref());
            masks.push(mask);
            x = z;
        }
        unreachable!("an MLP has at least one layer")
    }

    pub fn logits(&self, rep: &ConcatRepresentation) -> Result<Vec<f64>> {
        let row = self.input_row(rep)?;
        Ok(self.run(row, None).0)
    }
}

impl Classifier for MlpModel {
    type Input = ConcatRepresentation;

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn example_loss_grad(
        &self,
        input: &ConcatRepresentation,
        label: usize,
        scale: f64,
        rng: Option<&mut ChaCha8Rng>,
        grad: &mut [f64],
    ) -> Result<f64> {
        let row = self.input_row(input)?;
        let (logits, inputs, masks) = self.run(row, rng);
        let (loss, mut dy) = cross_entropy(&logits, label);
        dy.iter_mut().for_each(|d| *d *= scale);
        for (i, d) in self.layers.iter().enumerate().rev() {
            let x = &inputs[i];
            // weights and bias are adjacent, weights first
            let (dw, db) = grad[d.w.start..d.b.end].split_at_mut(d.w.len());
            let mut dx = linear_backward(x, self.w(&d.w), &dy, d.fan_in, d.fan_out, dw, db);
            if i == 0 {
                break;
            }
            // x = dropout(relu(z)): route through the mask, then the ReLU gate
            apply_mask(&mut dx, masks[i - 1].as_ref());
            for (g, &a) in dx.iter_mut().zip(x) {
                if a <= 0.0 {
                    *g = 0.0;
                }
            }
            dy = dx;
        }
        Ok(loss)
    }

    fn predict_proba(&self, input: &ConcatRepresentation) -> Result<[f64; 2]> {
        let mut p = self.logits(input)?;
        softmax_in_place(&mut p);
        Ok([p[0], p[1]])
    }

    fn mark_trained(&mut self) {
        MlpModel::mark_trained(self);
    }
}

impl MlpModel {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let header = CheckpointHeader {
            kind: MLP_KIND.into(),
            config: serde_json::to_value(&self.shape)?,
            trained: self.trained,
            tensors: self.params.tensors().to_vec(),
        };
        save_checkpoint(path, &header, &self.params)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (header, params) = load_checkpoint(path)?;
        if header.kind != MLP_KIND {
            return Err(Error::Checkpoint(format!("expected an mlp, found `{}`", header.kind)));
        }
        let shape: MlpShape = serde_json::from_value(header.config)?;
        MlpModel::from_params(shape.rep_dim, shape.ms, params, header.trained)
    }
}
