use std::ops::Range;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Name, shape and position of one tensor inside a [`ParamSet`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorInfo {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.numel()
    }
}

pub(crate) enum Init {
    Zeros,
    Ones,
    Normal(f64),
}

/// All trainable values of a model in one flat buffer, with named views.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    values: Vec<f64>,
    tensors: Vec<TensorInfo>,
}

impl ParamSet {
    pub(crate) fn add<R: Rng>(&mut self, name: impl Into<String>, shape: &[usize], init: Init, rng: &mut R) -> Range<usize> {
        let info = TensorInfo {
            name: name.into(),
            shape: shape.to_vec(),
            offset: self.values.len(),
        };
        let n = info.numel();
        match init {
            Init::Zeros => self.values.extend(std::iter::repeat_n(0.0, n)),
            Init::Ones => self.values.extend(std::iter::repeat_n(1.0, n)),
            Init::Normal(std) => {
                let normal = Normal::new(0.0, std).expect("positive std");
                self.values.extend((0..n).map(|_| normal.sample(rng)));
            }
        }
        let range = info.range();
        self.tensors.push(info);
        range
    }

    pub(crate) fn from_parts(values: Vec<f64>, tensors: Vec<TensorInfo>) -> Self {
        ParamSet { values, tensors }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn tensors(&self) -> &[TensorInfo] {
        &self.tensors
    }

    pub fn tensor(&self, name: &str) -> Option<&TensorInfo> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn get(&self, range: &Range<usize>) -> &[f64] {
        &self.values[range.clone()]
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Same names and shapes, in the same order.
    pub fn same_layout(&self, other: &ParamSet) -> bool {
        self.tensors == other.tensors
    }
}

/// Adam with bias correction and optional global-norm gradient clipping.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: Option<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n_params: usize, learning_rate: f64, clip_norm: Option<f64>) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let scale = match self.clip_norm {
            Some(max) => {
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i] * scale;
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tensors_are_contiguous() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = ParamSet::default();
        let a = p.add("a", &[2, 3], Init::Normal(0.1), &mut rng);
        let b = p.add("b", &[4], Init::Ones, &mut rng);
        assert_eq!(a, 0..6);
        assert_eq!(b, 6..10);
        assert_eq!(p.get(&b), &[1.0; 4]);
        assert_eq!(p.tensor("a").unwrap().shape, vec![2, 3]);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut x = vec![3.0, -2.0];
        let mut opt = Adam::new(2, 0.1, None);
        for _ in 0..500 {
            let g: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
            opt.step(&mut x, &g);
        }
        assert!(x.iter().all(|v| v.abs() < 1e-2));
    }
}
