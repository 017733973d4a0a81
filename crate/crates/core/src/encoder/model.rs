//! Post-LN transformer encoder with a tanh CLS pooler, a binary
//! classification head and MLM/NSP pretraining heads.
//!
//! Every sequence runs at its real length, so padding never reaches the
//! attention computation.

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::ops::*;
use super::params::{Init, ParamSet};
use crate::error::{Error, Result};
use crate::tokenizer::{MlmInstance, TokenSequence};

type Span = Range<usize>;

#[derive(Debug, Clone, PartialEq)]
struct LayerLayout {
    wq: Span,
    bq: Span,
    wk: Span,
    bk: Span,
    wv: Span,
    bv: Span,
    wo: Span,
    bo: Span,
    ln1_g: Span,
    ln1_b: Span,
    w1: Span,
    b1: Span,
    w2: Span,
    b2: Span,
    ln2_g: Span,
    ln2_b: Span,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    tok: Span,
    pos: Span,
    seg: Span,
    emb_g: Span,
    emb_b: Span,
    layers: Vec<LayerLayout>,
    pool_w: Span,
    pool_b: Span,
    cls_w: Span,
    cls_b: Span,
    mlm_w: Span,
    mlm_b: Span,
    mlm_g: Span,
    mlm_beta: Span,
    mlm_bias: Span,
    nsp_w: Span,
    nsp_b: Span,
}

fn xavier(fan_in: usize, fan_out: usize) -> Init {
    Init::Normal((2.0 / (fan_in + fan_out) as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    config: ModelConfig,
    params: ParamSet,
    layout: Layout,
    trained: bool,
}

/// Inference outputs for one sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardOutput {
    pub class_logits: Vec<f64>,
    /// Tanh-pooled final-layer CLS state.
    pub pooled: Vec<f64>,
}

impl ForwardOutput {
    pub fn probabilities(&self) -> Vec<f64> {
        let mut p = self.class_logits.clone();
        softmax_in_place(&mut p);
        p
    }
}

struct LayerCache {
    input: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    probs: Vec<f64>,
    ctx: Vec<f64>,
    attn_mask: Option<Vec<f64>>,
    ln1: NormCache,
    h1: Vec<f64>,
    u: Vec<f64>,
    g: Vec<f64>,
    ffn_mask: Option<Vec<f64>>,
    ln2: NormCache,
}

struct EncodeCache {
    len: usize,
    emb_ln: NormCache,
    emb_mask: Option<Vec<f64>>,
    layers: Vec<LayerCache>,
    output: Vec<f64>,
}

struct PoolCache {
    pooled: Vec<f64>,
    dropped: Vec<f64>,
    mask: Option<Vec<f64>>,
}

/// Mutable views of two disjoint ranges of `buf`.
fn pair_mut<'a>(buf: &'a mut [f64], a: &Span, b: &Span) -> (&'a mut [f64], &'a mut [f64]) {
    assert!(a.end <= b.start || b.end <= a.start, "overlapping ranges");
    if a.start < b.start {
        let (lo, hi) = buf.split_at_mut(b.start);
        (&mut lo[a.clone()], &mut hi[..b.len()])
    } else {
        let (lo, hi) = buf.split_at_mut(a.start);
        (&mut hi[..a.len()], &mut lo[b.clone()])
    }
}

impl EncoderModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (h, f, v) = (config.hidden_dim, config.ffn_dim, config.vocab_size);
        let mut p = ParamSet::default();
        let tok = p.add("embeddings.token", &[v, h], Init::Normal(0.02), &mut rng);
        let pos = p.add("embeddings.position", &[config.max_seq_len, h], Init::Normal(0.02), &mut rng);
        let seg = p.add("embeddings.segment", &[2, h], Init::Normal(0.02), &mut rng);
        let emb_g = p.add("embeddings.norm.gain", &[h], Init::Ones, &mut rng);
        let emb_b = p.add("embeddings.norm.bias", &[h], Init::Zeros, &mut rng);
        let layers = (0..config.n_layers)
            .map(|i| {
                let mut add = |name: &str, shape: &[usize], init: Init| {
                    p.add(format!("layer{i}.{name}"), shape, init, &mut rng)
                };
                LayerLayout {
                    wq: add("attention.query.weight", &[h, h], xavier(h, h)),
                    bq: add("attention.query.bias", &[h], Init::Zeros),
                    wk: add("attention.key.weight", &[h, h], xavier(h, h)),
                    bk: add("attention.key.bias", &[h], Init::Zeros),
                    wv: add("attention.value.weight", &[h, h], xavier(h, h)),
                    bv: add("attention.value.bias", &[h], Init::Zeros),
                    wo: add("attention.output.weight", &[h, h], xavier(h, h)),
                    bo: add("attention.output.bias", &[h], Init::Zeros),
                    ln1_g: add("attention.norm.gain", &[h], Init::Ones),
                    ln1_b: add("attention.norm.bias", &[h], Init::Zeros),
                    w1: add("ffn.inner.weight", &[h, f], xavier(h, f)),
                    b1: add("ffn.inner.bias", &[f], Init::Zeros),
                    w2: add("ffn.outer.weight", &[f, h], xavier(f, h)),
                    b2: add("ffn.outer.bias", &[h], Init::Zeros),
                    ln2_g: add("ffn.norm.gain", &[h], Init::Ones),
                    ln2_b: add("ffn.norm.bias", &[h], Init::Zeros),
                }
            })
            .collect();
        let pool_w = p.add("pooler.weight", &[h, h], xavier(h, h), &mut rng);
        let pool_b = p.add("pooler.bias", &[h], Init::Zeros, &mut rng);
        let cls_w = p.add("classifier.weight", &[h, 2], xavier(h, 2), &mut rng);
        let cls_b = p.add("classifier.bias", &[2], Init::Zeros, &mut rng);
        let mlm_w = p.add("mlm.transform.weight", &[h, h], xavier(h, h), &mut rng);
        let mlm_b = p.add("mlm.transform.bias", &[h], Init::Zeros, &mut rng);
        let mlm_g = p.add("mlm.norm.gain", &[h], Init::Ones, &mut rng);
        let mlm_beta = p.add("mlm.norm.bias", &[h], Init::Zeros, &mut rng);
        let mlm_bias = p.add("mlm.decoder.bias", &[v], Init::Zeros, &mut rng);
        let nsp_w = p.add("nsp.weight", &[h, 2], xavier(h, 2), &mut rng);
        let nsp_b = p.add("nsp.bias", &[2], Init::Zeros, &mut rng);
        let layout = Layout {
            tok,
            pos,
            seg,
            emb_g,
            emb_b,
            layers,
            pool_w,
            pool_b,
            cls_w,
            cls_b,
            mlm_w,
            mlm_b,
            mlm_g,
            mlm_beta,
            mlm_bias,
            nsp_w,
            nsp_b,
        };
        Ok(EncoderModel {
            config,
            params: p,
            layout,
            trained: false,
        })
    }

    /// Rebuilds a model from stored parameters, checking names and shapes.
    pub fn from_params(config: ModelConfig, params: ParamSet, trained: bool) -> Result<Self> {
        let mut model = Self::new(config)?;
        if !model.params.same_layout(&params) {
            return Err(Error::ModelMismatch(
                "stored tensors do not match the model configuration".into(),
            ));
        }
        if !params.all_finite() {
            return Err(Error::Checkpoint("non-finite parameter values".into()));
        }
        model.params = params;
        model.trained = trained;
        Ok(model)
    }

    pub fn parameter_count(config: &ModelConfig) -> Result<usize> {
        Ok(Self::new(config.clone())?.params.len())
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
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

    /// Re-draws the classification head from `seed`, keeping everything else.
    pub fn reset_classifier(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = self.config.hidden_dim;
        let Init::Normal(std) = xavier(h, 2) else { unreachable!() };
        let normal = rand_distr::Normal::new(0.0, std).expect("positive std");
        let (w, b) = (self.layout.cls_w.clone(), self.layout.cls_b.clone());
        let values = self.params.values_mut();
        for x in &mut values[w] {
            *x = rand_distr::Distribution::sample(&normal, &mut rng);
        }
        values[b].fill(0.0);
        self.trained = false;
    }

    pub(crate) fn check_ids(&self, ids: &[u32]) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::InvalidCorpus("empty token sequence".into()));
        }
        if ids.len() > self.config.max_seq_len {
            return Err(Error::SequenceTooLong {
                len: ids.len(),
                max: self.config.max_seq_len,
            });
        }
        if let Some(&id) = ids.iter().find(|&&id| id as usize >= self.config.vocab_size) {
            return Err(Error::TokenOutOfRange {
                id,
                size: self.config.vocab_size,
            });
        }
        Ok(())
    }

    fn w(&self, span: &Span) -> &[f64] {
        self.params.get(span)
    }

    fn mask(&self, len: usize, rng: &mut Option<&mut ChaCha8Rng>) -> Option<Vec<f64>> {
        match rng {
            Some(r) if self.config.dropout_rate > 0.0 => Some(dropout_mask(len, self.config.dropout_rate, &mut **r)),
            _ => None,
        }
    }

    fn encode(&self, ids: &[u32], segments: Option<&[u8]>, mut rng: Option<&mut ChaCha8Rng>) -> EncodeCache {
        let h = self.config.hidden_dim;
        let f = self.config.ffn_dim;
        let l = ids.len();
        let lay = &self.layout;
        let (tok, pos, seg) = (self.w(&lay.tok), self.w(&lay.pos), self.w(&lay.seg));
        let mut x0 = vec![0.0; l * h];
        for (i, &id) in ids.iter().enumerate() {
            let s = segments.map_or(0, |s| s[i] as usize);
            let row = &mut x0[i * h..(i + 1) * h];
            for j in 0..h {
                row[j] = tok[id as usize * h + j] + pos[i * h + j] + seg[s * h + j];
            }
        }
        let (mut hidden, emb_ln) = layer_norm(&x0, self.w(&lay.emb_g), self.w(&lay.emb_b));
        let emb_mask = self.mask(l * h, &mut rng);
        apply_mask(&mut hidden, emb_mask.as_ref());

        let mut layers = Vec::with_capacity(lay.layers.len());
        for ll in &lay.layers {
            let q = linear(&hidden, self.w(&ll.wq), self.w(&ll.bq), h, h);
            let k = linear(&hidden, self.w(&ll.wk), self.w(&ll.bk), h, h);
            let v = linear(&hidden, self.w(&ll.wv), self.w(&ll.bv), h, h);
            let (probs, ctx) = self.attention(&q, &k, &v, l);
            let mut a = linear(&ctx, self.w(&ll.wo), self.w(&ll.bo), h, h);
            let attn_mask = self.mask(l * h, &mut rng);
            apply_mask(&mut a, attn_mask.as_ref());
            add_assign(&mut a, &hidden);
            let (h1, ln1) = layer_norm(&a, self.w(&ll.ln1_g), self.w(&ll.ln1_b));
            let u = linear(&h1, self.w(&ll.w1), self.w(&ll.b1), h, f);
            let g: Vec<f64> = u.iter().map(|&x| gelu(x)).collect();
            let mut ff = linear(&g, self.w(&ll.w2), self.w(&ll.b2), f, h);
            let ffn_mask = self.mask(l * h, &mut rng);
            apply_mask(&mut ff, ffn_mask.as_ref());
            add_assign(&mut ff, &h1);
            let (out, ln2) = layer_norm(&ff, self.w(&ll.ln2_g), self.w(&ll.ln2_b));
            layers.push(LayerCache {
                input: std::mem::replace(&mut hidden, out),
                q,
                k,
                v,
                probs,
                ctx,
                attn_mask,
                ln1,
                h1,
                u,
                g,
                ffn_mask,
                ln2,
            });
        }
        EncodeCache {
            len: l,
            emb_ln,
            emb_mask,
            layers,
            output: hidden,
        }
    }

    fn attention(&self, q: &[f64], k: &[f64], v: &[f64], l: usize) -> (Vec<f64>, Vec<f64>) {
        let h = self.config.hidden_dim;
        let heads = self.config.n_heads;
        let d = self.config.head_dim();
        let scale = 1.0 / (d as f64).sqrt();
        let mut probs = vec![0.0; heads * l * l];
        let mut ctx = vec![0.0; l * h];
        for hd in 0..heads {
            let off = hd * d;
            for i in 0..l {
                let qi = &q[i * h + off..i * h + off + d];
                let row = &mut probs[(hd * l + i) * l..(hd * l + i + 1) * l];
                for (j, slot) in row.iter_mut().enumerate() {
                    let kj = &k[j * h + off..j * h + off + d];
                    *slot = scale * qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>();
                }
                softmax_in_place(row);
                let ci = &mut ctx[i * h + off..i * h + off + d];
                for (j, &p) in row.iter().enumerate() {
                    let vj = &v[j * h + off..j * h + off + d];
                    for (c, &x) in ci.iter_mut().zip(vj) {
                        *c += p * x;
                    }
                }
            }
        }
        (probs, ctx)
    }

    fn attention_backward(&self, lc: &LayerCache, dctx: &[f64], l: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let h = self.config.hidden_dim;
        let heads = self.config.n_heads;
        let d = self.config.head_dim();
        let scale = 1.0 / (d as f64).sqrt();
        let mut dq = vec![0.0; l * h];
        let mut dk = vec![0.0; l * h];
        let mut dv = vec![0.0; l * h];
        let mut ds = vec![0.0; l];
        for hd in 0..heads {
            let off = hd * d;
            for i in 0..l {
                let p = &lc.probs[(hd * l + i) * l..(hd * l + i + 1) * l];
                let dc = &dctx[i * h + off..i * h + off + d];
                let mut dot = 0.0;
                for j in 0..l {
                    let vj = &lc.v[j * h + off..j * h + off + d];
                    let da: f64 = dc.iter().zip(vj).map(|(a, b)| a * b).sum();
                    ds[j] = da;
                    dot += p[j] * da;
                    let dvj = &mut dv[j * h + off..j * h + off + d];
                    for (x, &c) in dvj.iter_mut().zip(dc) {
                        *x += p[j] * c;
                    }
                }
                for j in 0..l {
                    let g = scale * p[j] * (ds[j] - dot);
                    if g == 0.0 {
                        continue;
                    }
                    for t in 0..d {
                        dq[i * h + off + t] += g * lc.k[j * h + off + t];
                        dk[j * h + off + t] += g * lc.q[i * h + off + t];
                    }
                }
            }
        }
        (dq, dk, dv)
    }

    fn encode_backward(&self, ids: &[u32], segments: Option<&[u8]>, cache: &EncodeCache, dout: Vec<f64>, grad: &mut [f64]) {
        let h = self.config.hidden_dim;
        let f = self.config.ffn_dim;
        let l = cache.len;
        let lay = &self.layout;
        let mut dh = dout;
        for (ll, lc) in lay.layers.iter().zip(&cache.layers).rev() {
            let (dg2, db2n) = pair_mut(grad, &ll.ln2_g, &ll.ln2_b);
            let dr2 = layer_norm_backward(&lc.ln2, self.w(&ll.ln2_g), &dh, dg2, db2n);
            let mut dff = dr2.clone();
            apply_mask(&mut dff, lc.ffn_mask.as_ref());
            let (dw2, db2) = pair_mut(grad, &ll.w2, &ll.b2);
            let mut du = linear_backward(&lc.g, self.w(&ll.w2), &dff, f, h, dw2, db2);
            for (x, &u) in du.iter_mut().zip(&lc.u) {
                *x *= gelu_grad(u);
            }
            let (dw1, db1) = pair_mut(grad, &ll.w1, &ll.b1);
            let mut dh1 = linear_backward(&lc.h1, self.w(&ll.w1), &du, h, f, dw1, db1);
            add_assign(&mut dh1, &dr2);
            let (dg1, db1n) = pair_mut(grad, &ll.ln1_g, &ll.ln1_b);
            let dr1 = layer_norm_backward(&lc.ln1, self.w(&ll.ln1_g), &dh1, dg1, db1n);
            let mut da = dr1.clone();
            apply_mask(&mut da, lc.attn_mask.as_ref());
            let (dwo, dbo) = pair_mut(grad, &ll.wo, &ll.bo);
            let dctx = linear_backward(&lc.ctx, self.w(&ll.wo), &da, h, h, dwo, dbo);
            let (dq, dk, dv) = self.attention_backward(lc, &dctx, l);
            let mut dinput = dr1;
            for (dy, w, b) in [(&dq, &ll.wq, &ll.bq), (&dk, &ll.wk, &ll.bk), (&dv, &ll.wv, &ll.bv)] {
                let (dw, db) = pair_mut(grad, w, b);
                add_assign(&mut dinput, &linear_backward(&lc.input, self.w(w), dy, h, h, dw, db));
            }
            dh = dinput;
        }
        apply_mask(&mut dh, cache.emb_mask.as_ref());
        let (dg, db) = pair_mut(grad, &lay.emb_g, &lay.emb_b);
        let dx0 = layer_norm_backward(&cache.emb_ln, self.w(&lay.emb_g), &dh, dg, db);
        for (i, &id) in ids.iter().enumerate() {
            let s = segments.map_or(0, |s| s[i] as usize);
            let row = &dx0[i * h..(i + 1) * h];
            for j in 0..h {
                grad[lay.tok.start + id as usize * h + j] += row[j];
                grad[lay.pos.start + i * h + j] += row[j];
                grad[lay.seg.start + s * h + j] += row[j];
            }
        }
    }

    fn pool(&self, cache: &EncodeCache, rng: &mut Option<&mut ChaCha8Rng>) -> PoolCache {
        let h = self.config.hidden_dim;
        let pre = linear(&cache.output[..h], self.w(&self.layout.pool_w), self.w(&self.layout.pool_b), h, h);
        let pooled: Vec<f64> = pre.iter().map(|x| x.tanh()).collect();
        let mask = self.mask(h, rng);
        let mut dropped = pooled.clone();
        apply_mask(&mut dropped, mask.as_ref());
        PoolCache { pooled, dropped, mask }
    }

    /// Backpropagates `d(dropped pooled)` into the CLS row of `dout`.
    fn pool_backward(&self, cache: &EncodeCache, pc: &PoolCache, mut dpooled: Vec<f64>, dout: &mut [f64], grad: &mut [f64]) {
        let h = self.config.hidden_dim;
        apply_mask(&mut dpooled, pc.mask.as_ref());
        for (d, &p) in dpooled.iter_mut().zip(&pc.pooled) {
            *d *= 1.0 - p * p;
        }
        let (dw, db) = pair_mut(grad, &self.layout.pool_w, &self.layout.pool_b);
        let dcls = linear_backward(&cache.output[..h], self.w(&self.layout.pool_w), &dpooled, h, h, dw, db);
        add_assign(&mut dout[..h], &dcls);
    }

    /// Eval-mode logits and pooled vector of one unpadded id sequence.
    pub fn forward_ids(&self, ids: &[u32]) -> Result<ForwardOutput> {
        self.check_ids(ids)?;
        let cache = self.encode(ids, None, None);
        let pc = self.pool(&cache, &mut None);
        let h = self.config.hidden_dim;
        let class_logits = linear(&pc.dropped, self.w(&self.layout.cls_w), self.w(&self.layout.cls_b), h, 2);
        Ok(ForwardOutput {
            class_logits,
            pooled: pc.pooled,
        })
    }

    /// Eval-mode forward pass over a batch; PAD positions are ignored.
    pub fn forward(&self, batch: &[TokenSequence]) -> Result<Vec<ForwardOutput>> {
        batch.par_iter().map(|s| self.forward_ids(s.real_ids())).collect()
    }

    /// Cross-entropy of one sequence; adds `scale * dloss/dparams` to `grad`.
    /// Dropout is active when `rng` is given.
    pub(crate) fn classify_example(
        &self,
        ids: &[u32],
        label: usize,
        scale: f64,
        mut rng: Option<&mut ChaCha8Rng>,
        grad: &mut [f64],
    ) -> Result<f64> {
        self.check_ids(ids)?;
        let h = self.config.hidden_dim;
        let cache = self.encode(ids, None, rng.as_deref_mut());
        let pc = self.pool(&cache, &mut rng);
        let logits = linear(&pc.dropped, self.w(&self.layout.cls_w), self.w(&self.layout.cls_b), h, 2);
        let (loss, mut dlogits) = cross_entropy(&logits, label);
        dlogits.iter_mut().for_each(|d| *d *= scale);
        let (dw, db) = pair_mut(grad, &self.layout.cls_w, &self.layout.cls_b);
        let dpooled = linear_backward(&pc.dropped, self.w(&self.layout.cls_w), &dlogits, h, 2, dw, db);
        let mut dout = vec![0.0; cache.output.len()];
        self.pool_backward(&cache, &pc, dpooled, &mut dout, grad);
        self.encode_backward(ids, None, &cache, dout, grad);
        Ok(loss)
    }

    /// MLM and NSP losses of one instance: returns (sum of masked-token
    /// cross-entropies, NSP cross-entropy) and adds their gradients, scaled
    /// by `mlm_scale` and `nsp_scale`, to `grad`.
    pub(crate) fn pretrain_example(
        &self,
        inst: &MlmInstance,
        mlm_scale: f64,
        nsp_scale: f64,
        mut rng: Option<&mut ChaCha8Rng>,
        grad: &mut [f64],
    ) -> Result<(f64, f64)> {
        let ids = &inst.input_ids;
        self.check_ids(ids)?;
        let h = self.config.hidden_dim;
        let v = self.config.vocab_size;
        let lay = &self.layout;
        let segs = Some(inst.segment_ids.as_slice());
        let cache = self.encode(ids, segs, rng.as_deref_mut());
        let mut dout = vec![0.0; cache.output.len()];

        let mut mlm_loss = 0.0;
        let tok = self.w(&lay.tok);
        for (i, &label) in inst.labels.iter().enumerate() {
            if label < 0 {
                continue;
            }
            let row = &cache.output[i * h..(i + 1) * h];
            let u = linear(row, self.w(&lay.mlm_w), self.w(&lay.mlm_b), h, h);
            let g: Vec<f64> = u.iter().map(|&x| gelu(x)).collect();
            let (z, norm) = layer_norm(&g, self.w(&lay.mlm_g), self.w(&lay.mlm_beta));
            let bias = self.w(&lay.mlm_bias);
            let logits: Vec<f64> = (0..v)
                .map(|t| bias[t] + tok[t * h..(t + 1) * h].iter().zip(&z).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            let (loss, mut dl) = cross_entropy(&logits, label as usize);
            mlm_loss += loss;
            dl.iter_mut().for_each(|d| *d *= mlm_scale);
            let mut dz = vec![0.0; h];
            for t in 0..v {
                grad[lay.mlm_bias.start + t] += dl[t];
                for j in 0..h {
                    dz[j] += dl[t] * tok[t * h + j];
                    grad[lay.tok.start + t * h + j] += dl[t] * z[j];
                }
            }
            let (dgn, dbn) = pair_mut(grad, &lay.mlm_g, &lay.mlm_beta);
            let mut dg = layer_norm_backward(&norm, self.w(&lay.mlm_g), &dz, dgn, dbn);
            for (d, &x) in dg.iter_mut().zip(&u) {
                *d *= gelu_grad(x);
            }
            let (dw, db) = pair_mut(grad, &lay.mlm_w, &lay.mlm_b);
            let drow = linear_backward(row, self.w(&lay.mlm_w), &dg, h, h, dw, db);
            add_assign(&mut dout[i * h..(i + 1) * h], &drow);
        }

        let pc = self.pool(&cache, &mut rng);
        let logits = linear(&pc.dropped, self.w(&lay.nsp_w), self.w(&lay.nsp_b), h, 2);
        let (nsp_loss, mut dl) = cross_entropy(&logits, inst.nsp_label.index());
        dl.iter_mut().for_each(|d| *d *= nsp_scale);
        let (dw, db) = pair_mut(grad, &lay.nsp_w, &lay.nsp_b);
        let dpooled = linear_backward(&pc.dropped, self.w(&lay.nsp_w), &dl, h, 2, dw, db);
        self.pool_backward(&cache, &pc, dpooled, &mut dout, grad);
        self.encode_backward(ids, segs, &cache, dout, grad);
        Ok((mlm_loss, nsp_loss))
    }
}
