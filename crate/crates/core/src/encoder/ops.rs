//! Row-major dense kernels with hand-written backward passes.

use rand::Rng;

pub(crate) const LN_EPS: f64 = 1e-5;

/// `x[rows × n] · w[n × m] + b[m]`.
pub(crate) fn linear(x: &[f64], w: &[f64], b: &[f64], n: usize, m: usize) -> Vec<f64> {
    let rows = x.len() / n;
    let mut y = Vec::with_capacity(rows * m);
    for r in 0..rows {
        y.extend_from_slice(b);
        let out = &mut y[r * m..(r + 1) * m];
        for (k, &xk) in x[r * n..(r + 1) * n].iter().enumerate() {
            if xk == 0.0 {
                continue;
            }
            for (o, &wkj) in out.iter_mut().zip(&w[k * m..(k + 1) * m]) {
                *o += xk * wkj;
            }
        }
    }
    y
}

/// Accumulates `dw += xᵀ·dy`, `db += Σ dy` and returns `dy · wᵀ`.
pub(crate) fn linear_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    n: usize,
    m: usize,
    dw: &mut [f64],
    db: &mut [f64],
) -> Vec<f64> {
    let rows = x.len() / n;
    let mut dx = vec![0.0; rows * n];
    for r in 0..rows {
        let dyr = &dy[r * m..(r + 1) * m];
        for (d, &g) in db.iter_mut().zip(dyr) {
            *d += g;
        }
        let xr = &x[r * n..(r + 1) * n];
        let dxr = &mut dx[r * n..(r + 1) * n];
        for k in 0..n {
            let wk = &w[k * m..(k + 1) * m];
            let dwk = &mut dw[k * m..(k + 1) * m];
            let xk = xr[k];
            let mut acc = 0.0;
            for j in 0..m {
                acc += dyr[j] * wk[j];
                dwk[j] += xk * dyr[j];
            }
            dxr[k] = acc;
        }
    }
    dx
}

/// Normalized rows and inverse standard deviations, kept for the backward pass.
pub(crate) struct NormCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

pub(crate) fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64]) -> (Vec<f64>, NormCache) {
    let h = gain.len();
    let rows = x.len() / h;
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut inv_std = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = &x[r * h..(r + 1) * h];
        let mean = row.iter().sum::<f64>() / h as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / h as f64;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        inv_std.push(inv);
        for j in 0..h {
            let z = (row[j] - mean) * inv;
            xhat[r * h + j] = z;
            y[r * h + j] = gain[j] * z + bias[j];
        }
    }
    (y, NormCache { xhat, inv_std })
}

pub(crate) fn layer_norm_backward(
    cache: &NormCache,
    gain: &[f64],
    dy: &[f64],
    dgain: &mut [f64],
    dbias: &mut [f64],
) -> Vec<f64> {
    let h = gain.len();
    let rows = dy.len() / h;
    let mut dx = vec![0.0; dy.len()];
    let mut dxhat = vec![0.0; h];
    for r in 0..rows {
        let xh = &cache.xhat[r * h..(r + 1) * h];
        let dyr = &dy[r * h..(r + 1) * h];
        let (mut mean_d, mut mean_dx) = (0.0, 0.0);
        for j in 0..h {
            dgain[j] += dyr[j] * xh[j];
            dbias[j] += dyr[j];
            dxhat[j] = dyr[j] * gain[j];
            mean_d += dxhat[j];
            mean_dx += dxhat[j] * xh[j];
        }
        mean_d /= h as f64;
        mean_dx /= h as f64;
        let inv = cache.inv_std[r];
        for j in 0..h {
            dx[r * h + j] = inv * (dxhat[j] - mean_d - xh[j] * mean_dx);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

/// tanh approximation of GELU.
pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// Numerically stable softmax, in place.
pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Cross-entropy of `logits` against `target`, and its gradient
/// `softmax(logits) - onehot(target)`.
pub(crate) fn cross_entropy(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let mut p = logits.to_vec();
    softmax_in_place(&mut p);
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    let loss = lse - logits[target];
    p[target] -= 1.0;
    (loss, p)
}

/// Inverted-dropout mask: entries are 0 or `1 / (1 - rate)`.
pub(crate) fn dropout_mask<R: Rng>(len: usize, rate: f64, rng: &mut R) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

pub(crate) fn apply_mask(x: &mut [f64], mask: Option<&Vec<f64>>) {
    if let Some(mask) = mask {
        for (v, m) in x.iter_mut().zip(mask) {
            *v *= m;
        }
    }
}

pub(crate) fn add_assign(acc: &mut [f64], x: &[f64]) {
    for (a, b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_derivative_matches_difference() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let eps = 1e-6;
            let fd = (gelu(x + eps) - gelu(x - eps)) / (2.0 * eps);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn softmax_is_distribution() {
        let mut v = vec![1000.0, 999.0, -5.0];
        softmax_in_place(&mut v);
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(v.iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn uniform_logits_cost_ln2() {
        let (loss, grad) = cross_entropy(&[0.3, 0.3], 1);
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(grad, vec![0.5, -0.5]);
    }

    #[test]
    fn linear_matches_naive() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2 x 3
        let w = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0]; // 3 x 2
        let y = linear(&x, &w, &[0.5, -0.5], 3, 2);
        assert_eq!(y, vec![4.5, 4.5, 10.5, 10.5]);
    }
}
