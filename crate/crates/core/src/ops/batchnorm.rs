use crate::error::{Error, Result};
use crate::tensor::Tensor4;

/// Values saved by [`batch_norm_train`] for the backward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    pub normalized: Tensor4,
    pub inv_std: Vec<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

fn check_affine(x: &Tensor4, gamma: &[f64], beta: &[f64]) -> Result<usize> {
    let c = x.shape().c;
    if gamma.len() != c || beta.len() != c {
        return Err(Error::Shape(format!(
            "batch norm: {} channels but scale/shift of length {}/{}",
            c,
            gamma.len(),
            beta.len()
        )));
    }
    Ok(c)
}

/// Normalizes each channel with the statistics of the batch (over `n`, `h`, `w`).
/// The variance is the biased (population) estimate.
pub fn batch_norm_train(x: &Tensor4, gamma: &[f64], beta: &[f64], eps: f64) -> Result<(Tensor4, BatchNormCache)> {
    let c = check_affine(x, gamma, beta)?;
    let count = (x.shape().len() / c) as f64;
    let mut mean = vec![0.0; c];
    for px in x.data().chunks_exact(c) {
        for (m, v) in mean.iter_mut().zip(px) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let mut var = vec![0.0; c];
    for px in x.data().chunks_exact(c) {
        for ((s, v), m) in var.iter_mut().zip(px).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    var.iter_mut().for_each(|v| *v /= count);
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut normalized = x.clone();
    let mut y = x.clone();
    for (npx, ypx) in normalized
        .data_mut()
        .chunks_exact_mut(c)
        .zip(y.data_mut().chunks_exact_mut(c))
    {
        for ch in 0..c {
            let xh = (npx[ch] - mean[ch]) * inv_std[ch];
            npx[ch] = xh;
            ypx[ch] = gamma[ch] * xh + beta[ch];
        }
    }
    Ok((
        y,
        BatchNormCache {
            normalized,
            inv_std,
            mean,
            var,
        },
    ))
}

/// Affine map with fixed running statistics.
pub fn batch_norm_infer(
    x: &Tensor4,
    gamma: &[f64],
    beta: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
    eps: f64,
) -> Result<Tensor4> {
    let c = check_affine(x, gamma, beta)?;
    if running_mean.len() != c || running_var.len() != c {
        return Err(Error::Shape("batch norm: running statistics length mismatch".into()));
    }
    let scale: Vec<f64> = (0..c).map(|i| gamma[i] / (running_var[i] + eps).sqrt()).collect();
    let shift: Vec<f64> = (0..c).map(|i| beta[i] - running_mean[i] * scale[i]).collect();
    let mut y = x.clone();
    for px in y.data_mut().chunks_exact_mut(c) {
        for ch in 0..c {
            px[ch] = px[ch] * scale[ch] + shift[ch];
        }
    }
    Ok(y)
}

/// Returns `(grad_input, grad_gamma, grad_beta)`.
pub fn batch_norm_backward(
    grad_out: &Tensor4,
    cache: &BatchNormCache,
    gamma: &[f64],
) -> Result<(Tensor4, Vec<f64>, Vec<f64>)> {
    let s = cache.normalized.shape();
    if grad_out.shape() != s {
        return Err(Error::Shape(format!(
            "batch norm backward: grad {} vs cached {}",
            grad_out.shape(),
            s
        )));
    }
    let c = s.c;
    let count = (s.len() / c) as f64;
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for (g, xh) in grad_out
        .data()
        .chunks_exact(c)
        .zip(cache.normalized.data().chunks_exact(c))
    {
        for ch in 0..c {
            dbeta[ch] += g[ch];
            dgamma[ch] += g[ch] * xh[ch];
        }
    }
    let mut dx = grad_out.clone();
    for (d, xh) in dx
        .data_mut()
        .chunks_exact_mut(c)
        .zip(cache.normalized.data().chunks_exact(c))
    {
        for ch in 0..c {
            d[ch] = gamma[ch] * cache.inv_std[ch] / count
                * (count * d[ch] - dbeta[ch] - xh[ch] * dgamma[ch]);
        }
    }
    Ok((dx, dgamma, dbeta))
}
