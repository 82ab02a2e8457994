//! Central finite-difference checks of every differentiable operation and
//! of a whole model.
//!
//! Each check draws random inputs, contracts the op's output with fixed
//! random weights `w` into a scalar `L = Σ w·y`, and compares the analytic
//! gradient of `L` against `(L(x+h) - L(x-h)) / 2h` entry by entry using
//! `|a - n| / max(|a|, |n|, 1e-6)`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::network::{build_model, Mode, NetworkSpec, Variant};
use crate::ops::{
    batch_norm_backward, batch_norm_train, conv2d, conv2d_backward, hadamard, hadamard_backward, maxpool2x2,
    maxpool2x2_backward, transposed_conv2x2, transposed_conv2x2_backward, Activation, Padding,
};
use crate::recurrent::{
    bconvlstm_backward, bconvlstm_fuse, bconvlstm_fuse_cached, convlstm_backward, convlstm_step,
    convlstm_step_cached, BConvLstmParams, ConvLstmParams, ConvLstmState,
};
use crate::rng::{self, Stream};
use crate::tensor::{KernelRef, KernelShape, Shape4, Tensor4};
use crate::training::bce_loss;

pub const OP_TOLERANCE: f64 = 1e-4;
pub const GRAPH_TOLERANCE: f64 = 1e-3;
const STEP: f64 = 1e-4;
const FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Outcome of one check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_err: f64,
    pub entries: usize,
    pub tolerance: f64,
    /// Entries left out because the probe straddles a kink (graph check only).
    pub skipped: usize,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.entries > 0 && self.max_rel_err < self.tolerance && self.skipped * 4 <= self.entries + self.skipped
    }
}

/// Every operation covered by [`check_op`].
pub const OPS: [&str; 12] = [
    "conv2d_same",
    "conv2d_valid",
    "transposed_conv2x2",
    "maxpool2x2",
    "batch_norm",
    "relu",
    "sigmoid",
    "tanh",
    "hadamard",
    "convlstm_step",
    "bconvlstm_fuse",
    "bce_loss",
];

fn uniform(r: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| r.gen_range(lo..hi)).collect()
}

fn tensor(shape: Shape4, v: &[f64]) -> Result<Tensor4> {
    Tensor4::from_vec(shape, v.to_vec())
}

fn dot(w: &[f64], y: &Tensor4) -> f64 {
    w.iter().zip(y.data()).map(|(a, b)| a * b).sum()
}

/// Compares `analytic[i][j]` with central differences of `f` for every entry.
fn compare(
    name: &str,
    inputs: &[Vec<f64>],
    analytic: &[Vec<f64>],
    step: f64,
    tolerance: f64,
    f: impl Fn(&[Vec<f64>]) -> Result<f64>,
) -> Result<CheckResult> {
    let mut work = inputs.to_vec();
    let (mut worst, mut entries) = (0.0f64, 0);
    for (i, g) in analytic.iter().enumerate() {
        for (j, &a) in g.iter().enumerate() {
            let orig = work[i][j];
            work[i][j] = orig + step;
            let up = f(&work)?;
            work[i][j] = orig - step;
            let down = f(&work)?;
            work[i][j] = orig;
            let n = (up - down) / (2.0 * step);
            worst = worst.max(relative_error(a, n));
            entries += 1;
        }
    }
    Ok(CheckResult {
        name: name.to_string(),
        max_rel_err: worst,
        entries,
        tolerance,
        skipped: 0,
    })
}

fn check_conv(r: &mut ChaCha8Rng, padding: Padding, name: &str) -> Result<CheckResult> {
    let xs = Shape4::new(2, 6, 6, 3);
    let ks = KernelShape::new(3, 3, 3, 4);
    let x = uniform(r, xs.len(), -1.0, 1.0);
    let k = uniform(r, ks.len(), -0.5, 0.5);
    let b = uniform(r, 4, -0.5, 0.5);
    let run = |v: &[Vec<f64>]| conv2d(&tensor(xs, &v[0])?, KernelRef::new(ks, &v[1], &v[2])?, padding);
    let inputs = vec![x, k, b];
    let y = run(&inputs)?;
    let w = uniform(r, y.shape().len(), -1.0, 1.0);
    let (gx, gk) = conv2d_backward(
        &tensor(y.shape(), &w)?,
        &tensor(xs, &inputs[0])?,
        KernelRef::new(ks, &inputs[1], &inputs[2])?,
        padding,
    )?;
    compare(name, &inputs, &[gx.into_vec(), gk.data, gk.bias], STEP, OP_TOLERANCE, |v| Ok(dot(&w, &run(v)?)))
}

fn check_transposed(r: &mut ChaCha8Rng) -> Result<CheckResult> {
    let xs = Shape4::new(2, 4, 4, 3);
    let ks = KernelShape::new(2, 2, 3, 4);
    let inputs = vec![uniform(r, xs.len(), -1.0, 1.0), uniform(r, ks.len(), -0.5, 0.5), uniform(r, 4, -0.5, 0.5)];
    let run = |v: &[Vec<f64>]| transposed_conv2x2(&tensor(xs, &v[0])?, KernelRef::new(ks, &v[1], &v[2])?);
    let y = run(&inputs)?;
    let w = uniform(r, y.shape().len(), -1.0, 1.0);
    let (gx, gk) = transposed_conv2x2_backward(
        &tensor(y.shape(), &w)?,
        &tensor(xs, &inputs[0])?,
        KernelRef::new(ks, &inputs[1], &inputs[2])?,
    )?;
    compare("transposed_conv2x2", &inputs, &[gx.into_vec(), gk.data, gk.bias], STEP, OP_TOLERANCE, |v| {
        Ok(dot(&w, &run(v)?))
    })
}

fn check_maxpool(r: &mut ChaCha8Rng) -> Result<CheckResult> {
    let xs = Shape4::new(2, 8, 8, 4);
    // a shuffled ladder keeps every window's maximum well separated from the step
    let mut x: Vec<f64> = (0..xs.len()).map(|i| i as f64 * 0.01).collect();
    rand::seq::SliceRandom::shuffle(x.as_mut_slice(), r);
    let (y, cache) = maxpool2x2(&tensor(xs, &x)?)?;
    let w = uniform(r, y.shape().len(), -1.0, 1.0);
    let gx = maxpool2x2_backward(&tensor(y.shape(), &w)?, &cache)?;
    compare("maxpool2x2", &[x], &[gx.into_vec()], STEP, OP_TOLERANCE, |v| {
        Ok(dot(&w, &maxpool2x2(&tensor(xs, &v[0])?)?.0))
    })
}

fn check_batch_norm(r: &mut ChaCha8Rng) -> Result<CheckResult> {
    let xs = Shape4::new(2, 4, 4, 3);
    let inputs = vec![uniform(r, xs.len(), -2.0, 2.0), uniform(r, 3, 0.5, 1.5), uniform(r, 3, -0.5, 0.5)];
    let run = |v: &[Vec<f64>]| batch_norm_train(&tensor(xs, &v[0])?, &v[1], &v[2], 1e-5);
    let (y, cache) = run(&inputs)?;
    let w = uniform(r, y.shape().len(), -1.0, 1.0);
    let (gx, gg, gb) = batch_norm_backward(&tensor(xs, &w)?, &cache, &inputs[1])?;
    compare("batch_norm", &inputs, &[gx.into_vec(), gg, gb], STEP, OP_TOLERANCE, |v| Ok(dot(&w, &run(v)?.0)))
}

fn check_activation(r: &mut ChaCha8Rng, act: Activation, name: &str) -> Result<CheckResult> {
    let xs = Shape4::new(2, 4, 4, 2);
    // stay clear of the ReLU kink
    let x: Vec<f64> = uniform(r, xs.len(), 0.05, 2.0)
        .into_iter()
        .map(|v| if r.gen_bool(0.5) { -v } else { v })
        .collect();
    let y = act.forward(&tensor(xs, &x)?);
    let w = uniform(r, xs.len(), -1.0, 1.0);
    let gx = act.backward(&tensor(xs, &w)?, &y)?;
    compare(name, &[x], &[gx.into_vec()], STEP, OP_TOLERANCE, |v| {
        Ok(dot(&w, &act.forward(&tensor(xs, &v[0])?)))
    })
}

fn check_hadamard(r: &mut ChaCha8Rng) -> Result<CheckResult> {
    let xs = Shape4::new(2, 3, 3, 2);
    let inputs = vec![uniform(r, xs.len(), -1.0, 1.0), uniform(r, xs.len(), -1.0, 1.0)];
    let w = uniform(r, xs.len(), -1.0, 1.0);
    let (ga, gb) = hadamard_backward(&tensor(xs, &w)?, &tensor(xs, &inputs[0])?, &tensor(xs, &inputs[1])?)?;
    compare("hadamard", &inputs, &[ga.into_vec(), gb.into_vec()], STEP, OP_TOLERANCE, |v| {
        Ok(dot(&w, &hadamard(&tensor(xs, &v[0])?, &tensor(xs, &v[1])?)?))
    })
}

fn random_cell(r: &mut ChaCha8Rng, c_in: usize, hidden: usize, k: usize) -> ConvLstmParams {
    let mut p = ConvLstmParams::zeros(c_in, hidden, k);
    for t in p.tensors_mut() {
        let n = t.len();
        *t = uniform(r, n, -0.4, 0.4);
    }
    p
}

fn flatten_cell(p: &ConvLstmParams) -> Vec<Vec<f64>> {
    p.tensors().cloned().collect()
}

fn restore_cell(p: &mut ConvLstmParams, v: &[Vec<f64>]) {
    for (t, s) in p.tensors_mut().zip(v) {
        t.copy_from_slice(s);
    }
}

fn check_convlstm(r: &mut ChaCha8Rng) -> Result<CheckResult> {
    let (c_in, hidden) = (2, 3);
    let xs = Shape4::new(2, 5, 5, c_in);
    let hs = xs.with_channels(hidden);
    let p = random_cell(r, c_in, hidden, 3);
    let mut inputs = vec![
        uniform(r, xs.len(), -1.0, 1.0),
        uniform(r, hs.len(), -0.8, 0.8),
        uniform(r, hs.len(), -1.0, 1.0),
    ];
    let n_state = inputs.len();
    inputs.extend(flatten_cell(&p));
    let wh = uniform(r, hs.len(), -1.0, 1.0);
    let wc = uniform(r, hs.len(), -1.0, 1.0);
    let state = |v: &[Vec<f64>]| -> Result<ConvLstmState> {
        Ok(ConvLstmState {
            h: tensor(hs, &v[1])?,
            c: tensor(hs, &v[2])?,
        })
    };
    let (_, cache) = convlstm_step_cached(&tensor(xs, &inputs[0])?, &state(&inputs)?, &p)?;
    let g = convlstm_backward(&cache, &p, &tensor(hs, &wh)?, Some(&tensor(hs, &wc)?))?;
    let mut analytic = vec![g.x.into_vec(), g.h_prev.into_vec(), g.c_prev.into_vec()];
    analytic.extend(flatten_cell(&g.params));
    let template = p.clone();
    compare("convlstm_step", &inputs, &analytic, STEP, OP_TOLERANCE, |v| {
        let mut q = template.clone();
        restore_cell(&mut q, &v[n_state..]);
        let s = convlstm_step(&tensor(xs, &v[0])?, &state(v)?, &q)?;
        Ok(dot(&wh, &s.h) + dot(&wc, &s.c))
    })
}

fn flatten_fusion(p: &BConvLstmParams) -> Vec<Vec<f64>> {
    let mut v = flatten_cell(&p.fwd);
    v.extend(flatten_cell(&p.bwd));
    v.extend([p.w_y_fwd.clone(), p.w_y_bwd.clone(), p.b_y.clone()]);
    v
}

fn restore_fusion(p: &mut BConvLstmParams, v: &[Vec<f64>]) {
    let n = p.fwd.tensors().count();
    restore_cell(&mut p.fwd, &v[..n]);
    restore_cell(&mut p.bwd, &v[n..2 * n]);
    p.w_y_fwd.copy_from_slice(&v[2 * n]);
    p.w_y_bwd.copy_from_slice(&v[2 * n + 1]);
    p.b_y.copy_from_slice(&v[2 * n + 2]);
}

fn check_bconvlstm(r: &mut ChaCha8Rng) -> Result<CheckResult> {
    let (c, hidden, out) = (3, 2, 2);
    let xs = Shape4::new(2, 4, 4, c);
    let mut p = BConvLstmParams::zeros(c, hidden, 3, out, 1);
    p.fwd = random_cell(r, c, hidden, 3);
    p.bwd = random_cell(r, c, hidden, 3);
    p.w_y_fwd = uniform(r, p.w_y_fwd.len(), -0.6, 0.6);
    p.w_y_bwd = uniform(r, p.w_y_bwd.len(), -0.6, 0.6);
    p.b_y = uniform(r, out, -0.3, 0.3);
    let mut inputs = vec![uniform(r, xs.len(), -1.0, 1.0), uniform(r, xs.len(), -1.0, 1.0)];
    inputs.extend(flatten_fusion(&p));
    let (y, cache) = bconvlstm_fuse_cached(&tensor(xs, &inputs[0])?, &tensor(xs, &inputs[1])?, &p)?;
    let w = uniform(r, y.shape().len(), -1.0, 1.0);
    let g = bconvlstm_backward(&tensor(y.shape(), &w)?, &cache, &p)?;
    let mut analytic = vec![g.x_enc.into_vec(), g.x_dec.into_vec()];
    analytic.extend(flatten_fusion(&g.params));
    compare("bconvlstm_fuse", &inputs, &analytic, STEP, OP_TOLERANCE, |v| {
        let mut q = p.clone();
        restore_fusion(&mut q, &v[2..]);
        Ok(dot(&w, &bconvlstm_fuse(&tensor(xs, &v[0])?, &tensor(xs, &v[1])?, &q)?))
    })
}

fn check_bce(r: &mut ChaCha8Rng) -> Result<CheckResult> {
    let xs = Shape4::new(2, 4, 4, 1);
    let p = uniform(r, xs.len(), 0.05, 0.95);
    let y: Vec<f64> = (0..xs.len()).map(|_| if r.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
    let target = tensor(xs, &y)?;
    let (_, g) = bce_loss(&tensor(xs, &p)?, &target)?;
    compare("bce_loss", &[p], &[g.into_vec()], STEP, OP_TOLERANCE, |v| {
        Ok(bce_loss(&tensor(xs, &v[0])?, &target)?.0)
    })
}

/// Runs the check registered as `name` in [`OPS`].
pub fn check_op(name: &str, seed: u64) -> Result<CheckResult> {
    let index = OPS
        .iter()
        .position(|&o| o == name)
        .ok_or_else(|| Error::Config(format!("no gradient check named '{name}'")))?;
    let r = &mut rng::stream(seed, Stream::GradCheck, index as u64);
    match name {
        "conv2d_same" => check_conv(r, Padding::Same, name),
        "conv2d_valid" => check_conv(r, Padding::Valid, name),
        "transposed_conv2x2" => check_transposed(r),
        "maxpool2x2" => check_maxpool(r),
        "batch_norm" => check_batch_norm(r),
        "relu" => check_activation(r, Activation::Relu, name),
        "sigmoid" => check_activation(r, Activation::Sigmoid, name),
        "tanh" => check_activation(r, Activation::Tanh, name),
        "hadamard" => check_hadamard(r),
        "convlstm_step" => check_convlstm(r),
        "bconvlstm_fuse" => check_bconvlstm(r),
        "bce_loss" => check_bce(r),
        _ => unreachable!("listed in OPS"),
    }
}

pub fn check_all_ops(seed: u64) -> Result<Vec<CheckResult>> {
    OPS.iter().map(|name| check_op(name, seed)).collect()
}

/// Whole-model check on the tiny spec (`8x8` input, filters `[4, 8, 16, 32]`)
/// in train mode with dropout disabled. Up to `per_tensor` entries of every
/// parameter tensor, plus the input, are compared.
pub fn check_graph(variant: Variant, d: usize, per_tensor: usize, seed: u64) -> Result<CheckResult> {
    let mut spec = NetworkSpec::tiny(variant, d);
    spec.dropout_rate = 0.0;
    spec.seed = seed;
    let mut g = build_model(&spec)?;
    let r = &mut rng::stream(seed, Stream::GradCheck, 1000 + d as u64);
    // zero biases put every unit fed by a dead channel exactly on the ReLU kink
    for p in g.store_mut().params_mut() {
        if p.name.ends_with("bias") || p.name.ends_with("beta") || p.name.contains(".b_") {
            for v in &mut p.value {
                *v = r.gen_range(-0.1..0.1);
            }
        }
    }
    let [h, w, c] = spec.input_shape;
    let xs = Shape4::new(2, h, w, c);
    let x = tensor(xs, &uniform(r, xs.len(), 0.0, 1.0))?;
    let y = g.forward(&x, Mode::Train)?;
    let wts = uniform(r, y.shape().len(), -1.0, 1.0);
    g.zero_grad();
    let gx = g.backward(&tensor(y.shape(), &wts)?)?;

    let base = g.decision_pattern();
    // A central difference is only a reference while no ReLU or pooling
    // decision flips inside the probe; entries that cross a kink are skipped.
    let probe = |g: &mut crate::network::ModelGraph, x: &Tensor4| -> Result<(f64, bool)> {
        let l = dot(&wts, &g.forward(x, Mode::Train)?);
        Ok((l, g.decision_pattern() == base))
    };
    let (mut worst, mut entries, mut skipped) = (0.0f64, 0, 0);
    let mut score = |a: f64, (up, same_up): (f64, bool), (down, same_down): (f64, bool)| {
        if same_up && same_down {
            worst = worst.max(relative_error(a, (up - down) / (2.0 * STEP)));
            entries += 1;
        } else {
            skipped += 1;
        }
    };
    let n_params = g.store().params().len();
    for pi in 0..n_params {
        let len = g.store().params()[pi].len();
        let picks: Vec<usize> = if len <= per_tensor {
            (0..len).collect()
        } else {
            (0..per_tensor).map(|_| r.gen_range(0..len)).collect()
        };
        for j in picks {
            let a = g.store().params()[pi].grad[j];
            let orig = g.store().params()[pi].value[j];
            g.store_mut().params_mut()[pi].value[j] = orig + STEP;
            let up = probe(&mut g, &x)?;
            g.store_mut().params_mut()[pi].value[j] = orig - STEP;
            let down = probe(&mut g, &x)?;
            g.store_mut().params_mut()[pi].value[j] = orig;
            score(a, up, down);
        }
    }
    let mut xv = x.clone();
    for _ in 0..per_tensor.max(1) * 4 {
        let j = r.gen_range(0..xs.len());
        let orig = xv.data()[j];
        xv.data_mut()[j] = orig + STEP;
        let up = probe(&mut g, &xv)?;
        xv.data_mut()[j] = orig - STEP;
        let down = probe(&mut g, &xv)?;
        xv.data_mut()[j] = orig;
        score(gx.data()[j], up, down);
    }
    Ok(CheckResult {
        name: format!("graph_{variant}_d{d}"),
        max_rel_err: worst,
        entries,
        tolerance: GRAPH_TOLERANCE,
        skipped,
    })
}


#[cfg(test)]
mod graph_tests {
    use super::*;

    #[test]
    fn tiny_models_pass() {
        for v in [Variant::Unet, Variant::Bcdu, Variant::Inceptnet] {
            for d in [1, 3] {
                let r = check_graph(v, d, 3, 5).unwrap();
                eprintln!("{r:?}");
                assert!(r.passed(), "{r:?}");
            }
        }
    }
}
