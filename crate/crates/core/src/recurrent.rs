//! Convolutional LSTM cell and the bidirectional fusion used on skip connections.
//!
//! Gate equations for one step, with `*` a same-padded convolution and `⊙` the
//! per-channel Hadamard product:
//!
//! ```text
//! i = σ(W_xi*X + W_hi*H' + w_ci⊙C' + b_i)
//! f = σ(W_xf*X + W_hf*H' + w_cf⊙C' + b_f)
//! C = f⊙C' + i⊙tanh(W_xc*X + W_hc*H' + b_c)
//! o = σ(W_xo*X + W_ho*H' + w_co⊙C + b_o)
//! H = o⊙tanh(C)
//! ```
//!
//! The four input kernels (and the four hidden kernels) are evaluated as one
//! convolution with `4F` output channels in gate order `i, f, c, o`.

use crate::error::{Error, Result};
use crate::ops::{conv2d, conv2d_backward, sigmoid_scalar, Padding};
use crate::tensor::{ensure_same_shape, Kernel4, KernelRef, KernelShape, Shape4, Tensor4};

/// Gate order used for the stacked kernels.
pub const GATES: [&str; 4] = ["i", "f", "c", "o"];

/// Learnable weights of one ConvLSTM cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLstmParams {
    pub input_channels: usize,
    pub hidden: usize,
    pub kernel_size: usize,
    /// `W_xi, W_xf, W_xc, W_xo`, each `(k, k, c_in, F)`.
    pub w_x: [Vec<f64>; 4],
    /// `W_hi, W_hf, W_hc, W_ho`, each `(k, k, F, F)`.
    pub w_h: [Vec<f64>; 4],
    /// Peepholes `w_ci, w_cf, w_co`, one weight per hidden channel.
    pub w_c: [Vec<f64>; 3],
    /// `b_i, b_f, b_c, b_o`.
    pub b: [Vec<f64>; 4],
}

impl ConvLstmParams {
    pub fn zeros(input_channels: usize, hidden: usize, kernel_size: usize) -> Self {
        let xk = KernelShape::new(kernel_size, kernel_size, input_channels, hidden).len();
        let hk = KernelShape::new(kernel_size, kernel_size, hidden, hidden).len();
        Self {
            input_channels,
            hidden,
            kernel_size,
            w_x: std::array::from_fn(|_| vec![0.0; xk]),
            w_h: std::array::from_fn(|_| vec![0.0; hk]),
            w_c: std::array::from_fn(|_| vec![0.0; hidden]),
            b: std::array::from_fn(|_| vec![0.0; hidden]),
        }
    }

    pub fn input_kernel_shape(&self) -> KernelShape {
        KernelShape::new(self.kernel_size, self.kernel_size, self.input_channels, self.hidden)
    }

    pub fn hidden_kernel_shape(&self) -> KernelShape {
        KernelShape::new(self.kernel_size, self.kernel_size, self.hidden, self.hidden)
    }

    pub fn param_count(&self) -> usize {
        4 * (self.input_kernel_shape().len() + self.hidden_kernel_shape().len() + self.hidden) + 3 * self.hidden
    }

    /// Mutable views of every weight vector, in a fixed order.
    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.w_x
            .iter_mut()
            .chain(self.w_h.iter_mut())
            .chain(self.w_c.iter_mut())
            .chain(self.b.iter_mut())
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.w_x.iter().chain(self.w_h.iter()).chain(self.w_c.iter()).chain(self.b.iter())
    }

    fn stacked_input_kernel(&self) -> Kernel4 {
        let s = self.input_kernel_shape();
        Kernel4 {
            shape: KernelShape { c_out: 4 * s.c_out, ..s },
            data: stack_gates(&self.w_x, s),
            bias: self.b.concat(),
        }
    }

    fn stacked_hidden_kernel(&self) -> Kernel4 {
        let s = self.hidden_kernel_shape();
        Kernel4 {
            shape: KernelShape { c_out: 4 * s.c_out, ..s },
            data: stack_gates(&self.w_h, s),
            bias: vec![0.0; 4 * self.hidden],
        }
    }

    fn check(&self) -> Result<()> {
        let xs = self.input_kernel_shape().len();
        let hs = self.hidden_kernel_shape().len();
        let ok = self.w_x.iter().all(|w| w.len() == xs)
            && self.w_h.iter().all(|w| w.len() == hs)
            && self.w_c.iter().chain(self.b.iter()).all(|w| w.len() == self.hidden);
        if ok {
            Ok(())
        } else {
            Err(Error::Shape("ConvLSTM parameter lengths inconsistent with declared sizes".into()))
        }
    }
}

/// Interleaves per-gate kernels `(k,k,c_in,F)` into one `(k,k,c_in,4F)` kernel.
fn stack_gates(gates: &[Vec<f64>; 4], s: KernelShape) -> Vec<f64> {
    let rows = s.kh * s.kw * s.c_in;
    let f = s.c_out;
    let mut out = Vec::with_capacity(rows * 4 * f);
    for r in 0..rows {
        for g in gates {
            out.extend_from_slice(&g[r * f..(r + 1) * f]);
        }
    }
    out
}

fn unstack_gates(stacked: &[f64], s: KernelShape) -> [Vec<f64>; 4] {
    let rows = s.kh * s.kw * s.c_in;
    let f = s.c_out;
    std::array::from_fn(|g| {
        let mut v = Vec::with_capacity(rows * f);
        for r in 0..rows {
            v.extend_from_slice(&stacked[r * 4 * f + g * f..r * 4 * f + (g + 1) * f]);
        }
        v
    })
}

/// Hidden state and memory cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLstmState {
    pub h: Tensor4,
    pub c: Tensor4,
}

impl ConvLstmState {
    pub fn zeros(shape: Shape4) -> Self {
        Self {
            h: Tensor4::zeros(shape),
            c: Tensor4::zeros(shape),
        }
    }
}

/// Intermediates of one step, needed by [`convlstm_backward`].
#[derive(Debug, Clone)]
pub struct StepCache {
    x: Tensor4,
    prev: ConvLstmState,
    /// Gate activations `i, f, g = tanh(candidate), o`, each `(n,h,w,F)` flattened.
    gates: [Vec<f64>; 4],
    c: Vec<f64>,
    tanh_c: Vec<f64>,
}

impl StepCache {
    pub fn input_gate(&self) -> &[f64] {
        &self.gates[0]
    }
    pub fn forget_gate(&self) -> &[f64] {
        &self.gates[1]
    }
    pub fn output_gate(&self) -> &[f64] {
        &self.gates[3]
    }
}

/// Gradients of every ConvLSTM weight, laid out like [`ConvLstmParams`].
pub type ConvLstmGrads = ConvLstmParams;

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl ConvLstmGrads {
    pub fn accumulate(&mut self, other: &ConvLstmGrads) {
        for (a, b) in self.tensors_mut().zip(other.tensors()) {
            add_into(a, b);
        }
    }
}

/// One ConvLSTM step.
pub fn convlstm_step(x: &Tensor4, state: &ConvLstmState, p: &ConvLstmParams) -> Result<ConvLstmState> {
    convlstm_step_cached(x, state, p).map(|(s, _)| s)
}

/// One ConvLSTM step, also returning the cache for [`convlstm_backward`].
pub fn convlstm_step_cached(
    x: &Tensor4,
    state: &ConvLstmState,
    p: &ConvLstmParams,
) -> Result<(ConvLstmState, StepCache)> {
    p.check()?;
    let xs = x.shape();
    let hidden_shape = xs.with_channels(p.hidden);
    ensure_same_shape("convlstm_step hidden state", state.h.shape(), hidden_shape)?;
    ensure_same_shape("convlstm_step memory cell", state.c.shape(), hidden_shape)?;
    let mut z = conv2d(x, &p.stacked_input_kernel(), Padding::Same)?;
    z.add_assign(&conv2d(&state.h, &p.stacked_hidden_kernel(), Padding::Same)?)?;

    let f = p.hidden;
    let len = hidden_shape.len();
    let mut gates: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; len]);
    let mut c = vec![0.0; len];
    let mut tanh_c = vec![0.0; len];
    let mut h = vec![0.0; len];
    let c_prev = state.c.data();
    for (px, zpx) in z.data().chunks_exact(4 * f).enumerate() {
        for ch in 0..f {
            let j = px * f + ch;
            let i_g = sigmoid_scalar(zpx[ch] + p.w_c[0][ch] * c_prev[j]);
            let f_g = sigmoid_scalar(zpx[f + ch] + p.w_c[1][ch] * c_prev[j]);
            let g_g = zpx[2 * f + ch].tanh();
            let c_t = f_g * c_prev[j] + i_g * g_g;
            let o_g = sigmoid_scalar(zpx[3 * f + ch] + p.w_c[2][ch] * c_t);
            let tc = c_t.tanh();
            gates[0][j] = i_g;
            gates[1][j] = f_g;
            gates[2][j] = g_g;
            gates[3][j] = o_g;
            c[j] = c_t;
            tanh_c[j] = tc;
            h[j] = o_g * tc;
        }
    }
    let next = ConvLstmState {
        h: Tensor4::from_vec(hidden_shape, h)?,
        c: Tensor4::from_vec(hidden_shape, c.clone())?,
    };
    let cache = StepCache {
        x: x.clone(),
        prev: state.clone(),
        gates,
        c,
        tanh_c,
    };
    Ok((next, cache))
}

/// Gradients produced by one step's backward pass.
#[derive(Debug, Clone)]
pub struct StepGrads {
    pub x: Tensor4,
    pub h_prev: Tensor4,
    pub c_prev: Tensor4,
    pub params: ConvLstmGrads,
}

/// Reverse-mode rule for one step given upstream gradients on `H` and `C`.
pub fn convlstm_backward(
    cache: &StepCache,
    p: &ConvLstmParams,
    grad_h: &Tensor4,
    grad_c: Option<&Tensor4>,
) -> Result<StepGrads> {
    let hs = cache.prev.h.shape();
    ensure_same_shape("convlstm_backward grad_h", grad_h.shape(), hs)?;
    if let Some(gc) = grad_c {
        ensure_same_shape("convlstm_backward grad_c", gc.shape(), hs)?;
    }
    let f = p.hidden;
    let len = hs.len();
    let mut grads = ConvLstmParams::zeros(p.input_channels, p.hidden, p.kernel_size);
    let mut dz = vec![0.0; 4 * len];
    let mut dc_prev = vec![0.0; len];
    let c_prev = cache.prev.c.data();
    let [gi, gf, gg, go] = &cache.gates;
    for j in 0..len {
        let ch = j % f;
        let px = j / f;
        let dh = grad_h.data()[j];
        let d_o = dh * cache.tanh_c[j];
        let dz_o = d_o * go[j] * (1.0 - go[j]);
        let mut dc = grad_c.map_or(0.0, |g| g.data()[j]) + dh * go[j] * (1.0 - cache.tanh_c[j] * cache.tanh_c[j]);
        dc += dz_o * p.w_c[2][ch];
        grads.w_c[2][ch] += dz_o * cache.c[j];
        let dz_i = dc * gg[j] * gi[j] * (1.0 - gi[j]);
        let dz_f = dc * c_prev[j] * gf[j] * (1.0 - gf[j]);
        let dz_c = dc * gi[j] * (1.0 - gg[j] * gg[j]);
        dc_prev[j] = dc * gf[j] + dz_i * p.w_c[0][ch] + dz_f * p.w_c[1][ch];
        grads.w_c[0][ch] += dz_i * c_prev[j];
        grads.w_c[1][ch] += dz_f * c_prev[j];
        let base = px * 4 * f;
        dz[base + ch] = dz_i;
        dz[base + f + ch] = dz_f;
        dz[base + 2 * f + ch] = dz_c;
        dz[base + 3 * f + ch] = dz_o;
    }
    let dz = Tensor4::from_vec(hs.with_channels(4 * f), dz)?;
    let kx = p.stacked_input_kernel();
    let kh = p.stacked_hidden_kernel();
    let (dx, gkx) = conv2d_backward(&dz, &cache.x, &kx, Padding::Same)?;
    let (dh_prev, gkh) = conv2d_backward(&dz, &cache.prev.h, &kh, Padding::Same)?;
    grads.w_x = unstack_gates(&gkx.data, p.input_kernel_shape());
    grads.w_h = unstack_gates(&gkh.data, p.hidden_kernel_shape());
    for g in 0..4 {
        grads.b[g] = gkx.bias[g * f..(g + 1) * f].to_vec();
    }
    Ok(StepGrads {
        x: dx,
        h_prev: dh_prev,
        c_prev: Tensor4::from_vec(hs, dc_prev)?,
        params: grads,
    })
}

/// Weights of the bidirectional fusion.
#[derive(Debug, Clone, PartialEq)]
pub struct BConvLstmParams {
    pub fwd: ConvLstmParams,
    pub bwd: ConvLstmParams,
    pub out_channels: usize,
    pub out_kernel_size: usize,
    /// Output kernel on the forward hidden state, `(k_y, k_y, F, out)`.
    pub w_y_fwd: Vec<f64>,
    /// Output kernel on the backward hidden state.
    pub w_y_bwd: Vec<f64>,
    pub b_y: Vec<f64>,
}

impl BConvLstmParams {
    pub fn zeros(input_channels: usize, hidden: usize, kernel_size: usize, out_channels: usize, out_kernel_size: usize) -> Self {
        let ys = KernelShape::new(out_kernel_size, out_kernel_size, hidden, out_channels).len();
        Self {
            fwd: ConvLstmParams::zeros(input_channels, hidden, kernel_size),
            bwd: ConvLstmParams::zeros(input_channels, hidden, kernel_size),
            out_channels,
            out_kernel_size,
            w_y_fwd: vec![0.0; ys],
            w_y_bwd: vec![0.0; ys],
            b_y: vec![0.0; out_channels],
        }
    }

    pub fn out_kernel_shape(&self) -> KernelShape {
        KernelShape::new(self.out_kernel_size, self.out_kernel_size, self.fwd.hidden, self.out_channels)
    }

    pub fn param_count(&self) -> usize {
        self.fwd.param_count() + self.bwd.param_count() + 2 * self.out_kernel_shape().len() + self.out_channels
    }

    pub fn accumulate(&mut self, other: &BConvLstmParams) {
        self.fwd.accumulate(&other.fwd);
        self.bwd.accumulate(&other.bwd);
        add_into(&mut self.w_y_fwd, &other.w_y_fwd);
        add_into(&mut self.w_y_bwd, &other.w_y_bwd);
        add_into(&mut self.b_y, &other.b_y);
    }

    fn check(&self) -> Result<()> {
        if self.fwd.hidden != self.bwd.hidden || self.fwd.input_channels != self.bwd.input_channels {
            return Err(Error::Shape("BConvLSTM directions disagree on sizes".into()));
        }
        let ys = self.out_kernel_shape();
        if self.w_y_fwd.len() != ys.len() || self.w_y_bwd.len() != ys.len() || self.b_y.len() != ys.c_out {
            return Err(Error::Shape(format!("BConvLSTM output kernels must be {ys}")));
        }
        if self.out_kernel_size % 2 == 0 {
            return Err(Error::Shape("BConvLSTM output kernel size must be odd".into()));
        }
        Ok(())
    }

    fn fwd_out_kernel(&self) -> KernelRef<'_> {
        KernelRef {
            shape: self.out_kernel_shape(),
            data: &self.w_y_fwd,
            bias: &self.b_y,
        }
    }

    fn bwd_out_kernel<'a>(&'a self, zero_bias: &'a [f64]) -> KernelRef<'a> {
        KernelRef {
            shape: self.out_kernel_shape(),
            data: &self.w_y_bwd,
            bias: zero_bias,
        }
    }
}

pub type BConvLstmGrads = BConvLstmParams;

/// Forward caches of a fusion call: two steps per direction plus the output.
#[derive(Debug, Clone)]
pub struct FuseCache {
    fwd_steps: [StepCache; 2],
    bwd_steps: [StepCache; 2],
    h_fwd: Tensor4,
    h_bwd: Tensor4,
    y: Tensor4,
}

/// Fuses encoder and decoder maps as the two-step sequence `(x_dec, x_enc)`.
///
/// The forward cell reads `x_dec` then `x_enc`; the backward cell reads
/// `x_enc` then `x_dec`; both start from zero state. The output combines each
/// direction's final hidden state: `tanh(W_y→ * H→ + W_y← * H← + b_y)`.
pub fn bconvlstm_fuse(x_enc: &Tensor4, x_dec: &Tensor4, p: &BConvLstmParams) -> Result<Tensor4> {
    bconvlstm_fuse_cached(x_enc, x_dec, p).map(|(y, _)| y)
}

pub fn bconvlstm_fuse_cached(x_enc: &Tensor4, x_dec: &Tensor4, p: &BConvLstmParams) -> Result<(Tensor4, FuseCache)> {
    p.check()?;
    ensure_same_shape("bconvlstm_fuse inputs", x_enc.shape(), x_dec.shape())?;
    let zero = ConvLstmState::zeros(x_enc.shape().with_channels(p.fwd.hidden));
    let (f1, fc1) = convlstm_step_cached(x_dec, &zero, &p.fwd)?;
    let (f2, fc2) = convlstm_step_cached(x_enc, &f1, &p.fwd)?;
    let (b1, bc1) = convlstm_step_cached(x_enc, &zero, &p.bwd)?;
    let (b2, bc2) = convlstm_step_cached(x_dec, &b1, &p.bwd)?;
    let zero_bias = vec![0.0; p.out_channels];
    let mut pre = conv2d(&f2.h, p.fwd_out_kernel(), Padding::Same)?;
    pre.add_assign(&conv2d(&b2.h, p.bwd_out_kernel(&zero_bias), Padding::Same)?)?;
    let y = pre.map(f64::tanh);
    Ok((
        y.clone(),
        FuseCache {
            fwd_steps: [fc1, fc2],
            bwd_steps: [bc1, bc2],
            h_fwd: f2.h,
            h_bwd: b2.h,
            y,
        },
    ))
}

/// Gradients of a fusion call.
#[derive(Debug, Clone)]
pub struct FuseGrads {
    pub x_enc: Tensor4,
    pub x_dec: Tensor4,
    pub params: BConvLstmGrads,
}

pub fn bconvlstm_backward(grad_out: &Tensor4, cache: &FuseCache, p: &BConvLstmParams) -> Result<FuseGrads> {
    ensure_same_shape("bconvlstm_backward", grad_out.shape(), cache.y.shape())?;
    let mut dpre = grad_out.clone();
    for (g, y) in dpre.data_mut().iter_mut().zip(cache.y.data()) {
        *g *= 1.0 - y * y;
    }
    let zero_bias = vec![0.0; p.out_channels];
    let (dh_fwd, gy_fwd) = conv2d_backward(&dpre, &cache.h_fwd, p.fwd_out_kernel(), Padding::Same)?;
    let (dh_bwd, gy_bwd) = conv2d_backward(&dpre, &cache.h_bwd, p.bwd_out_kernel(&zero_bias), Padding::Same)?;

    let (fwd_grads, dx_dec_f, dx_enc_f) = unroll_backward(&cache.fwd_steps, &p.fwd, &dh_fwd)?;
    let (bwd_grads, dx_enc_b, dx_dec_b) = unroll_backward(&cache.bwd_steps, &p.bwd, &dh_bwd)?;

    let mut x_enc = dx_enc_f;
    x_enc.add_assign(&dx_enc_b)?;
    let mut x_dec = dx_dec_f;
    x_dec.add_assign(&dx_dec_b)?;
    Ok(FuseGrads {
        x_enc,
        x_dec,
        params: BConvLstmParams {
            fwd: fwd_grads,
            bwd: bwd_grads,
            out_channels: p.out_channels,
            out_kernel_size: p.out_kernel_size,
            w_y_fwd: gy_fwd.data,
            w_y_bwd: gy_bwd.data,
            b_y: gy_fwd.bias,
        },
    })
}

/// Backpropagates through two chained steps; returns `(param grads, dx_step1, dx_step2)`.
fn unroll_backward(steps: &[StepCache; 2], p: &ConvLstmParams, grad_h: &Tensor4) -> Result<(ConvLstmGrads, Tensor4, Tensor4)> {
    let second = convlstm_backward(&steps[1], p, grad_h, None)?;
    let first = convlstm_backward(&steps[0], p, &second.h_prev, Some(&second.c_prev))?;
    let mut params = second.params;
    params.accumulate(&first.params);
    Ok((params, first.x, second.x))
}
