use crate::error::{Error, Result};
use crate::tensor::{ensure_same_shape, Tensor4};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Tanh,
}

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    #[inline]
    pub fn apply_scalar(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid_scalar(x),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation's output `y`.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
        }
    }

    pub fn forward(self, x: &Tensor4) -> Tensor4 {
        x.map(|v| self.apply_scalar(v))
    }

    /// Gradient through the activation given its cached output.
    pub fn backward(self, grad_out: &Tensor4, output: &Tensor4) -> Result<Tensor4> {
        ensure_same_shape("activation backward", grad_out.shape(), output.shape())?;
        let mut g = grad_out.clone();
        self.backward_in_place(g.data_mut(), output.data());
        Ok(g)
    }

    pub(crate) fn backward_in_place(self, grad: &mut [f64], output: &[f64]) {
        if self == Activation::Identity {
            return;
        }
        for (g, &y) in grad.iter_mut().zip(output) {
            *g *= self.derivative_from_output(y);
        }
    }
}

pub fn relu(x: &Tensor4) -> Tensor4 {
    Activation::Relu.forward(x)
}

pub fn sigmoid(x: &Tensor4) -> Tensor4 {
    Activation::Sigmoid.forward(x)
}

pub fn tanh(x: &Tensor4) -> Tensor4 {
    Activation::Tanh.forward(x)
}

pub fn add(a: &Tensor4, b: &Tensor4) -> Result<Tensor4> {
    zip_with("add", a, b, |x, y| x + y)
}

pub fn hadamard(a: &Tensor4, b: &Tensor4) -> Result<Tensor4> {
    zip_with("hadamard", a, b, |x, y| x * y)
}

/// Gradients of `a ⊙ b` with respect to `a` and `b`.
pub fn hadamard_backward(grad_out: &Tensor4, a: &Tensor4, b: &Tensor4) -> Result<(Tensor4, Tensor4)> {
    Ok((hadamard(grad_out, b)?, hadamard(grad_out, a)?))
}

fn zip_with(op: &str, a: &Tensor4, b: &Tensor4, f: impl Fn(f64, f64) -> f64) -> Result<Tensor4> {
    ensure_same_shape(op, a.shape(), b.shape())?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor4::from_vec(a.shape(), data)
}

/// Concatenates along channels, `a`'s channels first.
pub fn concat_channels(a: &Tensor4, b: &Tensor4) -> Result<Tensor4> {
    let (sa, sb) = (a.shape(), b.shape());
    if (sa.n, sa.h, sa.w) != (sb.n, sb.h, sb.w) {
        return Err(Error::Shape(format!(
            "concat_channels: spatial shapes {sa} and {sb} differ"
        )));
    }
    let out_shape = sa.with_channels(sa.c + sb.c);
    let mut data = Vec::with_capacity(out_shape.len());
    for (pa, pb) in a.data().chunks_exact(sa.c).zip(b.data().chunks_exact(sb.c)) {
        data.extend_from_slice(pa);
        data.extend_from_slice(pb);
    }
    Tensor4::from_vec(out_shape, data)
}

/// Inverse of [`concat_channels`]: first `at` channels, then the rest.
pub fn split_channels(x: &Tensor4, at: usize) -> Result<(Tensor4, Tensor4)> {
    let s = x.shape();
    if at == 0 || at >= s.c {
        return Err(Error::Shape(format!(
            "split_channels: split point {at} outside (0,{})",
            s.c
        )));
    }
    let mut a = Vec::with_capacity(s.n * s.h * s.w * at);
    let mut b = Vec::with_capacity(s.n * s.h * s.w * (s.c - at));
    for px in x.data().chunks_exact(s.c) {
        a.extend_from_slice(&px[..at]);
        b.extend_from_slice(&px[at..]);
    }
    Ok((
        Tensor4::from_vec(s.with_channels(at), a)?,
        Tensor4::from_vec(s.with_channels(s.c - at), b)?,
    ))
}
