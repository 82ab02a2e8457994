//! Dense rank-4 tensors in `(n, h, w, c)` row-major order and convolution
//! kernels in `(kh, kw, c_in, c_out)` order.

use std::fmt;

use crate::error::{Error, Result};

/// Shape of a [`Tensor4`]: batch, rows, columns, channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape4 {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Shape4 {
    pub const fn new(n: usize, h: usize, w: usize, c: usize) -> Self {
        Self { n, h, w, c }
    }

    pub const fn len(&self) -> usize {
        self.n * self.h * self.w * self.c
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Pixels per image times channels.
    pub const fn image_len(&self) -> usize {
        self.h * self.w * self.c
    }

    #[inline]
    pub const fn index(&self, n: usize, y: usize, x: usize, c: usize) -> usize {
        ((n * self.h + y) * self.w + x) * self.c + c
    }

    pub fn with_channels(self, c: usize) -> Self {
        Self { c, ..self }
    }
}

impl fmt::Display for Shape4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{},{})", self.n, self.h, self.w, self.c)
    }
}

/// Rank-4 activation tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    shape: Shape4,
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(shape: Shape4) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: Shape4, value: f64) -> Self {
        assert!(
            shape.n > 0 && shape.h > 0 && shape.w > 0 && shape.c > 0,
            "tensor shape components must be positive, got {shape}"
        );
        Self {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn from_vec(shape: Shape4, data: Vec<f64>) -> Result<Self> {
        if shape.n == 0 || shape.h == 0 || shape.w == 0 || shape.c == 0 {
            return Err(Error::Shape(format!(
                "tensor shape components must be positive, got {shape}"
            )));
        }
        if data.len() != shape.len() {
            return Err(Error::Shape(format!(
                "data length {} does not match shape {shape}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn from_fn(shape: Shape4, mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Self {
        let mut t = Self::zeros(shape);
        for n in 0..shape.n {
            for y in 0..shape.h {
                for x in 0..shape.w {
                    for c in 0..shape.c {
                        t.data[shape.index(n, y, x, c)] = f(n, y, x, c);
                    }
                }
            }
        }
        t
    }

    #[inline]
    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, n: usize, y: usize, x: usize, c: usize) -> f64 {
        self.data[self.shape.index(n, y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, y: usize, x: usize, c: usize, v: f64) {
        let i = self.shape.index(n, y, x, c);
        self.data[i] = v;
    }

    /// Channel vector at one pixel.
    #[inline]
    pub fn pixel(&self, n: usize, y: usize, x: usize) -> &[f64] {
        let i = self.shape.index(n, y, x, 0);
        &self.data[i..i + self.shape.c]
    }

    /// One batch item as a `(1, h, w, c)` tensor.
    pub fn item(&self, n: usize) -> Tensor4 {
        let len = self.shape.image_len();
        Tensor4 {
            shape: Shape4 { n: 1, ..self.shape },
            data: self.data[n * len..(n + 1) * len].to_vec(),
        }
    }

    /// Stacks equally shaped tensors along the batch axis.
    pub fn stack(items: &[&Tensor4]) -> Result<Tensor4> {
        let first = items
            .first()
            .ok_or_else(|| Error::Shape("cannot stack an empty list".into()))?
            .shape;
        let mut data = Vec::new();
        let mut n = 0;
        for t in items {
            if (t.shape.h, t.shape.w, t.shape.c) != (first.h, first.w, first.c) {
                return Err(Error::Shape(format!(
                    "cannot stack {} with {}",
                    t.shape, first
                )));
            }
            n += t.shape.n;
            data.extend_from_slice(&t.data);
        }
        Tensor4::from_vec(Shape4 { n, ..first }, data)
    }

    /// Copies the `(h, w)` window at `(y0, x0)` from every item.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Tensor4> {
        let s = self.shape;
        if y0 + h > s.h || x0 + w > s.w || h == 0 || w == 0 {
            return Err(Error::Shape(format!(
                "crop ({y0},{x0}) size {h}x{w} outside {s}"
            )));
        }
        let out_shape = Shape4::new(s.n, h, w, s.c);
        let mut data = Vec::with_capacity(out_shape.len());
        for n in 0..s.n {
            for y in y0..y0 + h {
                let start = s.index(n, y, x0, 0);
                data.extend_from_slice(&self.data[start..start + w * s.c]);
            }
        }
        Tensor4::from_vec(out_shape, data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor4 {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &Tensor4) -> Result<()> {
        ensure_same_shape("add_assign", self.shape, other.shape)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &Tensor4) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

pub(crate) fn ensure_same_shape(op: &str, a: Shape4, b: Shape4) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{op}: shapes {a} and {b} differ")));
    }
    Ok(())
}

/// Shape of a convolution kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct KernelShape {
    pub kh: usize,
    pub kw: usize,
    pub c_in: usize,
    pub c_out: usize,
}

impl KernelShape {
    pub const fn new(kh: usize, kw: usize, c_in: usize, c_out: usize) -> Self {
        Self { kh, kw, c_in, c_out }
    }

    pub const fn len(&self) -> usize {
        self.kh * self.kw * self.c_in * self.c_out
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Weights plus one bias per output channel.
    pub const fn param_count(&self) -> usize {
        self.len() + self.c_out
    }

    #[inline]
    pub const fn index(&self, ky: usize, kx: usize, ci: usize, co: usize) -> usize {
        ((ky * self.kw + kx) * self.c_in + ci) * self.c_out + co
    }
}

impl fmt::Display for KernelShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{},{})", self.kh, self.kw, self.c_in, self.c_out)
    }
}

/// Owned convolution kernel with per-output-channel bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel4 {
    pub shape: KernelShape,
    pub data: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Kernel4 {
    pub fn zeros(shape: KernelShape) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.len()],
            bias: vec![0.0; shape.c_out],
        }
    }

    pub fn new(shape: KernelShape, data: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        KernelRef::new(shape, &data, &bias)?;
        Ok(Self { shape, data, bias })
    }

    /// `1x1` kernel copying channel `i` to channel `i`.
    pub fn identity(channels: usize) -> Self {
        let shape = KernelShape::new(1, 1, channels, channels);
        let mut k = Self::zeros(shape);
        for c in 0..channels {
            k.data[shape.index(0, 0, c, c)] = 1.0;
        }
        k
    }

    pub fn as_ref(&self) -> KernelRef<'_> {
        KernelRef {
            shape: self.shape,
            data: &self.data,
            bias: &self.bias,
        }
    }
}

/// Borrowed kernel, used so layers can convolve straight out of parameter storage.
#[derive(Debug, Clone, Copy)]
pub struct KernelRef<'a> {
    pub shape: KernelShape,
    pub data: &'a [f64],
    pub bias: &'a [f64],
}

impl<'a> KernelRef<'a> {
    pub fn new(shape: KernelShape, data: &'a [f64], bias: &'a [f64]) -> Result<Self> {
        if data.len() != shape.len() || bias.len() != shape.c_out {
            return Err(Error::Shape(format!(
                "kernel {shape} needs {} weights and {} biases, got {} and {}",
                shape.len(),
                shape.c_out,
                data.len(),
                bias.len()
            )));
        }
        Ok(Self { shape, data, bias })
    }
}

impl<'a> From<&'a Kernel4> for KernelRef<'a> {
    fn from(k: &'a Kernel4) -> Self {
        k.as_ref()
    }
}

/// Gradient with respect to a kernel's weights and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelGrad {
    pub data: Vec<f64>,
    pub bias: Vec<f64>,
}

impl KernelGrad {
    pub fn zeros(shape: KernelShape) -> Self {
        Self {
            data: vec![0.0; shape.len()],
            bias: vec![0.0; shape.c_out],
        }
    }

    pub fn accumulate(&mut self, other: &KernelGrad) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn length_invariant_enforced() {
        let s = Shape4::new(1, 2, 2, 1);
        assert!(Tensor4::from_vec(s, vec![0.0; 3]).is_err());
        assert!(Tensor4::from_vec(Shape4::new(1, 0, 2, 1), vec![]).is_err());
        assert!(Tensor4::from_vec(s, vec![0.0; 4]).is_ok());
    }

    #[test]
    fn row_major_layout() {
        let s = Shape4::new(2, 3, 4, 5);
        assert_eq!(s.index(0, 0, 0, 1), 1);
        assert_eq!(s.index(0, 0, 1, 0), 5);
        assert_eq!(s.index(0, 1, 0, 0), 20);
        assert_eq!(s.index(1, 0, 0, 0), 60);
    }

    #[test]
    fn crop_and_stack() {
        let t = Tensor4::from_fn(Shape4::new(2, 4, 4, 1), |n, y, x, _| (n * 100 + y * 10 + x) as f64);
        let c = t.crop(1, 2, 2, 2).unwrap();
        assert_eq!(c.data(), &[12.0, 13.0, 22.0, 23.0, 112.0, 113.0, 122.0, 123.0]);
        assert!(t.crop(3, 3, 2, 2).is_err());
        let s = Tensor4::stack(&[&t.item(1), &t.item(0)]).unwrap();
        assert_eq!(s.item(0), t.item(1));
    }
}
