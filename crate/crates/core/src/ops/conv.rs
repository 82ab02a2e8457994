//! Stride-1 convolution and the stride-2 `2x2` transposed convolution.
//!
//! Both are lowered to GEMM: convolution through an im2col patch matrix, the
//! transposed convolution through one small product per output row and tap.

use super::gemm::gemm;
use crate::error::{Error, Result};
use crate::tensor::{KernelGrad, KernelRef, KernelShape, Shape4, Tensor4};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Zero-fill so the output keeps the input's rows and columns.
    Same,
    /// No padding; the output shrinks by `k - 1` in each spatial dimension.
    Valid,
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    out_h: usize,
    out_w: usize,
    pad_top: usize,
    pad_left: usize,
}

fn geometry(input: Shape4, k: KernelShape, padding: Padding) -> Result<Geometry> {
    if k.c_in != input.c {
        return Err(Error::Shape(format!(
            "conv2d: kernel {k} expects {} input channels, input {input} has {}",
            k.c_in, input.c
        )));
    }
    match padding {
        Padding::Same => {
            if k.kh % 2 == 0 || k.kw % 2 == 0 {
                return Err(Error::Shape(format!(
                    "conv2d: same padding needs odd kernel sizes, got {k}"
                )));
            }
            Ok(Geometry {
                out_h: input.h,
                out_w: input.w,
                pad_top: k.kh / 2,
                pad_left: k.kw / 2,
            })
        }
        Padding::Valid => {
            if k.kh > input.h || k.kw > input.w {
                return Err(Error::Shape(format!(
                    "conv2d: kernel {k} larger than input {input}"
                )));
            }
            Ok(Geometry {
                out_h: input.h - k.kh + 1,
                out_w: input.w - k.kw + 1,
                pad_top: 0,
                pad_left: 0,
            })
        }
    }
}

/// Fills `cols` (`out_h*out_w` rows by `kh*kw*c_in` columns) for batch item `n`.
fn im2col(input: &Tensor4, n: usize, k: KernelShape, g: Geometry, cols: &mut [f64]) {
    let s = input.shape();
    let row_len = k.kh * k.kw * k.c_in;
    let data = input.data();
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let row = &mut cols[(oy * g.out_w + ox) * row_len..][..row_len];
            for ky in 0..k.kh {
                let iy = (oy + ky) as isize - g.pad_top as isize;
                for kx in 0..k.kw {
                    let ix = (ox + kx) as isize - g.pad_left as isize;
                    let dst = &mut row[(ky * k.kw + kx) * k.c_in..][..k.c_in];
                    if iy < 0 || ix < 0 || iy >= s.h as isize || ix >= s.w as isize {
                        dst.fill(0.0);
                    } else {
                        let src = s.index(n, iy as usize, ix as usize, 0);
                        dst.copy_from_slice(&data[src..src + k.c_in]);
                    }
                }
            }
        }
    }
}

/// Scatter-adds a patch-matrix gradient back onto image `n` of `grad`.
fn col2im(cols: &[f64], n: usize, k: KernelShape, g: Geometry, grad: &mut Tensor4) {
    let s = grad.shape();
    let row_len = k.kh * k.kw * k.c_in;
    let data = grad.data_mut();
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let row = &cols[(oy * g.out_w + ox) * row_len..][..row_len];
            for ky in 0..k.kh {
                let iy = (oy + ky) as isize - g.pad_top as isize;
                if iy < 0 || iy >= s.h as isize {
                    continue;
                }
                for kx in 0..k.kw {
                    let ix = (ox + kx) as isize - g.pad_left as isize;
                    if ix < 0 || ix >= s.w as isize {
                        continue;
                    }
                    let dst = s.index(n, iy as usize, ix as usize, 0);
                    let src = &row[(ky * k.kw + kx) * k.c_in..][..k.c_in];
                    for (d, v) in data[dst..dst + k.c_in].iter_mut().zip(src) {
                        *d += v;
                    }
                }
            }
        }
    }
}

fn is_pointwise(k: KernelShape, g: Geometry) -> bool {
    k.kh == 1 && k.kw == 1 && g.pad_top == 0 && g.pad_left == 0
}

/// Stride-1 2-D convolution with per-output-channel bias.
pub fn conv2d<'a>(input: &Tensor4, kernel: impl Into<KernelRef<'a>>, padding: Padding) -> Result<Tensor4> {
    let kernel = kernel.into();
    let k = kernel.shape;
    let s = input.shape();
    let g = geometry(s, k, padding)?;
    let out_shape = Shape4::new(s.n, g.out_h, g.out_w, k.c_out);
    let mut out = Tensor4::zeros(out_shape);
    let p = g.out_h * g.out_w;
    let kk = k.kh * k.kw * k.c_in;
    let out_len = out_shape.image_len();
    {
        let od = out.data_mut();
        for chunk in od.chunks_exact_mut(k.c_out) {
            chunk.copy_from_slice(kernel.bias);
        }
    }
    let mut cols = if is_pointwise(k, g) { Vec::new() } else { vec![0.0; p * kk] };
    for n in 0..s.n {
        let a: &[f64] = if is_pointwise(k, g) {
            &input.data()[n * s.image_len()..(n + 1) * s.image_len()]
        } else {
            im2col(input, n, k, g, &mut cols);
            &cols
        };
        let c = &mut out.data_mut()[n * out_len..(n + 1) * out_len];
        gemm(p, kk, k.c_out, a, (kk as isize, 1), kernel.data, (k.c_out as isize, 1), 1.0, c, (k.c_out as isize, 1));
    }
    Ok(out)
}

/// Reverse-mode rule for [`conv2d`]: returns `(grad_input, grad_kernel)`.
pub fn conv2d_backward<'a>(
    grad_out: &Tensor4,
    cached_input: &Tensor4,
    kernel: impl Into<KernelRef<'a>>,
    padding: Padding,
) -> Result<(Tensor4, KernelGrad)> {
    let kernel = kernel.into();
    let k = kernel.shape;
    let s = cached_input.shape();
    let g = geometry(s, k, padding)?;
    let expected = Shape4::new(s.n, g.out_h, g.out_w, k.c_out);
    if grad_out.shape() != expected {
        return Err(Error::Shape(format!(
            "conv2d_backward: grad_out {} does not match forward output {expected}",
            grad_out.shape()
        )));
    }
    let p = g.out_h * g.out_w;
    let kk = k.kh * k.kw * k.c_in;
    let out_len = expected.image_len();
    let mut grad_in = Tensor4::zeros(s);
    let mut grad_k = KernelGrad::zeros(k);
    for chunk in grad_out.data().chunks_exact(k.c_out) {
        for (b, v) in grad_k.bias.iter_mut().zip(chunk) {
            *b += v;
        }
    }
    let pointwise = is_pointwise(k, g);
    let mut cols = vec![0.0; p * kk];
    for n in 0..s.n {
        let go = &grad_out.data()[n * out_len..(n + 1) * out_len];
        if pointwise {
            let x = &cached_input.data()[n * s.image_len()..(n + 1) * s.image_len()];
            gemm(kk, p, k.c_out, x, (1, kk as isize), go, (k.c_out as isize, 1), 1.0, &mut grad_k.data, (k.c_out as isize, 1));
            let gi = &mut grad_in.data_mut()[n * s.image_len()..(n + 1) * s.image_len()];
            gemm(p, k.c_out, kk, go, (k.c_out as isize, 1), kernel.data, (1, k.c_out as isize), 0.0, gi, (kk as isize, 1));
        } else {
            im2col(cached_input, n, k, g, &mut cols);
            gemm(kk, p, k.c_out, &cols, (1, kk as isize), go, (k.c_out as isize, 1), 1.0, &mut grad_k.data, (k.c_out as isize, 1));
            gemm(p, k.c_out, kk, go, (k.c_out as isize, 1), kernel.data, (1, k.c_out as isize), 0.0, &mut cols, (kk as isize, 1));
            col2im(&cols, n, k, g, &mut grad_in);
        }
    }
    Ok((grad_in, grad_k))
}

fn check_transposed(input: Shape4, k: KernelShape) -> Result<()> {
    if k.kh != 2 || k.kw != 2 {
        return Err(Error::Shape(format!(
            "transposed_conv2x2: kernel must be 2x2, got {k}"
        )));
    }
    if k.c_in != input.c {
        return Err(Error::Shape(format!(
            "transposed_conv2x2: kernel {k} expects {} input channels, input {input} has {}",
            k.c_in, input.c
        )));
    }
    Ok(())
}

/// Stride-2 `2x2` transposed convolution: `(n,h,w,c_in) -> (n,2h,2w,c_out)`.
///
/// Output pixel `(2y+dy, 2x+dx)` receives `input[y,x,:] · kernel[dy,dx,:,:]`,
/// the adjoint of a stride-2 `2x2` convolution.
pub fn transposed_conv2x2<'a>(input: &Tensor4, kernel: impl Into<KernelRef<'a>>) -> Result<Tensor4> {
    let kernel = kernel.into();
    let k = kernel.shape;
    let s = input.shape();
    check_transposed(s, k)?;
    let out_shape = Shape4::new(s.n, 2 * s.h, 2 * s.w, k.c_out);
    let mut out = Tensor4::zeros(out_shape);
    for chunk in out.data_mut().chunks_exact_mut(k.c_out) {
        chunk.copy_from_slice(kernel.bias);
    }
    let tap_len = k.c_in * k.c_out;
    for n in 0..s.n {
        for y in 0..s.h {
            let a = &input.data()[s.index(n, y, 0, 0)..s.index(n, y, 0, 0) + s.w * s.c];
            for dy in 0..2 {
                for dx in 0..2 {
                    let w = &kernel.data[(dy * 2 + dx) * tap_len..][..tap_len];
                    let start = out_shape.index(n, 2 * y + dy, dx, 0);
                    let end = out_shape.index(n, 2 * y + dy, 0, 0) + out_shape.w * k.c_out;
                    let c = &mut out.data_mut()[start..end];
                    gemm(s.w, k.c_in, k.c_out, a, (k.c_in as isize, 1), w, (k.c_out as isize, 1), 1.0, c, (2 * k.c_out as isize, 1));
                }
            }
        }
    }
    Ok(out)
}

/// Reverse-mode rule for [`transposed_conv2x2`].
pub fn transposed_conv2x2_backward<'a>(
    grad_out: &Tensor4,
    cached_input: &Tensor4,
    kernel: impl Into<KernelRef<'a>>,
) -> Result<(Tensor4, KernelGrad)> {
    let kernel = kernel.into();
    let k = kernel.shape;
    let s = cached_input.shape();
    check_transposed(s, k)?;
    let out_shape = Shape4::new(s.n, 2 * s.h, 2 * s.w, k.c_out);
    if grad_out.shape() != out_shape {
        return Err(Error::Shape(format!(
            "transposed_conv2x2_backward: grad_out {} does not match forward output {out_shape}",
            grad_out.shape()
        )));
    }
    let mut grad_in = Tensor4::zeros(s);
    let mut grad_k = KernelGrad::zeros(k);
    for chunk in grad_out.data().chunks_exact(k.c_out) {
        for (b, v) in grad_k.bias.iter_mut().zip(chunk) {
            *b += v;
        }
    }
    let tap_len = k.c_in * k.c_out;
    for n in 0..s.n {
        for y in 0..s.h {
            let row = s.index(n, y, 0, 0)..s.index(n, y, 0, 0) + s.w * s.c;
            for dy in 0..2 {
                for dx in 0..2 {
                    let start = out_shape.index(n, 2 * y + dy, dx, 0);
                    let end = out_shape.index(n, 2 * y + dy, 0, 0) + out_shape.w * k.c_out;
                    let go = &grad_out.data()[start..end];
                    let tap = (dy * 2 + dx) * tap_len..(dy * 2 + dx + 1) * tap_len;
                    gemm(s.w, k.c_out, k.c_in, go, (2 * k.c_out as isize, 1), &kernel.data[tap.clone()], (1, k.c_out as isize), 1.0, &mut grad_in.data_mut()[row.clone()], (k.c_in as isize, 1));
                    gemm(k.c_in, s.w, k.c_out, &cached_input.data()[row.clone()], (1, k.c_in as isize), go, (2 * k.c_out as isize, 1), 1.0, &mut grad_k.data[tap], (k.c_out as isize, 1));
                }
            }
        }
    }
    Ok((grad_in, grad_k))
}
