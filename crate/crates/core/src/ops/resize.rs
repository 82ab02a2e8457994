use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor4};

/// Source sampling positions for one axis: `(low index, high index, weight of high)`.
fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let pos = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

/// Bilinear interpolation with half-pixel centers and edge clamping.
pub fn bilinear_resize(input: &Tensor4, out_h: usize, out_w: usize) -> Result<Tensor4> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::Shape(format!(
            "bilinear_resize: target {out_h}x{out_w} must be positive"
        )));
    }
    let s = input.shape();
    if (s.h, s.w) == (out_h, out_w) {
        return Ok(input.clone());
    }
    let rows = axis_taps(s.h, out_h);
    let cols = axis_taps(s.w, out_w);
    let out_shape = Shape4::new(s.n, out_h, out_w, s.c);
    let mut out = Tensor4::zeros(out_shape);
    for n in 0..s.n {
        for (y, &(y0, y1, fy)) in rows.iter().enumerate() {
            for (x, &(x0, x1, fx)) in cols.iter().enumerate() {
                for c in 0..s.c {
                    let top = input.get(n, y0, x0, c) * (1.0 - fx) + input.get(n, y0, x1, c) * fx;
                    let bottom = input.get(n, y1, x0, c) * (1.0 - fx) + input.get(n, y1, x1, c) * fx;
                    out.set(n, y, x, c, top * (1.0 - fy) + bottom * fy);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_stays_constant() {
        let x = Tensor4::filled(Shape4::new(1, 5, 7, 2), 0.375);
        for (h, w) in [(1, 1), (3, 11), (16, 16)] {
            let y = bilinear_resize(&x, h, w).unwrap();
            assert!(y.data().iter().all(|&v| (v - 0.375).abs() < 1e-15));
        }
    }

    #[test]
    fn same_size_is_bitwise_identity() {
        let x = Tensor4::from_fn(Shape4::new(2, 3, 4, 1), |n, y, x, _| (n + y * x) as f64 / 7.0);
        assert_eq!(bilinear_resize(&x, 3, 4).unwrap(), x);
    }

    #[test]
    fn two_by_two_upscale_matches_hand_values() {
        // Source positions for 2 -> 4 with half-pixel centers: -0.25 (clamped 0), 0.25, 0.75, 1.25 (clamped 1).
        let x = Tensor4::from_vec(Shape4::new(1, 2, 2, 1), vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let y = bilinear_resize(&x, 4, 4).unwrap();
        let expect = [
            [0.0, 0.25, 0.75, 1.0],
            [0.5, 0.75, 1.25, 1.5],
            [1.5, 1.75, 2.25, 2.5],
            [2.0, 2.25, 2.75, 3.0],
        ];
        for (r, row) in expect.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                assert!((y.get(0, r, c, 0) - v).abs() < 1e-15, "({r},{c})");
            }
        }
    }

    #[test]
    fn zero_target_rejected() {
        assert!(bilinear_resize(&Tensor4::zeros(Shape4::new(1, 2, 2, 1)), 0, 2).is_err());
    }
}
