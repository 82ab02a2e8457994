use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor4};

/// Winner positions recorded by [`maxpool2x2`]; one flat input index per output element.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArgmaxCache {
    input_shape: Shape4,
    winners: Vec<usize>,
}

impl ArgmaxCache {
    pub fn winners(&self) -> &[usize] {
        &self.winners
    }

    pub fn input_shape(&self) -> Shape4 {
        self.input_shape
    }
}

/// `2x2` max pooling with stride 2. Ties go to the first element in row-major window order.
pub fn maxpool2x2(input: &Tensor4) -> Result<(Tensor4, ArgmaxCache)> {
    let s = input.shape();
    if s.h % 2 != 0 || s.w % 2 != 0 {
        return Err(Error::Shape(format!(
            "maxpool2x2 needs even height and width, got {s}; pad inputs to a multiple of 8"
        )));
    }
    let out_shape = Shape4::new(s.n, s.h / 2, s.w / 2, s.c);
    let mut out = Tensor4::zeros(out_shape);
    let mut winners = vec![0usize; out_shape.len()];
    let data = input.data();
    for n in 0..s.n {
        for y in 0..out_shape.h {
            for x in 0..out_shape.w {
                for c in 0..s.c {
                    let mut best = s.index(n, 2 * y, 2 * x, c);
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = s.index(n, 2 * y + dy, 2 * x + dx, c);
                        if data[i] > data[best] {
                            best = i;
                        }
                    }
                    let o = out_shape.index(n, y, x, c);
                    out.data_mut()[o] = data[best];
                    winners[o] = best;
                }
            }
        }
    }
    Ok((
        out,
        ArgmaxCache {
            input_shape: s,
            winners,
        },
    ))
}

/// Routes each output gradient to its window winner.
pub fn maxpool2x2_backward(grad_out: &Tensor4, cache: &ArgmaxCache) -> Result<Tensor4> {
    if grad_out.shape().len() != cache.winners.len() {
        return Err(Error::Shape(format!(
            "maxpool2x2_backward: grad_out {} does not match pooled shape of {}",
            grad_out.shape(),
            cache.input_shape
        )));
    }
    let mut grad_in = Tensor4::zeros(cache.input_shape);
    let gi = grad_in.data_mut();
    for (&w, &g) in cache.winners.iter().zip(grad_out.data()) {
        gi[w] += g;
    }
    Ok(grad_in)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn picks_window_max() {
        let x = Tensor4::from_vec(Shape4::new(1, 2, 2, 1), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, cache) = maxpool2x2(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(cache.winners(), &[3]);
    }

    #[test]
    fn ties_go_to_first_in_window() {
        let x = Tensor4::filled(Shape4::new(1, 4, 4, 2), 1.5);
        let (y, cache) = maxpool2x2(&x).unwrap();
        assert!(y.data().iter().all(|&v| v == 1.5));
        let s = x.shape();
        for (o, &w) in cache.winners().iter().enumerate() {
            let (px, c) = (o / 2, o % 2);
            let (oy, ox) = (px / 2, px % 2);
            assert_eq!(w, s.index(0, 2 * oy, 2 * ox, c));
        }
    }

    #[test]
    fn odd_size_rejected_with_hint() {
        let err = maxpool2x2(&Tensor4::zeros(Shape4::new(1, 3, 4, 1))).unwrap_err();
        assert!(err.to_string().contains("pad"));
    }

    #[test]
    fn one_unit_of_gradient_per_window() {
        let x = Tensor4::from_fn(Shape4::new(2, 4, 6, 3), |n, y, x, c| ((n * 31 + y * 17 + x * 7 + c * 3) % 13) as f64);
        let (y, cache) = maxpool2x2(&x).unwrap();
        let g = maxpool2x2_backward(&Tensor4::filled(y.shape(), 1.0), &cache).unwrap();
        assert_eq!(g.sum(), y.shape().len() as f64);
        assert!(g.data().iter().all(|&v| v == 0.0 || v == 1.0));
    }
}
