use inceptnet::ops::{
    batch_norm_infer, batch_norm_train, conv2d, maxpool2x2, maxpool2x2_backward, Padding,
};
use inceptnet::{Kernel4, KernelShape, Shape4, Tensor4};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor(r: &mut ChaCha8Rng, s: Shape4) -> Tensor4 {
    Tensor4::from_vec(s, (0..s.len()).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn random_kernel(r: &mut ChaCha8Rng, k: KernelShape) -> Kernel4 {
    let data = (0..k.len()).map(|_| r.gen_range(-1.0..1.0)).collect();
    let bias = (0..k.c_out).map(|_| r.gen_range(-1.0..1.0)).collect();
    Kernel4::new(k, data, bias).unwrap()
}

/// `depth` stacked same-padded `3x3` convolutions, 2 channels throughout.
fn stack(kernels: &[Kernel4], x: &Tensor4) -> Tensor4 {
    kernels
        .iter()
        .fold(x.clone(), |h, k| conv2d(&h, k, Padding::Same).unwrap())
}

fn check_locality(seed: u64, depth: usize) -> Result<(), TestCaseError> {
    let r = &mut ChaCha8Rng::seed_from_u64(seed);
    let kernels: Vec<Kernel4> = (0..depth).map(|_| random_kernel(r, KernelShape::new(3, 3, 2, 2))).collect();
    let s = Shape4::new(1, 13, 13, 2);
    let x = random_tensor(r, s);
    let y = stack(&kernels, &x);
    let (py, px) = (6, 6);
    let radius = depth as isize;
    for iy in 0..13isize {
        for ix in 0..13isize {
            let inside = (iy - py as isize).abs() <= radius && (ix - px as isize).abs() <= radius;
            let mut xp = x.clone();
            xp.set(0, iy as usize, ix as usize, 0, x.get(0, iy as usize, ix as usize, 0) + 1.0);
            let changed = stack(&kernels, &xp).pixel(0, py, px) != y.pixel(0, py, px);
            if !inside {
                prop_assert!(!changed, "pixel ({iy},{ix}) outside the window moved the output");
            }
        }
    }
    // the corner of the window is reached, so the bound is tight
    let mut xp = x.clone();
    xp.set(0, py - depth, px - depth, 0, 5.0);
    prop_assert!(stack(&kernels, &xp).pixel(0, py, px) != y.pixel(0, py, px));
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn two_stacked_3x3_see_only_5x5(seed in any::<u64>()) {
        check_locality(seed, 2)?;
    }

    #[test]
    fn three_stacked_3x3_see_only_7x7(seed in any::<u64>()) {
        check_locality(seed, 3)?;
    }
}

proptest! {
    #[test]
    fn same_padding_keeps_size(seed in any::<u64>(), k in prop::sample::select(vec![1usize, 3, 5, 7]), h in 1usize..10, w in 1usize..10) {
        let r = &mut ChaCha8Rng::seed_from_u64(seed);
        let x = random_tensor(r, Shape4::new(2, h, w, 3));
        let kern = random_kernel(r, KernelShape::new(k, k, 3, 4));
        let y = conv2d(&x, &kern, Padding::Same).unwrap();
        prop_assert_eq!(y.shape(), Shape4::new(2, h, w, 4));
    }

    #[test]
    fn conv_is_bitwise_deterministic(seed in any::<u64>()) {
        let r = &mut ChaCha8Rng::seed_from_u64(seed);
        let x = random_tensor(r, Shape4::new(2, 8, 8, 4));
        let kern = random_kernel(r, KernelShape::new(3, 3, 4, 4));
        prop_assert_eq!(conv2d(&x, &kern, Padding::Same).unwrap(), conv2d(&x, &kern, Padding::Same).unwrap());
    }

    #[test]
    fn maxpool_routes_one_unit_per_window(seed in any::<u64>(), tie in any::<bool>()) {
        let r = &mut ChaCha8Rng::seed_from_u64(seed);
        let s = Shape4::new(2, 6, 8, 3);
        let mut x = random_tensor(r, s);
        if tie {
            // quantize so windows contain ties
            x = x.map(|v| (v * 2.0).round());
        }
        let (y, cache) = maxpool2x2(&x).unwrap();
        let g = maxpool2x2_backward(&Tensor4::filled(y.shape(), 1.0), &cache).unwrap();
        for n in 0..2 {
            for oy in 0..3 {
                for ox in 0..4 {
                    for c in 0..3 {
                        let window = [(0, 0), (0, 1), (1, 0), (1, 1)].map(|(dy, dx)| g.get(n, 2 * oy + dy, 2 * ox + dx, c));
                        prop_assert_eq!(window.iter().sum::<f64>(), 1.0);
                        prop_assert_eq!(window.iter().filter(|&&v| v != 0.0).count(), 1);
                    }
                }
            }
        }
    }

    #[test]
    fn batch_norm_standardizes_wide_channels(seed in any::<u64>()) {
        let r = &mut ChaCha8Rng::seed_from_u64(seed);
        // spread well above epsilon so var / (var + eps) is within 1e-6 of one
        let x = random_tensor(r, Shape4::new(2, 8, 8, 4)).map(|v| 100.0 * v + 3.0);
        let (y, _) = batch_norm_train(&x, &[1.0; 4], &[0.0; 4], 1e-5).unwrap();
        for c in 0..4 {
            let vals: Vec<f64> = y.data().iter().skip(c).step_by(4).copied().collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            prop_assert!(mean.abs() < 1e-6);
            prop_assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn batch_norm_inference_is_affine(seed in any::<u64>(), a in -2.0f64..2.0) {
        let r = &mut ChaCha8Rng::seed_from_u64(seed);
        let s = Shape4::new(1, 4, 4, 3);
        let (x, z) = (random_tensor(r, s), random_tensor(r, s));
        let gamma: Vec<f64> = (0..3).map(|_| r.gen_range(0.5..2.0)).collect();
        let beta: Vec<f64> = (0..3).map(|_| r.gen_range(-1.0..1.0)).collect();
        let mean: Vec<f64> = (0..3).map(|_| r.gen_range(-1.0..1.0)).collect();
        let var: Vec<f64> = (0..3).map(|_| r.gen_range(0.1..2.0)).collect();
        let f = |t: &Tensor4| batch_norm_infer(t, &gamma, &beta, &mean, &var, 1e-5).unwrap();
        let mix = Tensor4::from_vec(s, x.data().iter().zip(z.data()).map(|(p, q)| a * p + (1.0 - a) * q).collect()).unwrap();
        let lhs = f(&mix);
        let (fx, fz) = (f(&x), f(&z));
        for i in 0..s.len() {
            prop_assert!((lhs.data()[i] - (a * fx.data()[i] + (1.0 - a) * fz.data()[i])).abs() < 1e-9);
        }
        prop_assert_eq!(f(&x), fx);
    }
}
