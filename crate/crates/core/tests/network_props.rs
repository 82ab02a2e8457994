use inceptnet::network::{
    build_model, count_parameters, decode_checkpoint, encode_checkpoint, InceptionAllocation, Mode, ModelGraph,
    NetworkSpec, Variant,
};
use inceptnet::{Shape4, Tensor4};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn batch(seed: u64, n: usize, spec: &NetworkSpec) -> Tensor4 {
    let r = &mut ChaCha8Rng::seed_from_u64(seed);
    let [h, w, c] = spec.input_shape;
    let s = Shape4::new(n, h, w, c);
    Tensor4::from_vec(s, (0..s.len()).map(|_| r.gen_range(0.0..1.0)).collect()).unwrap()
}

fn grads(g: &ModelGraph) -> Vec<Vec<f64>> {
    g.store().params().iter().map(|p| p.grad.clone()).collect()
}

fn full(variant: Variant, d: usize) -> NetworkSpec {
    NetworkSpec::new(variant, d, [64, 64, 1])
}

#[test]
fn channels_double_down_and_halve_up() {
    let g = build_model(&full(Variant::Inceptnet, 1)).unwrap();
    let width = |name: &str| g.layer_table().iter().find(|l| l.name == name).unwrap().output[2];
    assert_eq!(
        ["enc1", "enc2", "enc3", "bottleneck.block1"].map(width),
        [64, 128, 256, 512]
    );
    assert_eq!(["dec3.block", "dec2.block", "dec1.block"].map(width), [256, 128, 64]);
}

#[test]
fn inception_layout_matches_two_conv_layout() {
    for d in [1, 3] {
        for spec in [full(Variant::Bcdu, d), NetworkSpec::tiny(Variant::Bcdu, d)] {
            let mut other = spec.clone();
            other.variant = Variant::Inceptnet;
            let shapes = |s: &NetworkSpec| {
                build_model(s)
                    .unwrap()
                    .layer_table()
                    .iter()
                    .map(|l| (l.name.clone(), l.output))
                    .collect::<Vec<_>>()
            };
            assert_eq!(shapes(&spec), shapes(&other));
        }
    }
}

#[test]
fn inceptnet_is_smaller_than_bcdu() {
    for d in [1, 3] {
        let count = |v| count_parameters(&build_model(&full(v, d)).unwrap()).total;
        assert!(count(Variant::Inceptnet) < count(Variant::Bcdu), "d = {d}");
    }
}

#[test]
fn equal_allocation_splits_in_quarters() {
    let a = InceptionAllocation::equal();
    for f in [4, 8, 64, 512] {
        assert_eq!(a.branch_widths(f).unwrap(), [f / 4; 4]);
    }
    assert!(a.branch_widths(6).is_err());
    let default = InceptionAllocation::default();
    for f in [4, 8, 64, 512] {
        assert_eq!(default.branch_widths(f).unwrap().iter().sum::<usize>(), f);
    }
}

#[test]
fn dense_bottleneck_only_for_three_blocks() {
    for (d, dense) in [(1, 0), (3, 2)] {
        let g = build_model(&NetworkSpec::tiny(Variant::Inceptnet, d)).unwrap();
        assert_eq!(g.bottleneck_blocks(), d);
        assert_eq!(g.dense_connected_blocks(), dense);
    }
}

#[test]
fn zero_loss_gradient_gives_zero_grads_and_calls_accumulate() {
    let mut spec = NetworkSpec::tiny(Variant::Inceptnet, 3);
    spec.dropout_rate = 0.0;
    let mut g = build_model(&spec).unwrap();
    let x = batch(3, 2, &spec);
    let y = g.forward(&x, Mode::Train).unwrap();
    g.backward(&Tensor4::zeros(y.shape())).unwrap();
    assert!(grads(&g).iter().flatten().all(|&v| v == 0.0));

    let w = batch(4, 2, &spec).map(|v| v - 0.5);
    g.backward(&w).unwrap();
    let once = grads(&g);
    g.backward(&w).unwrap();
    for (a, b) in grads(&g).iter().flatten().zip(once.iter().flatten()) {
        assert!((a - 2.0 * b).abs() <= 1e-12 * b.abs().max(1.0));
    }
}

#[test]
fn train_mode_batch_norm_standardizes() {
    let spec = NetworkSpec::tiny(Variant::Bcdu, 1);
    let mut g = build_model(&spec).unwrap();
    g.forward(&batch(5, 4, &spec), Mode::Train).unwrap();
    let acts = g.batch_norm_activations();
    assert_eq!(acts.len(), 3);
    for (name, t, raw_var) in acts {
        let c = t.shape().c;
        for ch in 0..c {
            let vals: Vec<f64> = t.data().iter().skip(ch).step_by(c).copied().collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-6, "{name}[{ch}] mean {mean}");
            // epsilon keeps the spread just under one
            let expected = raw_var[ch] / (raw_var[ch] + 1e-5);
            assert!((var - expected).abs() < 1e-9, "{name}[{ch}] var {var} vs {expected}");
            if raw_var[ch] >= 10.0 {
                assert!((var - 1.0).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn zero_dropout_makes_train_forwards_repeatable() {
    let mut spec = NetworkSpec::tiny(Variant::Unet, 1);
    let x = batch(6, 2, &spec);
    spec.dropout_rate = 0.0;
    let mut g = build_model(&spec).unwrap();
    assert_eq!(g.forward(&x, Mode::Train).unwrap(), g.forward(&x, Mode::Train).unwrap());
    spec.dropout_rate = 0.5;
    let mut g = build_model(&spec).unwrap();
    assert_ne!(g.forward(&x, Mode::Train).unwrap(), g.forward(&x, Mode::Train).unwrap());
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let spec = NetworkSpec::tiny(Variant::Inceptnet, 3);
    let mut g = build_model(&spec).unwrap();
    // move the running statistics away from their initial values
    g.forward(&batch(7, 2, &spec), Mode::Train).unwrap();
    let bytes = encode_checkpoint(&g);
    let back = decode_checkpoint(&bytes, &spec).unwrap();
    for (a, b) in g.store().params().iter().zip(back.store().params()) {
        assert_eq!(a.name, b.name);
        assert!(a.value.iter().zip(&b.value).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    for (a, b) in g.store().buffers().iter().zip(back.store().buffers()) {
        assert!(a.value.iter().zip(&b.value).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    assert_eq!(encode_checkpoint(&back), bytes);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn inference_is_repeatable_and_strictly_inside_unit_interval(
        seed in any::<u64>(),
        variant in prop::sample::select(vec![Variant::Unet, Variant::Bcdu, Variant::Inceptnet]),
        d in prop::sample::select(vec![1usize, 3]),
    ) {
        let mut spec = NetworkSpec::tiny(variant, d);
        spec.seed = seed >> 1;
        let g = build_model(&spec).unwrap();
        let x = batch(seed ^ 1, 2, &spec);
        let y = g.predict(&x).unwrap();
        prop_assert_eq!(y.shape(), g.output_shape(2));
        prop_assert!(y.data().iter().all(|&p| p > 0.0 && p < 1.0));
        prop_assert_eq!(g.predict(&x).unwrap(), y);
    }

    #[test]
    fn same_seed_same_parameters(seed in 0..=i64::MAX as u64) {
        let mut spec = NetworkSpec::tiny(Variant::Inceptnet, 1);
        spec.seed = seed;
        let a = build_model(&spec).unwrap();
        let b = build_model(&spec).unwrap();
        prop_assert_eq!(encode_checkpoint(&a), encode_checkpoint(&b));
    }
}
