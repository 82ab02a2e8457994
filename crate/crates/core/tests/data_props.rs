use inceptnet::data::{
    decode_image, encode_pnm, generate_synthetic, sample_patch_corners, split_train_val, to_grayscale,
    DatasetSpec, StructureScale,
};
use inceptnet::{Shape4, Tensor4};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn quantized_rgb(seed: u64, h: usize, w: usize) -> Tensor4 {
    let r = &mut ChaCha8Rng::seed_from_u64(seed);
    let s = Shape4::new(1, h, w, 3);
    Tensor4::from_vec(s, (0..s.len()).map(|_| r.gen_range(0u8..=255) as f64 / 255.0).collect()).unwrap()
}

proptest! {
    #[test]
    fn corners_keep_patches_inside(
        sizes in prop::collection::vec((8usize..40, 8usize..40), 1..5),
        patch in 1usize..9,
        count in 0usize..50,
        seed in any::<u64>(),
    ) {
        let corners = sample_patch_corners(&sizes, patch, count, seed).unwrap();
        prop_assert_eq!(corners.len(), count);
        for &(src, y, x) in &corners {
            let (h, w) = sizes[src];
            prop_assert!(y + patch <= h && x + patch <= w);
        }
        prop_assert_eq!(sample_patch_corners(&sizes, patch, count, seed).unwrap(), corners);
    }

    #[test]
    fn oversized_patch_is_a_config_error(h in 1usize..8, patch in 8usize..12) {
        prop_assert!(sample_patch_corners(&[(h, 20)], patch, 1, 0).is_err());
    }

    #[test]
    fn grayscale_commutes_with_crop(seed in any::<u64>(), y in 0usize..6, x in 0usize..6, ph in 1usize..6, pw in 1usize..6) {
        let img = quantized_rgb(seed, 12, 12);
        let a = to_grayscale(&img.crop(y, x, ph, pw).unwrap()).unwrap();
        let b = to_grayscale(&img).unwrap().crop(y, x, ph, pw).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn split_is_deterministic_exhaustive_and_disjoint(n in 2usize..200, frac in 0.05f64..0.95, seed in any::<u64>()) {
        let items: Vec<usize> = (0..n).collect();
        let (train, val) = split_train_val(items.clone(), frac, seed).unwrap();
        prop_assert_eq!(val.len(), (frac * n as f64).round() as usize);
        let mut all: Vec<usize> = train.iter().chain(&val).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, items.clone());
        prop_assert_eq!(split_train_val(items, frac, seed).unwrap(), (train, val));
    }

    #[test]
    fn eight_bit_pnm_is_bit_exact(seed in any::<u64>(), h in 1usize..10, w in 1usize..10, gray in any::<bool>()) {
        let mut t = quantized_rgb(seed, h, w);
        if gray {
            t = Tensor4::from_vec(Shape4::new(1, h, w, 1), t.data().iter().step_by(3).copied().collect()).unwrap();
        }
        let back = decode_image(&encode_pnm(&t, 255).unwrap()).unwrap();
        prop_assert_eq!(back, t);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn synthetic_pairs_satisfy_invariants(seed in any::<u64>(), large in any::<bool>()) {
        let scale = if large { StructureScale::Large } else { StructureScale::Small };
        let pairs = generate_synthetic(3, 32, scale, seed).unwrap();
        for p in &pairs {
            prop_assert!(p.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert!(p.mask.data().iter().all(|&v| v == 0.0 || v == 1.0));
            prop_assert!(p.mask.data().iter().any(|&v| v == 1.0));
            prop_assert_eq!(p.mask.shape(), Shape4::new(1, 32, 32, 1));
        }
        prop_assert_eq!(generate_synthetic(3, 32, scale, seed).unwrap(), pairs);
    }
}

#[test]
fn explicit_validation_stems_override_the_fraction() {
    let mut spec = DatasetSpec::synthetic(6, 16, StructureScale::Large);
    let all = spec.load(1).unwrap();
    let chosen: Vec<String> = all.iter().take(2).map(|p| p.source_id.clone()).collect();
    spec.val_stems = Some(chosen.clone());
    let (train, val) = spec.prepare(1).unwrap();
    assert_eq!(val.iter().map(|p| p.source_id.clone()).collect::<Vec<_>>(), chosen);
    assert_eq!(train.len(), 4);
}
