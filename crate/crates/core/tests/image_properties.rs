//! Properties of mask composites, simulators and perturbations.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sef::evalbench::{apply_perturbations, crop_and_resize, PerturbationSpec};
use sef::forge::{apply_mask_aug, simulate_gan_artifact, simulate_vae_artifact, BinaryMask};
use sef::imagelab::Image;

fn image(h: usize, w: usize, seed: u64) -> Image {
    Image::from_fn(h, w, 3, |y, x, c| {
        let v = (y * 31 + x * 17 + c * 7) as u64 ^ seed;
        (v % 251) as f32 / 250.0
    })
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn composite_takes_each_pixel_from_exactly_one_source(
        h in 8usize..24, w in 8usize..24, seed in any::<u64>(), bits_seed in any::<u64>(),
    ) {
        let fake = image(h, w, seed);
        let real = image(h, w, seed.wrapping_add(1));
        let bits: Vec<bool> = (0..h * w).map(|i| (bits_seed >> (i % 64)) & 1 == 1).collect();
        let mask = BinaryMask::from_bits(h, w, bits).unwrap();
        let out = apply_mask_aug(&fake, &real, &mask).unwrap();
        for y in 0..h {
            for x in 0..w {
                let src = if mask.get(y, x) { &fake } else { &real };
                for c in 0..3 {
                    prop_assert_eq!(out.get(y, x, c).to_bits(), src.get(y, x, c).to_bits());
                }
            }
        }
    }

    #[test]
    fn simulators_keep_shape_and_range(h in 2usize..8, w in 2usize..8, seed in any::<u64>()) {
        let img = image(8 * h, 8 * w, seed);
        for out in [simulate_vae_artifact(&img).unwrap(), simulate_gan_artifact(&img).unwrap()] {
            prop_assert!(out.same_shape(&img));
            prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn crop_and_resize_restores_the_input_size(
        h in 8usize..48, w in 8usize..48, py in 5.0f64..20.0, px in 5.0f64..20.0,
        anchor in any::<bool>(), seed in any::<u64>(),
    ) {
        let img = image(h, w, seed);
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let out = crop_and_resize(&img, py, px, anchor, &mut r).unwrap();
        prop_assert_eq!(out.dims(), img.dims());
    }

    #[test]
    fn zero_probability_is_the_identity(seed in any::<u64>()) {
        let img = image(32, 32, seed);
        let spec = PerturbationSpec { p: 0.0, ..PerturbationSpec::all() };
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let (out, applied) = apply_perturbations(&img, &spec, &mut r).unwrap();
        prop_assert_eq!(out, img);
        prop_assert!(applied.blur_kernel.is_none() && applied.crop_pct.is_none());
        prop_assert!(applied.jpeg_quality.is_none() && applied.noise_var.is_none());
    }

    #[test]
    fn perturbed_images_stay_in_range(seed in any::<u64>()) {
        let img = image(32, 32, seed);
        let spec = PerturbationSpec { p: 1.0, ..PerturbationSpec::all() };
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let (out, _) = apply_perturbations(&img, &spec, &mut r).unwrap();
        prop_assert_eq!(out.dims(), img.dims());
        prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
