use deepseg::augment::{
    affine_transform, augment_sample, compose_random_affine, displacement_field, elastic_transform, gaussian_kernel,
    plan_augmentation, sample_affine, Affine, AugmentSpec, ElasticParams,
};
use deepseg::grid::{Grid, Image, Mask};
use deepseg::tensor::RngStream;
use proptest::prelude::*;
use rand::Rng;

fn random_pair(h: usize, w: usize, seed: u64) -> (Image, Mask) {
    let mut rng = RngStream::new(seed);
    let img = Grid::from_fn(h, w, |_, _| rng.gen_range(-3.0f32..3.0));
    let mask = Grid::from_fn(h, w, |_, _| u8::from(rng.gen_bool(0.3)));
    (img, mask)
}

fn blob_mask(n: usize) -> Mask {
    let c = n as f64 / 2.0;
    Grid::from_fn(n, n, |r, col| u8::from((r as f64 - c).hypot(col as f64 - c * 0.8) < n as f64 / 4.0))
}

#[test]
fn identity_matrix_is_bit_exact() {
    let (img, mask) = random_pair(13, 9, 1);
    let (i, m) = affine_transform(&img, &mask, &Affine::identity()).unwrap();
    assert_eq!(i, img);
    assert_eq!(m, mask);
}

#[test]
fn double_flip_restores_the_input() {
    let (img, mask) = random_pair(7, 10, 2);
    for flip in [Affine::flip_horizontal(10), Affine::flip_vertical(7)] {
        let (i1, m1) = affine_transform(&img, &mask, &flip).unwrap();
        assert_ne!(i1, img);
        let (i2, m2) = affine_transform(&i1, &m1, &flip).unwrap();
        assert_eq!(i2, img);
        assert_eq!(m2, mask);
    }
    assert_eq!(img.flip_horizontal().flip_horizontal(), img);
    assert_eq!(affine_transform(&img, &mask, &Affine::flip_horizontal(10)).unwrap().0, img.flip_horizontal());
}

#[test]
fn quarter_turn_matches_hand_rotation() {
    let img = Grid::from_vec(4, 4, (1..=16).map(|v| v as f32).collect()).unwrap();
    let mask = Grid::from_vec(4, 4, vec![1, 1, 1, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0]).unwrap();
    let rot = Affine::rotation_degrees(90.0).about_center(4, 4);
    let (i, m) = affine_transform(&img, &mask, &rot).unwrap();
    // Counter-clockwise on screen: the top row ends up as the left column.
    #[rustfmt::skip]
    let want_img = [
        4.0, 8.0, 12.0, 16.0,
        3.0, 7.0, 11.0, 15.0,
        2.0, 6.0, 10.0, 14.0,
        1.0, 5.0, 9.0, 13.0,
    ];
    #[rustfmt::skip]
    let want_mask = [
        0, 0, 0, 0,
        1, 1, 0, 0,
        1, 0, 0, 0,
        1, 0, 0, 0,
    ];
    assert_eq!(i.data(), &want_img);
    assert_eq!(m.data(), &want_mask);
}

#[test]
fn zero_alpha_elastic_is_identity() {
    let (img, mask) = random_pair(24, 20, 3);
    let params = ElasticParams {
        alpha: 0.0,
        sigma: 24.0,
    };
    let (i, m) = elastic_transform(&img, &mask, &params, &mut RngStream::new(4)).unwrap();
    assert_eq!(i, img);
    assert_eq!(m, mask);
}

#[test]
fn default_elastic_keeps_the_label_set() {
    let mask = blob_mask(224);
    let img = mask.map(f32::from);
    for seed in 0..3 {
        let (_, m) = elastic_transform(&img, &mask, &ElasticParams::default(), &mut RngStream::new(seed)).unwrap();
        assert!(m.data().iter().all(|&v| v <= 1));
        assert_ne!(m, mask, "default deformation should move the blob");
    }
}

#[test]
fn displacement_fields_have_near_zero_mean() {
    let params = ElasticParams::default();
    let mut rng = RngStream::new(20);
    for _ in 0..20 {
        let (dx, dy) = displacement_field(224, 224, &params, &mut rng);
        for field in [&dx, &dy] {
            let mean = field.iter().sum::<f64>() / field.len() as f64;
            assert!(mean.abs() < params.alpha * 0.05, "mean displacement {mean}");
        }
    }
}

#[test]
fn kernel_for_default_sigma_is_normalized() {
    let k = gaussian_kernel(24.0);
    assert_eq!(k.len(), 145);
    assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-6);
}

#[test]
fn flip_rate_matches_the_probability() {
    let spec = AugmentSpec::default();
    let draws = 10_000;
    let (mut h, mut v) = (0, 0);
    for seed in 0..draws {
        let plan = plan_augmentation(&spec, 16, 16, seed);
        h += usize::from(plan.flip_h);
        v += usize::from(plan.flip_v);
    }
    for count in [h, v] {
        let rate = count as f64 / draws as f64;
        assert!((rate - 0.20).abs() <= 0.015, "flip rate {rate}");
    }
}

#[test]
fn flips_observed_through_the_pipeline() {
    let spec = AugmentSpec {
        flip_h_prob: 0.2,
        ..AugmentSpec::none()
    };
    let img = Grid::from_vec(1, 2, vec![1.0f32, 2.0]).unwrap();
    let mask = Grid::from_vec(1, 2, vec![0u8, 1]).unwrap();
    let draws = 10_000;
    let flipped = (0..draws)
        .filter(|&s| augment_sample(&img, &mask, &spec, s).unwrap().0.data()[0] == 2.0)
        .count();
    let rate = flipped as f64 / draws as f64;
    assert!((rate - 0.20).abs() <= 0.015, "flip rate {rate}");
}

#[test]
fn rotation_draws_respect_the_range() {
    let spec = AugmentSpec::default();
    let mut rng = RngStream::new(5);
    let draws: Vec<f64> = (0..10_000).map(|_| sample_affine(&spec, &mut rng).rotate_degrees).collect();
    let (lo, hi) = draws.iter().fold((f64::MAX, f64::MIN), |(a, b), &d| (a.min(d), b.max(d)));
    assert!(lo >= -25.0 && hi <= 25.0);
    assert!(lo < -24.0 && hi > 24.0, "range [{lo}, {hi}] barely explored");
    let mean = draws.iter().sum::<f64>() / draws.len() as f64;
    assert!(mean.abs() <= 1.0, "mean rotation {mean}");
    let applied = draws.iter().filter(|&&d| d != 0.0).count() as f64 / draws.len() as f64;
    assert!((applied - 0.5).abs() < 0.02, "rotation applied to {applied}");
}

#[test]
fn zero_ranges_give_identity() {
    let spec = AugmentSpec {
        affine_prob: 1.0,
        ..AugmentSpec::none()
    };
    assert!(compose_random_affine(&spec, &mut RngStream::new(1), 10, 12).is_identity());
    let a = compose_random_affine(&AugmentSpec::default(), &mut RngStream::new(9), 10, 12);
    let b = compose_random_affine(&AugmentSpec::default(), &mut RngStream::new(9), 10, 12);
    assert_eq!(a, b);
}

#[test]
fn disabled_and_zero_probability_pipelines_are_identity() {
    let (img, mask) = random_pair(12, 12, 6);
    for spec in [AugmentSpec::disabled(), AugmentSpec::none()] {
        for seed in 0..20 {
            let (i, m) = augment_sample(&img, &mask, &spec, seed).unwrap();
            assert_eq!(i, img);
            assert_eq!(m, mask);
        }
    }
}

#[test]
fn full_pipeline_is_deterministic() {
    let mask = blob_mask(64);
    let img = mask.map(|v| f32::from(v) * 2.0 - 0.5);
    let spec = AugmentSpec {
        affine_prob: 1.0,
        elastic_prob: 1.0,
        ..AugmentSpec::default()
    };
    let a = augment_sample(&img, &mask, &spec, 77).unwrap();
    let b = augment_sample(&img, &mask, &spec, 77).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, augment_sample(&img, &mask, &spec, 78).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn masks_stay_in_the_input_label_set(seed in 0u64..10_000, n in 4usize..24, sigma in 1.0f64..6.0, labels in 1u8..4) {
        let mut rng = RngStream::new(seed);
        let mask = Grid::from_fn(n, n, |_, _| rng.gen_range(0..=labels) * 2);
        let img = mask.map(f32::from);
        let spec = AugmentSpec {
            affine_prob: 1.0,
            elastic_prob: 1.0,
            elastic: ElasticParams { alpha: 40.0, sigma },
            ..AugmentSpec::default()
        };
        let (_, m) = augment_sample(&img, &mask, &spec, seed).unwrap();
        let allowed: Vec<u8> = (0..=labels).map(|l| l * 2).collect();
        prop_assert!(m.data().iter().all(|v| allowed.contains(v)));
    }

    #[test]
    fn image_and_mask_stay_aligned(seed in 0u64..10_000, n in 4usize..24) {
        let mut rng = RngStream::new(seed);
        let mask = Grid::from_fn(n, n, |_, _| u8::from(rng.gen_bool(0.4)));
        let img = mask.map(f32::from);
        let spec = AugmentSpec {
            affine_prob: 1.0,
            elastic_prob: 1.0,
            elastic: ElasticParams { alpha: 30.0, sigma: 3.0 },
            ..AugmentSpec::default()
        };
        let (i, m) = augment_sample(&img, &mask, &spec, seed).unwrap();
        for (&v, &l) in i.data().iter().zip(m.data()) {
            if v == 0.0 || v == 1.0 {
                prop_assert_eq!(v, f32::from(l));
            }
        }
    }
}
