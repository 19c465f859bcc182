use deepseg::augment::AugmentSpec;
use deepseg::data::{phantom_records, PhantomSpec, SliceRecord};
use deepseg::metrics::MetricConfig;
use deepseg::nn::{assemble_model, EncoderFamily, Model, ModelConfig};
use deepseg::tensor::{softmax_channel_forward, RngStream, Shape4, Tensor4};
use deepseg::train::{
    crossval_split, mean_dice, one_hot, train_loop, weighted_cross_entropy, LossSpec, TrainConfig, TrainHistory,
};
use deepseg::Error;
use proptest::prelude::*;
use rand::Rng;

/// Loss recomputed in f64 from the logits: softmax, then the weighted
/// negative log-likelihood of the true class, averaged over pixels.
fn reference_loss(logits: &[f64], classes: &[usize], shape: Shape4, weights: &[f64]) -> f64 {
    let plane = shape.plane();
    let mut total = 0.0;
    for n in 0..shape.n {
        for i in 0..plane {
            let z: Vec<f64> = (0..shape.c).map(|c| logits[shape.index(n, c, 0, 0) + i]).collect();
            let max = z.iter().cloned().fold(f64::MIN, f64::max);
            let denom: f64 = z.iter().map(|v| (v - max).exp()).sum();
            let c = classes[n * plane + i];
            let p = (z[c] - max).exp() / denom;
            total -= weights[c] * p.max(1e-12).ln();
        }
    }
    total / (shape.n * plane) as f64
}

fn random_labels(shape: Shape4, rng: &mut RngStream) -> (Vec<usize>, Tensor4) {
    let classes: Vec<usize> = (0..shape.n * shape.plane()).map(|_| rng.gen_range(0..shape.c)).collect();
    let planes: Vec<Vec<u8>> = classes.chunks(shape.plane()).map(|c| c.iter().map(|&v| v as u8).collect()).collect();
    let refs: Vec<&[u8]> = planes.iter().map(|p| p.as_slice()).collect();
    (classes, one_hot(&refs, shape.c, shape.h, shape.w).unwrap())
}

#[test]
fn logit_gradient_matches_finite_differences() {
    let mut rng = RngStream::new(8);
    for (seed, c) in [(1u64, 2usize), (2, 2), (3, 4)] {
        let shape = Shape4::new(2, c, 3, 4);
        let logits = Tensor4::random_uniform(shape, &mut RngStream::new(seed)).map(|v| v * 3.0);
        let (classes, labels) = random_labels(shape, &mut rng);
        let spec = LossSpec {
            class_weights: (0..c).map(|k| 0.05 + 0.9 * k as f64 / (c - 1) as f64).collect(),
        };
        let probs = softmax_channel_forward(&logits).unwrap();
        let (loss, grad) = weighted_cross_entropy(&probs, &labels, &spec).unwrap();

        let base: Vec<f64> = logits.data().iter().map(|&v| v as f64).collect();
        let reference = reference_loss(&base, &classes, shape, &spec.class_weights);
        assert!((loss - reference).abs() < 1e-6 * reference.abs().max(1.0));

        let h = 1e-5;
        let numeric: Vec<f64> = (0..base.len())
            .map(|i| {
                let mut z = base.clone();
                z[i] += h;
                let up = reference_loss(&z, &classes, shape, &spec.class_weights);
                z[i] -= 2.0 * h;
                let down = reference_loss(&z, &classes, shape, &spec.class_weights);
                (up - down) / (2.0 * h)
            })
            .collect();
        let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, n) in grad.data().iter().zip(&numeric) {
            let err = (*a as f64 - n).abs() / (a.abs() as f64).max(n.abs()).max(0.01 * scale);
            assert!(err < 1e-3, "analytic {a} vs numeric {n}");
        }
    }
}

#[test]
fn loss_is_zero_only_for_perfect_predictions() {
    let mut rng = RngStream::new(4);
    let shape = Shape4::new(2, 2, 4, 4);
    let (classes, labels) = random_labels(shape, &mut rng);
    let (loss, _) = weighted_cross_entropy(&labels, &labels, &LossSpec::default()).unwrap();
    assert_eq!(loss, 0.0);
    let mut off = labels.clone();
    let i = classes.iter().position(|&c| c == 1).unwrap();
    off.plane_mut(0, 1)[i] = 0.9;
    off.plane_mut(0, 0)[i] = 0.1;
    let (loss, _) = weighted_cross_entropy(&off, &labels, &LossSpec::default()).unwrap();
    assert!(loss > 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn weight_scaling_is_linear(seed in 0u64..1000, exp in -3i32..4, k in 0.1f64..10.0) {
        let shape = Shape4::new(2, 2, 3, 3);
        let mut rng = RngStream::new(seed);
        let probs = softmax_channel_forward(&Tensor4::random_uniform(shape, &mut rng).map(|v| v * 4.0)).unwrap();
        let (_, labels) = random_labels(shape, &mut rng);
        let spec = LossSpec::default();
        let (l1, g1) = weighted_cross_entropy(&probs, &labels, &spec).unwrap();
        prop_assert!(l1 >= 0.0);

        // Powers of two scale exactly in floating point.
        let p2 = 2f64.powi(exp);
        let (l2, g2) = weighted_cross_entropy(&probs, &labels, &spec.scaled(p2)).unwrap();
        prop_assert_eq!(l2, l1 * p2);
        for (a, b) in g1.data().iter().zip(g2.data()) {
            prop_assert_eq!(*b as f64, *a as f64 * p2);
        }

        let (lk, gk) = weighted_cross_entropy(&probs, &labels, &spec.scaled(k)).unwrap();
        prop_assert!((lk - k * l1).abs() <= 1e-12 * (k * l1).abs().max(1e-300));
        for (a, b) in g1.data().iter().zip(gk.data()) {
            prop_assert!((*b as f64 - k * *a as f64).abs() <= 1e-6 * (k * *a as f64).abs() + 1e-30);
        }
    }

    #[test]
    fn crossval_partitions(n in 2usize..400, seed in 0u64..1000) {
        let ids: Vec<String> = (0..n).map(|i| format!("c{i}")).collect();
        let (t0, v0) = crossval_split(&ids, 0, seed).unwrap();
        let (t1, v1) = crossval_split(&ids, 1, seed).unwrap();
        for (t, v) in [(&t0, &v0), (&t1, &v1)] {
            let mut all: Vec<&String> = t.iter().chain(v.iter()).collect();
            all.sort();
            let mut want: Vec<&String> = ids.iter().collect();
            want.sort();
            prop_assert_eq!(all, want);
            prop_assert!(v.iter().all(|id| !t.contains(id)));
        }
        prop_assert!(v1.iter().all(|id| !v0.contains(id)));
        prop_assert!(v1.iter().all(|id| t0.contains(id)));
        prop_assert_eq!(crossval_split(&ids, 0, seed).unwrap(), (t0, v0));
    }
}

#[test]
fn split_of_336_cases() {
    let ids: Vec<String> = (0..336).map(|i| format!("case_{i:03}")).collect();
    for fold in 0..2 {
        let (train, val) = crossval_split(&ids, fold, 2024).unwrap();
        assert_eq!((train.len(), val.len()), (270, 66));
    }
}

fn small_model(base: usize, extent: usize) -> Model {
    assemble_model(&ModelConfig {
        depth: 2,
        base_filters: base,
        input_shape: [1, extent, extent],
        ..ModelConfig::new(EncoderFamily::UnetPlain)
    })
    .unwrap()
}

/// Phantom slices with blobs large enough to be visible at low resolution.
fn phantom(extent: usize, cases: usize, slices: usize, seed: u64) -> Vec<SliceRecord> {
    let spec = PhantomSpec {
        extent,
        blob_radius: [0.08, 0.14],
        seed,
        ..PhantomSpec::default()
    };
    phantom_records(&spec, cases, slices, (extent, extent)).unwrap()
}

fn smoothed(losses: &[f64], window: usize) -> Vec<f64> {
    losses.windows(window).map(|w| w.iter().sum::<f64>() / window as f64).collect()
}

#[test]
fn overfits_eight_phantom_slices() {
    let records = phantom(32, 4, 2, 1);
    assert_eq!(records.len(), 8);
    let config = TrainConfig {
        epochs: 300,
        batch_size: 8,
        learning_rate: 1e-3,
        seed: 3,
        ..TrainConfig::default()
    };
    let started = std::time::Instant::now();
    let (model, history) =
        train_loop(small_model(16, 32), &records, &[], &config, &LossSpec::default(), &AugmentSpec::disabled()).unwrap();
    assert!(history.step_losses.len() <= 300);
    let dsc = mean_dice(&model, &records, &MetricConfig::default()).unwrap().unwrap();
    assert!(dsc >= 0.95, "training DSC {dsc}");
    assert!(started.elapsed().as_secs() < 600);
    let s = smoothed(&history.step_losses, 10);
    for (i, w) in s.windows(2).enumerate() {
        assert!(w[1] <= w[0], "smoothed loss rises at step {}: {} -> {}", i + 10, w[0], w[1]);
    }
}

#[test]
fn zero_epochs_leave_the_model_alone() {
    let model = small_model(4, 16);
    let before = model.graph().params().iter().map(|p| p.to_vec()).collect::<Vec<_>>();
    let config = TrainConfig {
        epochs: 0,
        ..TrainConfig::default()
    };
    let (after, history) =
        train_loop(model, &phantom(16, 1, 2, 0), &[], &config, &LossSpec::default(), &AugmentSpec::default()).unwrap();
    assert!(history.is_empty());
    assert!(history.step_losses.is_empty());
    assert_eq!(after.graph().params().iter().map(|p| p.to_vec()).collect::<Vec<_>>(), before);
    assert!(config.validate().is_err());
}

fn short_run(threads: usize) -> TrainHistory {
    let records = phantom(16, 3, 2, 4);
    let (train, val) = records.split_at(4);
    let config = TrainConfig {
        epochs: 2,
        batch_size: 3,
        learning_rate: 1e-3,
        seed: 9,
        ..TrainConfig::default()
    };
    let spec = AugmentSpec {
        affine_prob: 1.0,
        elastic_prob: 1.0,
        elastic: deepseg::augment::ElasticParams {
            alpha: 34.0,
            sigma: 4.0,
        },
        ..AugmentSpec::default()
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| train_loop(small_model(4, 16), train, val, &config, &LossSpec::default(), &spec).unwrap().1)
}

#[test]
fn identical_seeds_give_identical_histories() {
    let a = short_run(1);
    let b = short_run(1);
    let c = short_run(3);
    assert_eq!(a.len(), 2);
    for other in [&b, &c] {
        assert_eq!(
            a.step_losses.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            other.step_losses.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        for (x, y) in a.epochs.iter().zip(&other.epochs) {
            assert_eq!((x.epoch, x.train_loss.to_bits()), (y.epoch, y.train_loss.to_bits()));
            assert_eq!(x.val_dsc.map(f64::to_bits), y.val_dsc.map(f64::to_bits));
        }
    }
    assert!(a.epochs.iter().all(|r| r.val_dsc.is_some() && r.seconds >= 0.0));
    let csv = a.to_csv();
    assert!(csv.starts_with("epoch,train_loss,val_dsc,seconds\n"));
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn non_finite_loss_reports_the_batch() {
    let mut model = small_model(4, 16);
    for p in model.graph_mut().params_mut() {
        p.iter_mut().for_each(|v| *v = f32::NAN);
    }
    let config = TrainConfig {
        epochs: 1,
        batch_size: 2,
        ..TrainConfig::default()
    };
    let err = train_loop(model, &phantom(16, 2, 2, 0), &[], &config, &LossSpec::default(), &AugmentSpec::disabled())
        .unwrap_err();
    assert!(matches!(err, Error::NonFiniteLoss { epoch: 0, batch: 0 }), "{err}");
}

#[test]
fn mismatched_slice_extent_is_rejected() {
    let config = TrainConfig {
        epochs: 1,
        ..TrainConfig::default()
    };
    let res = train_loop(small_model(4, 16), &phantom(24, 1, 1, 0), &[], &config, &LossSpec::default(), &AugmentSpec::disabled());
    assert!(res.is_err());
}
