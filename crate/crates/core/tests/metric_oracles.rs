use std::collections::HashSet;

use deepseg::grid::Mask;
use deepseg::metrics::{
    case_metrics, confusion, dice, evaluate_cases, hausdorff, sensitivity, specificity, squared_distance_transform,
    MetricConfig, PointSet,
};
use deepseg::tensor::RngStream;
use proptest::prelude::*;
use rand::Rng;

fn random_mask(n: usize, rng: &mut RngStream) -> Mask {
    // Mix sparse, dense and empty masks.
    let density = match rng.gen_range(0..10) {
        0 => 0.0,
        1 => 0.01,
        2..=5 => rng.gen_range(0.02..0.2),
        _ => rng.gen_range(0.2..0.9),
    };
    Mask::from_fn(n, n, |_, _| u8::from(rng.gen_bool(density)))
}

fn points(m: &Mask) -> HashSet<(i64, i64)> {
    let mut s = HashSet::new();
    for r in 0..m.height() {
        for c in 0..m.width() {
            if m.at(r, c) == 1 {
                s.insert((r as i64, c as i64));
            }
        }
    }
    s
}

/// All metrics from set algebra over foreground coordinates.
struct Oracle {
    dsc: f64,
    sensitivity: f64,
    specificity: f64,
    hd: Option<f64>,
}

fn directed(a: &HashSet<(i64, i64)>, b: &HashSet<(i64, i64)>) -> i64 {
    a.iter()
        .map(|p| b.iter().map(|q| (p.0 - q.0).pow(2) + (p.1 - q.1).pow(2)).min().unwrap())
        .max()
        .unwrap()
}

fn oracle(pred: &Mask, truth: &Mask, eps: f64) -> Oracle {
    let (p, t) = (points(pred), points(truth));
    let total = pred.len();
    let tp = p.intersection(&t).count();
    let fp = p.difference(&t).count();
    let fn_ = t.difference(&p).count();
    let tn = total - tp - fp - fn_;
    Oracle {
        dsc: (2.0 * tp as f64 + eps) / ((p.len() + t.len()) as f64 + eps),
        sensitivity: if tp + fn_ == 0 { 1.0 } else { tp as f64 / (tp + fn_) as f64 },
        specificity: if tn + fp == 0 { 1.0 } else { tn as f64 / (tn + fp) as f64 },
        hd: (!p.is_empty() && !t.is_empty()).then(|| (directed(&p, &t).max(directed(&t, &p)) as f64).sqrt()),
    }
}

#[test]
fn all_metrics_match_brute_force_on_random_pairs() {
    let cfg = MetricConfig::default();
    for n in [8, 16, 64] {
        let mut rng = RngStream::new(n as u64);
        for i in 0..100 {
            let pred = random_mask(n, &mut rng);
            let truth = random_mask(n, &mut rng);
            let got = case_metrics("x", &pred, &truth, &cfg).unwrap();
            let want = oracle(&pred, &truth, cfg.epsilon);
            assert_eq!(got.dsc, want.dsc, "dsc n={n} pair {i}");
            assert_eq!(got.sensitivity, want.sensitivity, "sensitivity n={n} pair {i}");
            assert_eq!(got.specificity, want.specificity, "specificity n={n} pair {i}");
            assert_eq!(got.hd, want.hd, "hd n={n} pair {i}");
        }
    }
}

#[test]
fn distance_transform_matches_brute_force() {
    let mut rng = RngStream::new(99);
    for _ in 0..50 {
        let (h, w) = (rng.gen_range(1..24), rng.gen_range(1..24));
        let density = rng.gen_range(0.01..0.5);
        let m = Mask::from_fn(h, w, |_, _| u8::from(rng.gen_bool(density)));
        let fg = points(&m);
        let Some(dt) = squared_distance_transform(&m) else {
            assert!(fg.is_empty());
            continue;
        };
        for r in 0..h {
            for c in 0..w {
                let want = fg.iter().map(|q| (r as i64 - q.0).pow(2) + (c as i64 - q.1).pow(2)).min().unwrap();
                assert_eq!(dt[r * w + c], want as u64);
            }
        }
    }
}

#[test]
fn report_over_cases_matches_direct_calls() {
    let cfg = MetricConfig::default();
    let mut rng = RngStream::new(3);
    let preds: Vec<(String, Mask)> = (0..20).map(|i| (format!("case{i:02}"), random_mask(16, &mut rng))).collect();
    let truths: Vec<(String, Mask)> = (0..20).rev().map(|i| (format!("case{i:02}"), random_mask(16, &mut rng))).collect();
    let report = evaluate_cases(&preds, &truths, &cfg).unwrap();
    assert_eq!(report.cases.len(), 20);
    let mut hd_sum = 0.0;
    let mut hd_n = 0;
    for row in &report.cases {
        let p = &preds.iter().find(|c| c.0 == row.case_id).unwrap().1;
        let t = &truths.iter().find(|c| c.0 == row.case_id).unwrap().1;
        let o = oracle(p, t, 1.0);
        assert_eq!((row.dsc, row.sensitivity, row.specificity, row.hd), (o.dsc, o.sensitivity, o.specificity, o.hd));
        if let Some(h) = o.hd {
            hd_sum += h;
            hd_n += 1;
        }
    }
    let means = report.means();
    let dsc_mean = report.cases.iter().map(|c| c.dsc).sum::<f64>() / 20.0;
    assert_eq!(means.dsc, Some(dsc_mean));
    assert_eq!(means.hd, (hd_n > 0).then(|| hd_sum / hd_n as f64));
}

fn mask_pair() -> impl Strategy<Value = (Mask, Mask)> {
    (1usize..12, 1usize..12).prop_flat_map(|(h, w)| {
        (prop::collection::vec(0u8..2, h * w), prop::collection::vec(0u8..2, h * w))
            .prop_map(move |(a, b)| (Mask::from_vec(h, w, a).unwrap(), Mask::from_vec(h, w, b).unwrap()))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn dice_is_symmetric_and_bounded((a, b) in mask_pair(), eps in 0.01f64..10.0) {
        let cfg = MetricConfig { epsilon: eps, ..MetricConfig::default() };
        let ab = dice(&a, &b, &cfg).unwrap();
        prop_assert_eq!(ab, dice(&b, &a, &cfg).unwrap());
        prop_assert!(ab > 0.0 && ab <= 1.0);
    }

    #[test]
    fn rates_lie_in_unit_interval((a, b) in mask_pair()) {
        let c = confusion(&a, &b).unwrap();
        prop_assert_eq!(c.total() as usize, a.len());
        prop_assert!((0.0..=1.0).contains(&sensitivity(&c)));
        prop_assert!((0.0..=1.0).contains(&specificity(&c)));
    }

    #[test]
    fn hausdorff_is_symmetric_and_separates((a, b) in mask_pair()) {
        let (pa, pb) = (PointSet::from_mask(&a), PointSet::from_mask(&b));
        prop_assume!(!pa.is_empty() && !pb.is_empty());
        let d = hausdorff(&pa, &pb).unwrap();
        prop_assert_eq!(d, hausdorff(&pb, &pa).unwrap());
        prop_assert_eq!(d == 0.0, pa == pb);
    }
}
