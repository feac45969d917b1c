mod common;

use common::*;
use mastgeoref::evalmetrics::{
    average_precision, box_iou, default_range_buckets, gde_stats, map_at, map_by_size, map_range, match_class,
    EvalConfig, EvalError, EvalImage, EvalMode, GdePair, GtInstance, LengthBins, RangeBucket,
};
use mastgeoref::geodesy::{destination_point, haversine_gde, EarthModel, GeoPos};
use mastgeoref::maskops::BinaryMask;
use mastgeoref::slicemerge::Prediction;
use proptest::prelude::*;
use rand::Rng;

fn boxcfg() -> EvalConfig {
    EvalConfig::with_mode(EvalMode::Box)
}

fn gt(class_id: u32, b: mastgeoref::BBox) -> GtInstance {
    GtInstance::from_box(class_id, b)
}

fn image(preds: Vec<Prediction>, gts: Vec<GtInstance>) -> Vec<EvalImage> {
    vec![EvalImage::new(preds, gts)]
}

#[test]
fn box_iou_half_offset() {
    let a = bx(0.0, 0.0, 1.0, 1.0);
    let b = bx(0.5, 0.0, 1.5, 1.0);
    assert!((box_iou(&a, &b) - 1.0 / 3.0).abs() < 1e-15);
    assert_eq!(box_iou(&a, &b), oracle_box_iou(&a, &b));
}

#[test]
fn ap_examples() {
    let cfg = boxcfg();
    let g = bx(0.0, 0.0, 10.0, 10.0);
    let perfect = image(vec![Prediction::new(0, 0.9, g)], vec![gt(0, g)]);
    assert_eq!(average_precision(&perfect, 0, 0.5, &cfg).unwrap(), Some(1.0));
    let none = image(vec![], vec![gt(0, g)]);
    assert_eq!(average_precision(&none, 0, 0.5, &cfg).unwrap(), Some(0.0));
    let nothing = image(vec![], vec![]);
    assert_eq!(average_precision(&nothing, 0, 0.5, &cfg).unwrap(), None);
    let stray = image(vec![Prediction::new(0, 0.9, g)], vec![]);
    assert_eq!(average_precision(&stray, 0, 0.5, &cfg).unwrap(), Some(0.0));

    let g2 = bx(20.0, 0.0, 30.0, 10.0);
    let worked = image(
        vec![
            Prediction::new(0, 0.9, g),
            Prediction::new(0, 0.8, bx(50.0, 50.0, 60.0, 60.0)),
            Prediction::new(0, 0.7, g2),
        ],
        vec![gt(0, g), gt(0, g2)],
    );
    let ap = average_precision(&worked, 0, 0.5, &cfg).unwrap().unwrap();
    assert!((ap - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-15);
}

#[test]
fn map_examples() {
    let cfg = boxcfg();
    let g = bx(0.0, 0.0, 10.0, 10.0);
    let h = bx(40.0, 0.0, 50.0, 10.0);
    let two = image(vec![Prediction::new(0, 0.9, g)], vec![gt(0, g), gt(1, h)]);
    assert_eq!(map_at(&two, 0.5, &cfg).unwrap(), Some(0.5));
    assert_eq!(map_range(&two, &cfg).unwrap(), Some(0.5));
    let perfect = image(vec![Prediction::new(0, 0.9, g)], vec![gt(0, g)]);
    assert_eq!(map_range(&perfect, &cfg).unwrap(), Some(1.0));
    let miss = image(vec![Prediction::new(0, 0.9, h)], vec![gt(0, g)]);
    assert_eq!(map_range(&miss, &cfg).unwrap(), Some(0.0));
    assert_eq!(map_range(&image(vec![], vec![]), &cfg).unwrap(), None);
}

#[test]
fn three_class_map_is_oracle_mean() {
    let mut r = rng(31);
    let cfg = boxcfg();
    let images: Vec<EvalImage> = (0..4)
        .map(|_| {
            let gts: Vec<GtInstance> = random_preds(&mut r, 5, 3).into_iter().map(|p| gt(p.class_id, p.bbox)).collect();
            let mut preds = random_preds(&mut r, 8, 3);
            for (p, g) in preds.iter_mut().zip(&gts) {
                p.class_id = g.class_id;
                p.bbox = g.bbox.translate(f64::from(r.random_range(0..2u8)), 0.0);
            }
            EvalImage::new(preds, gts)
        })
        .collect();
    for &tau in &cfg.iou_thresholds {
        let per: Vec<f64> = (0..3).map(|c| oracle_ap(&images, c, tau).unwrap()).collect();
        let want = per.iter().sum::<f64>() / 3.0;
        let got = map_at(&images, tau, &cfg).unwrap().unwrap();
        assert!((got - want).abs() < 1e-15, "tau {tau}: {got} vs {want}");
    }
}

#[test]
fn size_buckets() {
    let cfg = boxcfg();
    // 20 x 25 = 500 px: small only
    let b = bx(0.0, 0.0, 20.0, 25.0);
    let small = image(vec![Prediction::new(0, 0.9, b)], vec![gt(0, b)]);
    let s = map_by_size(&small, &cfg).unwrap();
    assert_eq!((s.small, s.medium, s.large), (Some(1.0), None, None));
    // 9217 px is large; a prediction matching it does not count in other buckets
    let big = bx(0.0, 0.0, 9217.0, 1.0);
    let tiny = bx(0.0, 10.0, 10.0, 20.0);
    let mixed = image(vec![Prediction::new(0, 0.9, big)], vec![gt(0, big), gt(0, tiny)]);
    let s = map_by_size(&mixed, &cfg).unwrap();
    assert_eq!((s.small, s.medium, s.large), (Some(0.0), None, Some(1.0)));
}

#[test]
fn mask_mode_uses_pixels() {
    let cfg = EvalConfig::with_mode(EvalMode::Mask);
    let b = bx(0.0, 0.0, 10.0, 10.0);
    let m = BinaryMask::from_rect(20, 20, 0, 0, 10, 10).unwrap();
    let half = BinaryMask::from_rect(20, 20, 0, 0, 10, 4).unwrap();
    // boxes agree, masks overlap 0.4
    let imgs = image(vec![Prediction::new(0, 0.9, b).with_mask(half)], vec![gt(0, b).with_mask(m.clone())]);
    assert_eq!(average_precision(&imgs, 0, 0.5, &cfg).unwrap(), Some(0.0));
    assert_eq!(average_precision(&imgs, 0, 0.4, &cfg).unwrap(), Some(1.0));
    let bare = image(vec![Prediction::new(0, 0.9, b)], vec![gt(0, b).with_mask(m)]);
    assert!(matches!(average_precision(&bare, 0, 0.5, &cfg), Err(EvalError::MissingMask(_))));
}

#[test]
fn gde_examples() {
    let earth = EarthModel::default();
    let a = GeoPos::new(53.54, 8.57).unwrap();
    let same = GdePair { estimated: a, truth: a, range_to_camera: Some(100.0), ship_length: Some(30.0) };
    let s = gde_stats(&[same], earth, &default_range_buckets(), LengthBins::default()).unwrap();
    assert_eq!((s.overall.mean, s.overall.std, s.overall.count), (0.0, 0.0, 1));

    let b = destination_point(a, 70.0, 25.0, earth);
    let pair = GdePair { estimated: b, truth: a, range_to_camera: Some(400.0), ship_length: Some(40.0) };
    let s = gde_stats(&[pair], earth, &default_range_buckets(), LengthBins::default()).unwrap();
    assert!((s.overall.mean - 25.0).abs() < 1e-6);
    assert_eq!(s.overall.std, 0.0);
    assert_eq!(s.by_range.len(), 1);
    assert_eq!(s.by_range[0].label, "basin");
    let cell = &s.by_range_and_length[0];
    assert_eq!((cell.length_lo, cell.length_hi), (20.0, 40.0));

    assert_eq!(
        gde_stats(&[], earth, &default_range_buckets(), LengthBins::default()),
        Err(EvalError::EmptyInput)
    );
    let river = RangeBucket::new("river", 400.0, 1200.0);
    assert!(!river.contains(400.0) && river.contains(400.0 + 1e-9));
}

#[test]
fn bad_thresholds_rejected() {
    let mut cfg = boxcfg();
    cfg.iou_thresholds = vec![0.5, 0.5];
    assert_eq!(map_range(&[], &cfg), Err(EvalError::InvalidThresholds));
}

fn scenario(seed: u64) -> Vec<EvalImage> {
    let mut r = rng(seed);
    let n_img = r.random_range(1..=2);
    (0..n_img)
        .map(|_| {
            let (ng, np) = (r.random_range(0..=3), r.random_range(0..=5));
            let gts: Vec<GtInstance> = random_preds(&mut r, ng, 2)
                .into_iter()
                .map(|p| gt(p.class_id, p.bbox))
                .collect();
            let preds = random_preds(&mut r, np, 2);
            EvalImage::new(preds, gts)
        })
        .collect()
}

proptest! {
    #[test]
    fn ap_matches_exhaustive_oracle(seed in any::<u64>(), tau in 0.05f64..1.0) {
        let images = scenario(seed);
        let cfg = boxcfg();
        for class_id in 0..2 {
            let got = average_precision(&images, class_id, tau, &cfg).unwrap();
            prop_assert_eq!(got, oracle_ap(&images, class_id, tau));
            if let Some(a) = got {
                prop_assert!((0.0..=1.0).contains(&a));
            }
        }
    }

    #[test]
    fn matching_is_one_to_one(seed in any::<u64>(), tau in 0.05f64..1.0) {
        let images = scenario(seed);
        for class_id in 0..2 {
            let pairs = match_class(&images, class_id, tau, &boxcfg()).unwrap();
            let mut seen = std::collections::BTreeSet::new();
            for p in &pairs {
                prop_assert!(seen.insert((p.image, p.gt)), "gt matched twice");
                prop_assert!(p.iou >= tau);
                let (pr, g) = (&images[p.image].preds[p.pred], &images[p.image].gts[p.gt]);
                prop_assert_eq!(pr.class_id, class_id);
                prop_assert_eq!(g.class_id, class_id);
                prop_assert_eq!(p.iou, oracle_box_iou(&pr.bbox, &g.bbox));
            }
        }
    }

    #[test]
    fn demoting_a_true_positive_never_helps(n_gt in 1usize..5, n_fp in 1usize..5, seed in any::<u64>()) {
        // disjoint ground truth, exact hits and far clutter, distinct scores
        let mut r = rng(seed);
        let gts: Vec<GtInstance> = (0..n_gt).map(|k| gt(0, bx(20.0 * k as f64, 0.0, 20.0 * k as f64 + 10.0, 10.0))).collect();
        let mut scores: Vec<f64> = (0..n_gt + n_fp).map(|k| (k + 1) as f64 / (n_gt + n_fp + 1) as f64).collect();
        for i in (1..scores.len()).rev() {
            scores.swap(i, r.random_range(0..=i));
        }
        let mut preds: Vec<Prediction> = gts.iter().zip(&scores).map(|(g, &s)| Prediction::new(0, s, g.bbox)).collect();
        for k in 0..n_fp {
            preds.push(Prediction::new(0, scores[n_gt + k], bx(500.0 + 20.0 * k as f64, 0.0, 510.0 + 20.0 * k as f64, 10.0)));
        }
        let cfg = boxcfg();
        let before = average_precision(&image(preds.clone(), gts.clone()), 0, 0.5, &cfg).unwrap().unwrap();
        let tp = r.random_range(0..n_gt);
        let fp = n_gt + r.random_range(0..n_fp);
        if preds[tp].score > preds[fp].score {
            let (a, b) = (preds[tp].score, preds[fp].score);
            preds[tp].score = b;
            preds[fp].score = a;
        }
        let after = average_precision(&image(preds, gts), 0, 0.5, &cfg).unwrap().unwrap();
        prop_assert!(after <= before + 1e-15, "{before} -> {after}");
    }

    #[test]
    fn gde_stats_match_recomputation(seed in any::<u64>(), n in 1usize..30) {
        let mut r = rng(seed);
        let earth = EarthModel::default();
        let pairs: Vec<GdePair> = (0..n)
            .map(|_| {
                let t = GeoPos::new(53.5 + r.random_range(0.0..0.05), 8.5 + r.random_range(0.0..0.1)).unwrap();
                GdePair {
                    estimated: destination_point(t, r.random_range(0.0..360.0), r.random_range(0.0..80.0), earth),
                    truth: t,
                    range_to_camera: Some(r.random_range(1.0..1200.0)),
                    ship_length: Some(r.random_range(5.0..300.0)),
                }
            })
            .collect();
        let s = gde_stats(&pairs, earth, &default_range_buckets(), LengthBins::default()).unwrap();
        let d: Vec<f64> = pairs.iter().map(|p| haversine_gde(p.estimated, p.truth, earth)).collect();
        let mean = d.iter().sum::<f64>() / n as f64;
        prop_assert!((s.overall.mean - mean).abs() < 1e-9);
        if n > 1 {
            let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            prop_assert!((s.overall.std - var.sqrt()).abs() < 1e-9);
        } else {
            prop_assert_eq!(s.overall.std, 0.0);
        }
        let bucketed: usize = s.by_range.iter().map(|b| b.stats.count).sum();
        prop_assert_eq!(bucketed, n);
        let celled: usize = s.by_range_and_length.iter().map(|c| c.stats.count).sum();
        prop_assert_eq!(celled, n);
        prop_assert!(s.by_range_and_length.iter().all(|c| c.stats.std >= 0.0 && c.stats.count > 0));
    }
}
