mod common;

use common::*;
use mastgeoref::maskops::BinaryMask;
use mastgeoref::slicemerge::{
    batch_group, compute_slice_plan, merge_masks, merge_slices, nms, nms_clusters, remap_to_full, Prediction,
    SliceError, SlicePlan, SliceSpec,
};
use proptest::prelude::*;
use std::collections::BTreeSet;
use std::num::NonZeroUsize;

fn origins(plan: &SlicePlan) -> (BTreeSet<u32>, BTreeSet<u32>) {
    (
        plan.slices.iter().map(|s| s.x0).collect(),
        plan.slices.iter().map(|s| s.y0).collect(),
    )
}

fn covered(plan: &SlicePlan) -> bool {
    (0..plan.full_height).all(|y| {
        (0..plan.full_width).all(|x| {
            plan.slices
                .iter()
                .any(|s| x >= s.x0 && x < s.x0 + s.width && y >= s.y0 && y < s.y0 + s.height)
        })
    })
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

#[test]
fn plan_examples() {
    let p = compute_slice_plan(1280, 640, 640, 640, 0.2).unwrap();
    assert_eq!(origins(&p), (BTreeSet::from([0, 512, 640]), BTreeSet::from([0])));
    assert!(covered(&p));
    let small = compute_slice_plan(320, 240, 640, 640, 0.2).unwrap();
    assert_eq!(small.slices, vec![SliceSpec { x0: 0, y0: 0, width: 320, height: 240 }]);
    assert_eq!(compute_slice_plan(100, 100, 10, 10, 1.0), Err(SliceError::InvalidOverlap(1.0)));
    assert!(matches!(compute_slice_plan(100, 100, 10, 10, -0.1), Err(SliceError::InvalidOverlap(_))));
    assert_eq!(compute_slice_plan(100, 100, 0, 10, 0.2), Err(SliceError::ZeroSliceSize));
    let text = p.to_text();
    assert_eq!(SlicePlan::from_text(&text).unwrap(), p);
}

#[test]
fn batches() {
    let p = compute_slice_plan(2028, 1520, 640, 640, 0.2).unwrap();
    let sizes = |b: Option<usize>| -> Vec<usize> {
        batch_group(&p, b.map(|n| NonZeroUsize::new(n).unwrap())).iter().map(|g| g.len()).collect()
    };
    assert_eq!(sizes(None), vec![12]);
    assert_eq!(sizes(Some(12)), vec![12]);
    assert_eq!(sizes(Some(5)), vec![5, 5, 2]);
    assert_eq!(sizes(Some(1)), vec![1; 12]);
    let flat: Vec<SliceSpec> = batch_group(&p, NonZeroUsize::new(5)).concat();
    assert_eq!(flat, p.slices);
}

#[test]
fn remap_translates() {
    let s = SliceSpec { x0: 512, y0: 0, width: 640, height: 640 };
    let mask = BinaryMask::from_rect(640, 640, 10, 10, 20, 20).unwrap();
    let p = Prediction::new(1, 0.7, bx(10.0, 10.0, 20.0, 20.0)).with_mask(mask);
    let r = remap_to_full(&s, 2028, 1520, &p).unwrap();
    assert_eq!(r.bbox, bx(522.0, 10.0, 532.0, 20.0));
    assert_eq!((r.class_id, r.score), (1, 0.7));
    let m = r.mask.unwrap();
    assert_eq!((m.width(), m.height(), m.area()), (2028, 1520, 100));
    assert!(m.get(522, 10) && !m.get(521, 10));
    let origin = SliceSpec { x0: 0, y0: 0, width: 640, height: 640 };
    let plain = Prediction::new(0, 0.5, bx(1.0, 2.0, 3.0, 4.0));
    assert_eq!(remap_to_full(&origin, 640, 640, &plain).unwrap(), plain);
    let outside = Prediction::new(0, 0.5, bx(630.0, 0.0, 650.0, 4.0));
    assert!(matches!(remap_to_full(&s, 2028, 1520, &outside), Err(SliceError::OutOfSliceBounds(_))));
}

#[test]
fn nms_examples() {
    let a = Prediction::new(0, 0.9, bx(0.0, 0.0, 10.0, 10.0));
    assert_eq!(nms(std::slice::from_ref(&a), 0.5, true).unwrap(), vec![a.clone()]);
    let twin = Prediction::new(0, 0.8, bx(0.0, 0.0, 10.0, 10.0));
    assert_eq!(nms(&[twin.clone(), a.clone()], 0.5, true).unwrap(), vec![a.clone()]);
    let other = Prediction::new(1, 0.8, bx(0.0, 0.0, 10.0, 10.0));
    assert_eq!(nms(&[a.clone(), other.clone()], 0.5, true).unwrap().len(), 2);
    assert_eq!(nms(&[a.clone(), other], 0.5, false).unwrap(), vec![a.clone()]);
    assert_eq!(nms(std::slice::from_ref(&a), 0.0, true), Err(SliceError::InvalidThreshold(0.0)));
    assert_eq!(nms(&[a], 1.5, true), Err(SliceError::InvalidThreshold(1.5)));
}

#[test]
fn chain_under_every_input_order() {
    let chain = [
        Prediction::new(0, 0.9, bx(0.0, 0.0, 10.0, 1.0)),
        Prediction::new(0, 0.8, bx(2.5, 0.0, 12.5, 1.0)),
        Prediction::new(0, 0.7, bx(5.0, 0.0, 15.0, 1.0)),
    ];
    assert!(oracle_box_iou(&chain[0].bbox, &chain[1].bbox) > 0.5);
    assert!(oracle_box_iou(&chain[1].bbox, &chain[2].bbox) > 0.5);
    assert!(oracle_box_iou(&chain[0].bbox, &chain[2].bbox) < 0.5);
    for perm in permutations(3) {
        let input: Vec<Prediction> = perm.iter().map(|&i| chain[i].clone()).collect();
        assert_eq!(nms(&input, 0.5, true).unwrap(), vec![chain[0].clone(), chain[2].clone()]);
    }
}

#[test]
fn half_rectangles_merge_to_union() {
    let left = BinaryMask::from_rect(40, 20, 0, 0, 12, 10).unwrap();
    let right = BinaryMask::from_rect(40, 20, 8, 0, 20, 10).unwrap();
    let preds = vec![
        Prediction::new(0, 0.9, bx(0.0, 0.0, 12.0, 10.0)).with_mask(left.clone()),
        Prediction::new(0, 0.6, bx(8.0, 0.0, 20.0, 10.0)).with_mask(right.clone()),
    ];
    let outcome = nms_clusters(&preds, 0.15, true).unwrap();
    assert_eq!(outcome.kept, vec![0]);
    assert_eq!(outcome.clusters, vec![vec![1]]);
    let merged = merge_masks(&preds, &outcome).unwrap();
    let (inter, _) = left.overlap_counts(&right).unwrap();
    let m = merged[0].mask.as_ref().unwrap();
    assert_eq!(m.area(), left.area() + right.area() - inter);
    assert_eq!(merged[0].bbox, bx(0.0, 0.0, 20.0, 10.0));

    let alone = nms_clusters(&preds, 0.9, true).unwrap();
    assert_eq!(merge_masks(&preds, &alone).unwrap(), preds);
    let dup = vec![preds[0].clone(), preds[0].clone()];
    let out = merge_masks(&dup, &nms_clusters(&dup, 0.5, true).unwrap()).unwrap();
    assert_eq!(out, vec![preds[0].clone()]);
}

#[test]
fn end_to_end_identity() {
    // 400x300 frame, object inside slice (160, 0) only
    let plan = compute_slice_plan(400, 300, 200, 200, 0.2).unwrap();
    let full_mask = BinaryMask::from_rect(400, 300, 180, 10, 190, 20).unwrap();
    let truth = Prediction::new(3, 0.8, bx(180.0, 10.0, 190.0, 20.0)).with_mask(full_mask.clone());
    let slice_preds: Vec<Vec<Prediction>> = plan
        .slices
        .iter()
        .map(|s| {
            if s.x0 <= 180 && s.x0 + s.width >= 190 && s.y0 <= 10 && s.y0 + s.height >= 20 {
                let m = full_mask
                    .translated(-i64::from(s.x0), -i64::from(s.y0), s.width, s.height)
                    .unwrap();
                vec![Prediction::new(3, 0.8, truth.bbox.translate(-f64::from(s.x0), -f64::from(s.y0))).with_mask(m)]
            } else {
                vec![]
            }
        })
        .collect();
    assert!(slice_preds.iter().filter(|v| !v.is_empty()).count() >= 2);
    let merged = merge_slices(&plan, &slice_preds, 0.5, true).unwrap();
    assert_eq!(merged, vec![truth]);
}

proptest! {
    #[test]
    fn plans_cover_frame(w in 1u32..120, h in 1u32..120, sw in 1u32..60, sh in 1u32..60, ov in 0.0f64..0.95) {
        let p = compute_slice_plan(w, h, sw, sh, ov).unwrap();
        prop_assert!(covered(&p));
        for s in &p.slices {
            prop_assert!(s.x0 + s.width <= w && s.y0 + s.height <= h);
        }
        let again = compute_slice_plan(w, h, sw, sh, ov).unwrap();
        prop_assert_eq!(p.to_text(), again.to_text());
    }

    #[test]
    fn nms_matches_greedy_oracle(seed in any::<u64>(), n in 0usize..=8, tau in 0.05f64..1.0, aware: bool) {
        let preds = random_preds(&mut rng(seed), n, 3);
        let got = nms(&preds, tau, aware).unwrap();
        prop_assert_eq!(&got, &oracle_nms(&preds, tau, aware));
        prop_assert_eq!(nms(&got, tau, aware).unwrap(), got.clone());
        for w in got.windows(2) {
            prop_assert!(w[0].score >= w[1].score);
        }
    }

    #[test]
    fn nms_ignores_input_order(seed in any::<u64>(), n in 1usize..=5) {
        let preds = random_preds(&mut rng(seed), n, 2);
        let want = nms(&preds, 0.3, true).unwrap();
        for perm in permutations(n) {
            let shuffled: Vec<Prediction> = perm.iter().map(|&i| preds[i].clone()).collect();
            prop_assert_eq!(nms(&shuffled, 0.3, true).unwrap(), want.clone());
        }
    }

    #[test]
    fn remap_preserves_mask_area(x0 in 0u32..100, y0 in 0u32..100, mx in 0u32..30, my in 0u32..30) {
        let s = SliceSpec { x0, y0, width: 40, height: 40 };
        let m = BinaryMask::from_rect(40, 40, mx, my, mx + 10, my + 10).unwrap();
        let p = Prediction::new(0, 0.5, bx(f64::from(mx), f64::from(my), f64::from(mx + 10), f64::from(my + 10)))
            .with_mask(m.clone());
        let r = remap_to_full(&s, 140, 140, &p).unwrap();
        prop_assert_eq!(r.mask.unwrap().area(), m.area());
        prop_assert_eq!(r.bbox, p.bbox.translate(f64::from(x0), f64::from(y0)));
    }
}
