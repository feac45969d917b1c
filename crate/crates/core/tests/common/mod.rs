//! Independent oracles and fixtures shared by the integration tests. None of
//! these call into the code paths they check.
#![allow(dead_code)]

use mastgeoref::evalmetrics::{BBox, EvalImage};
use mastgeoref::homography::{Correspondence, Homography, PlanarPoint};
use mastgeoref::slicemerge::Prediction;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Well-conditioned projective map on `[0, 1000]^2` with `w` in `[0.4, 1.6]`.
pub fn random_h(r: &mut ChaCha8Rng) -> Homography {
    let mut u = || r.random_range(-0.3..0.3);
    let m = [
        1.0 + u(),
        u(),
        100.0 * u(),
        u(),
        1.0 + u(),
        100.0 * u(),
        1e-3 * u(),
        1e-3 * u(),
        1.0,
    ];
    Homography::from_row_major(&m).unwrap()
}

/// Plain homogeneous multiply, independent of `Homography::apply`.
pub fn mul_h(m: &[f64; 9], x: f64, y: f64) -> (f64, f64) {
    let w = m[6] * x + m[7] * y + m[8];
    (
        (m[0] * x + m[1] * y + m[2]) / w,
        (m[3] * x + m[4] * y + m[5]) / w,
    )
}

pub fn synth_correspondences(h: &Homography, pts: &[(f64, f64)]) -> Vec<Correspondence> {
    let m = h.to_row_major();
    pts.iter()
        .map(|&(x, y)| {
            let (u, v) = mul_h(&m, x, y);
            Correspondence {
                src: PlanarPoint::new(x, y),
                dst: PlanarPoint::new(u, v),
            }
        })
        .collect()
}

/// Oblique harbour camera: a 2028 x 1520 frame looking north-east over the
/// water near 53.55 N, 8.57 E. Rows further up the frame map further away.
/// Returns the row-major pixel-to-(lon, lat) matrix.
pub fn harbour_camera() -> [f64; 9] {
    // Built from four pixel/geo pairs by solving the 8x8 system directly.
    let pairs = [
        ((0.0, 1519.0), (8.5700, 53.5400)),
        ((2027.0, 1519.0), (8.5730, 53.5400)),
        ((2027.0, 600.0), (8.5790, 53.5480)),
        ((0.0, 600.0), (8.5640, 53.5480)),
    ];
    solve_four_point(&pairs)
}

/// Exact homography through four pairs by Gaussian elimination with partial
/// pivoting on the 8x8 system (`h33 = 1`).
/// `((x, y), (u, v))` source/destination pair.
pub type PointPair = ((f64, f64), (f64, f64));

pub fn solve_four_point(pairs: &[PointPair; 4]) -> [f64; 9] {
    let mut a = [[0.0f64; 9]; 8];
    for (k, &((x, y), (u, v))) in pairs.iter().enumerate() {
        a[2 * k] = [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, u];
        a[2 * k + 1] = [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y, v];
    }
    for c in 0..8 {
        let p = (c..8)
            .max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))
            .unwrap();
        a.swap(c, p);
        for r in 0..8 {
            if r != c {
                let f = a[r][c] / a[c][c];
                let pivot = a[c];
                for (v, p) in a[r][c..].iter_mut().zip(&pivot[c..]) {
                    *v -= f * p;
                }
            }
        }
    }
    let mut h = [0.0; 9];
    for i in 0..8 {
        h[i] = a[i][8] / a[i][i];
    }
    h[8] = 1.0;
    h
}

pub fn bx(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
    BBox::new(x0, y0, x1, y1).unwrap()
}

/// Box IoU from explicit interval arithmetic.
pub fn oracle_box_iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let ih = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = iw * ih;
    let area = |r: &BBox| (r.x_max - r.x_min) * (r.y_max - r.y_min);
    let union = area(a) + area(b) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Greedy NMS straight from the definition: visit predictions best first
/// and keep each one that no already-kept prediction (of the same class when
/// `class_aware`) overlaps by more than `tau`.
pub fn oracle_nms(preds: &[Prediction], tau: f64, class_aware: bool) -> Vec<Prediction> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (&preds[i], &preds[j]);
        let key = |p: &Prediction| (p.bbox.x_min, p.bbox.y_min, p.bbox.x_max, p.bbox.y_max);
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then(a.class_id.cmp(&b.class_id))
            .then(key(a).partial_cmp(&key(b)).unwrap())
            .then(i.cmp(&j))
    });
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let clash = kept.iter().any(|&k| {
            (!class_aware || preds[k].class_id == preds[i].class_id)
                && oracle_box_iou(&preds[k].bbox, &preds[i].bbox) > tau
        });
        if !clash {
            kept.push(i);
        }
    }
    kept.into_iter().map(|i| preds[i].clone()).collect()
}

/// Random boxes on a coarse integer grid so that ties and exact threshold
/// hits occur.
pub fn random_preds(r: &mut ChaCha8Rng, n: usize, classes: u32) -> Vec<Prediction> {
    (0..n)
        .map(|_| {
            let x0 = r.random_range(0..12) as f64;
            let y0 = r.random_range(0..12) as f64;
            let w = r.random_range(1..8) as f64;
            let h = r.random_range(1..8) as f64;
            let score = r.random_range(1..6) as f64 / 5.0;
            Prediction::new(r.random_range(0..classes), score, bx(x0, y0, x0 + w, y0 + h))
        })
        .collect()
}

/// All-point interpolated AP of one class, computed from the precision/recall
/// curve: greedy matching by brute force, then for every recall step the
/// best precision reachable at that recall or beyond.
///
/// Box IoU only; predictions are ranked by score, then image, then index.
pub fn oracle_ap(images: &[EvalImage], class_id: u32, tau: f64) -> Option<f64> {
    let mut ranked: Vec<(usize, usize)> = Vec::new();
    let mut n_gt = 0usize;
    for (ii, img) in images.iter().enumerate() {
        n_gt += img.gts.iter().filter(|g| g.class_id == class_id).count();
        for (pi, p) in img.preds.iter().enumerate() {
            if p.class_id == class_id {
                ranked.push((ii, pi));
            }
        }
    }
    ranked.sort_by(|a, b| {
        let sa = images[a.0].preds[a.1].score;
        let sb = images[b.0].preds[b.1].score;
        sb.partial_cmp(&sa).unwrap().then(a.cmp(b))
    });
    if n_gt == 0 {
        return if ranked.is_empty() { None } else { Some(0.0) };
    }
    let mut used: Vec<Vec<bool>> = images.iter().map(|i| vec![false; i.gts.len()]).collect();
    let mut is_tp = Vec::new();
    for &(ii, pi) in &ranked {
        let p = &images[ii].preds[pi];
        let mut best: Option<(f64, usize)> = None;
        for (gi, g) in images[ii].gts.iter().enumerate() {
            if g.class_id != class_id || used[ii][gi] {
                continue;
            }
            let iou = oracle_box_iou(&p.bbox, &g.bbox);
            if iou >= tau && best.is_none_or(|(b, _)| iou > b) {
                best = Some((iou, gi));
            }
        }
        if let Some((_, gi)) = best {
            used[ii][gi] = true;
        }
        is_tp.push(best.is_some());
    }
    // PR curve points after each ranked prediction.
    let mut curve: Vec<(f64, usize)> = Vec::new(); // (precision, true positives so far)
    let mut tp = 0usize;
    for (k, &t) in is_tp.iter().enumerate() {
        tp += usize::from(t);
        curve.push((tp as f64 / (k + 1) as f64, tp));
    }
    let mut area = 0.0;
    for (k, &t) in is_tp.iter().enumerate() {
        if t {
            // interpolated precision at this recall level
            let p = curve[k..].iter().map(|c| c.0).fold(f64::MIN, f64::max);
            area += p;
        }
    }
    Some(area / n_gt as f64)
}

/// Circular distance in degrees.
pub fn circ_dist(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

/// Exhaustive circular median: the included angle with the smallest total
/// circular distance, smaller angle on ties within `1e-9`.
pub fn oracle_circular_median(angles: &[f64]) -> Option<f64> {
    let costs: Vec<f64> = angles
        .iter()
        .map(|&c| angles.iter().map(|&a| circ_dist(a, c)).sum())
        .collect();
    let min = costs.iter().copied().fold(f64::INFINITY, f64::min);
    angles
        .iter()
        .zip(&costs)
        .filter(|(_, &c)| c <= min + 1e-9)
        .map(|(&a, _)| a)
        .min_by(f64::total_cmp)
}
pub mod fixture;
