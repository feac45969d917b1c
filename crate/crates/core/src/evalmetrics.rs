//! Detection and segmentation scoring, plus georeferencing error statistics.
//!
//! Average precision uses greedy one-to-one matching in descending score
//! order and the all-point monotone precision envelope:
//!
//! ```text
//! AP = (1 / G) * sum over true positives k of max_{k' >= k} precision(k')
//! ```
//!
//! where `G` is the number of (non-ignored) ground truths. For the size
//! buckets, ground truths outside the bucket are ignored: a prediction whose
//! best match is an ignored ground truth counts neither as a true nor a false
//! positive, and an unmatched prediction whose own area falls outside the
//! bucket is ignored as well.

use crate::geodesy::{haversine_gde, EarthModel, GeoPos};
use crate::maskops::{BinaryMask, MaskError};
use crate::slicemerge::Prediction;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("invalid box [{0}, {1}, {2}, {3}]: need finite x_min < x_max and y_min < y_max")]
    InvalidBox(f64, f64, f64, f64),
    #[error("IoU thresholds must be strictly increasing within (0, 1]")]
    InvalidThresholds,
    #[error("mask mode needs masks on every {0}")]
    MissingMask(&'static str),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error("no pairs to summarize")]
    EmptyInput,
    #[error("invalid bucket definition: {0}")]
    InvalidBuckets(String),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Axis-aligned box in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let b = Self::new_unchecked(x_min, y_min, x_max, y_max);
        if b.is_valid() {
            Ok(b)
        } else {
            Err(EvalError::InvalidBox(x_min, y_min, x_max, y_max))
        }
    }

    pub(crate) const fn new_unchecked(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    /// From COCO `[x, y, w, h]`.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(x, y, x + w, y + h)
    }

    pub fn to_xywh(&self) -> [f64; 4] {
        [
            self.x_min,
            self.y_min,
            self.x_max - self.x_min,
            self.y_max - self.y_min,
        ]
    }

    pub fn is_valid(&self) -> bool {
        [self.x_min, self.y_min, self.x_max, self.y_max]
            .iter()
            .all(|v| v.is_finite())
            && self.x_min < self.x_max
            && self.y_min < self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.x_min + self.x_max) / 2.0,
            (self.y_min + self.y_max) / 2.0,
        )
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self::new_unchecked(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)
    }

    /// Intersection with `[0, w] x [0, h]`; `None` when nothing remains.
    pub fn clip(&self, w: f64, h: f64) -> Option<Self> {
        let b = Self::new_unchecked(
            self.x_min.clamp(0.0, w),
            self.y_min.clamp(0.0, h),
            self.x_max.clamp(0.0, w),
            self.y_max.clamp(0.0, h),
        );
        b.is_valid().then_some(b)
    }

    /// Lexicographic order on `(x_min, y_min, x_max, y_max)`.
    pub fn lex_cmp(&self, other: &BBox) -> std::cmp::Ordering {
        self.x_min
            .total_cmp(&other.x_min)
            .then(self.y_min.total_cmp(&other.y_min))
            .then(self.x_max.total_cmp(&other.x_max))
            .then(self.y_max.total_cmp(&other.y_max))
    }
}

pub fn box_iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let ih = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Annotated ship.
#[derive(Debug, Clone, PartialEq)]
pub struct GtInstance {
    pub class_id: u32,
    pub bbox: BBox,
    pub mask: Option<BinaryMask>,
    pub geo: Option<GeoPos>,
    /// Ship length in meters.
    pub length: Option<f64>,
    /// Distance from the camera in meters.
    pub range_to_camera: Option<f64>,
}

impl GtInstance {
    pub fn from_box(class_id: u32, bbox: BBox) -> Self {
        Self {
            class_id,
            bbox,
            mask: None,
            geo: None,
            length: None,
            range_to_camera: None,
        }
    }

    pub fn with_mask(mut self, mask: BinaryMask) -> Self {
        self.mask = Some(mask);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Box,
    #[default]
    Mask,
}

impl std::str::FromStr for EvalMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "box" | "bbox" => Ok(Self::Box),
            "mask" | "segm" => Ok(Self::Mask),
            other => Err(format!("unknown evaluation mode {other:?}")),
        }
    }
}

pub const SMALL_MAX_AREA: f64 = 32.0 * 32.0;
pub const MEDIUM_MAX_AREA: f64 = 96.0 * 96.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub iou_thresholds: Vec<f64>,
    /// Upper (inclusive) area bound of the small bucket.
    pub small_max_area: f64,
    /// Upper (inclusive) area bound of the medium bucket.
    pub medium_max_area: f64,
    pub mode: EvalMode,
}

/// `0.50, 0.55, ..., 0.95`.
pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_thresholds: coco_thresholds(),
            small_max_area: SMALL_MAX_AREA,
            medium_max_area: MEDIUM_MAX_AREA,
            mode: EvalMode::Mask,
        }
    }
}

impl EvalConfig {
    pub fn with_mode(mode: EvalMode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.iou_thresholds;
        let ok = !t.is_empty()
            && t.iter().all(|&v| v > 0.0 && v <= 1.0)
            && t.windows(2).all(|w| w[0] < w[1]);
        if !ok {
            return Err(EvalError::InvalidThresholds);
        }
        if !(self.small_max_area > 0.0 && self.medium_max_area > self.small_max_area) {
            return Err(EvalError::InvalidBuckets("area bounds".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeBucket {
    Small,
    Medium,
    Large,
}

impl SizeBucket {
    pub fn of_area(area: f64, config: &EvalConfig) -> Self {
        if area <= config.small_max_area {
            Self::Small
        } else if area <= config.medium_max_area {
            Self::Medium
        } else {
            Self::Large
        }
    }
}

/// Predictions and ground truths of one image. Matching never crosses images.
#[derive(Debug, Clone, Default)]
pub struct EvalImage {
    pub preds: Vec<Prediction>,
    pub gts: Vec<GtInstance>,
}

impl EvalImage {
    pub fn new(preds: Vec<Prediction>, gts: Vec<GtInstance>) -> Self {
        Self { preds, gts }
    }
}

fn pred_area(p: &Prediction, mode: EvalMode) -> f64 {
    match (mode, &p.mask) {
        (EvalMode::Mask, Some(m)) => m.area() as f64,
        _ => p.bbox.area(),
    }
}

fn gt_area(g: &GtInstance, mode: EvalMode) -> f64 {
    match (mode, &g.mask) {
        (EvalMode::Mask, Some(m)) => m.area() as f64,
        _ => g.bbox.area(),
    }
}

fn pair_iou(p: &Prediction, g: &GtInstance, mode: EvalMode) -> Result<f64> {
    match mode {
        EvalMode::Box => Ok(box_iou(&p.bbox, &g.bbox)),
        EvalMode::Mask => {
            let pm = p.mask.as_ref().ok_or(EvalError::MissingMask("prediction"))?;
            let gm = g.mask.as_ref().ok_or(EvalError::MissingMask("ground truth"))?;
            Ok(crate::maskops::mask_iou(pm, gm)?)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    TruePositive,
    FalsePositive,
    Ignored,
}

/// Ranked match outcomes for one class at one threshold.
struct ClassMatches {
    outcomes: Vec<Outcome>,
    n_gt: usize,
}

/// One prediction/ground-truth pairing produced by [`match_class`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchPair {
    pub image: usize,
    pub pred: usize,
    pub gt: usize,
    pub iou: f64,
}

fn match_class_impl(
    images: &[EvalImage],
    class_id: u32,
    tau: f64,
    config: &EvalConfig,
    bucket: Option<SizeBucket>,
    mut on_match: impl FnMut(MatchPair),
) -> Result<ClassMatches> {
    let mode = config.mode;
    let in_bucket = |area: f64| bucket.is_none_or(|b| SizeBucket::of_area(area, config) == b);

    let mut ranked: Vec<(usize, usize, f64)> = Vec::new();
    let mut gt_ignore: Vec<Vec<Option<bool>>> = Vec::with_capacity(images.len());
    let mut n_gt = 0usize;
    for (ii, img) in images.iter().enumerate() {
        let flags: Vec<Option<bool>> = img
            .gts
            .iter()
            .map(|g| {
                (g.class_id == class_id).then(|| {
                    let ignore = !in_bucket(gt_area(g, mode));
                    n_gt += usize::from(!ignore);
                    ignore
                })
            })
            .collect();
        gt_ignore.push(flags);
        for (pi, p) in img.preds.iter().enumerate() {
            if p.class_id == class_id {
                ranked.push((ii, pi, p.score));
            }
        }
    }
    ranked.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));

    let mut taken: Vec<Vec<bool>> = images.iter().map(|i| vec![false; i.gts.len()]).collect();
    let mut outcomes = Vec::with_capacity(ranked.len());
    for &(ii, pi, _) in &ranked {
        let img = &images[ii];
        let pred = &img.preds[pi];
        // best (iou, index) among unmatched gts, separately for kept and ignored
        let mut best: [Option<(f64, usize)>; 2] = [None, None];
        for (gi, g) in img.gts.iter().enumerate() {
            let Some(ignore) = gt_ignore[ii][gi] else {
                continue;
            };
            if taken[ii][gi] {
                continue;
            }
            let iou = pair_iou(pred, g, mode)?;
            if iou < tau {
                continue;
            }
            let slot = &mut best[usize::from(ignore)];
            if slot.is_none_or(|(b, _)| iou > b) {
                *slot = Some((iou, gi));
            }
        }
        let outcome = if let Some((iou, gi)) = best[0] {
            taken[ii][gi] = true;
            on_match(MatchPair {
                image: ii,
                pred: pi,
                gt: gi,
                iou,
            });
            Outcome::TruePositive
        } else if let Some((_, gi)) = best[1] {
            taken[ii][gi] = true;
            Outcome::Ignored
        } else if in_bucket(pred_area(pred, mode)) {
            Outcome::FalsePositive
        } else {
            Outcome::Ignored
        };
        outcomes.push(outcome);
    }
    Ok(ClassMatches { outcomes, n_gt })
}

/// Greedy score-ordered matching of one class at threshold `tau`; returns the
/// true-positive pairs.
pub fn match_class(
    images: &[EvalImage],
    class_id: u32,
    tau: f64,
    config: &EvalConfig,
) -> Result<Vec<MatchPair>> {
    let mut pairs = Vec::new();
    match_class_impl(images, class_id, tau, config, None, |m| pairs.push(m))?;
    Ok(pairs)
}

fn ap_from_matches(m: &ClassMatches) -> Option<f64> {
    let ranked: Vec<bool> = m
        .outcomes
        .iter()
        .filter(|&&o| o != Outcome::Ignored)
        .map(|&o| o == Outcome::TruePositive)
        .collect();
    if m.n_gt == 0 {
        return if ranked.is_empty() { None } else { Some(0.0) };
    }
    let mut tp = 0usize;
    let mut precision: Vec<f64> = Vec::with_capacity(ranked.len());
    for (k, &is_tp) in ranked.iter().enumerate() {
        tp += usize::from(is_tp);
        precision.push(tp as f64 / (k + 1) as f64);
    }
    for k in (0..precision.len().saturating_sub(1)).rev() {
        if precision[k + 1] > precision[k] {
            precision[k] = precision[k + 1];
        }
    }
    let sum: f64 = ranked
        .iter()
        .zip(&precision)
        .filter(|(&t, _)| t)
        .map(|(_, &p)| p)
        .sum();
    Some(sum / m.n_gt as f64)
}

fn ap_bucketed(
    images: &[EvalImage],
    class_id: u32,
    tau: f64,
    config: &EvalConfig,
    bucket: Option<SizeBucket>,
) -> Result<Option<f64>> {
    let m = match_class_impl(images, class_id, tau, config, bucket, |_| {})?;
    Ok(ap_from_matches(&m))
}

/// AP of `class_id` at IoU threshold `tau`.
///
/// `None` when the class has neither ground truth nor predictions; `Some(0)`
/// when it has predictions but no ground truth.
pub fn average_precision(
    images: &[EvalImage],
    class_id: u32,
    tau: f64,
    config: &EvalConfig,
) -> Result<Option<f64>> {
    ap_bucketed(images, class_id, tau, config, None)
}

fn gt_classes(images: &[EvalImage], config: &EvalConfig, bucket: Option<SizeBucket>) -> Vec<u32> {
    let set: BTreeSet<u32> = images
        .iter()
        .flat_map(|i| i.gts.iter())
        .filter(|g| bucket.is_none_or(|b| SizeBucket::of_area(gt_area(g, config.mode), config) == b))
        .map(|g| g.class_id)
        .collect();
    set.into_iter().collect()
}

fn map_at_bucketed(
    images: &[EvalImage],
    tau: f64,
    config: &EvalConfig,
    bucket: Option<SizeBucket>,
) -> Result<Option<f64>> {
    let classes = gt_classes(images, config, bucket);
    if classes.is_empty() {
        return Ok(None);
    }
    let mut sum = 0.0;
    for &c in &classes {
        sum += ap_bucketed(images, c, tau, config, bucket)?.unwrap_or(0.0);
    }
    Ok(Some(sum / classes.len() as f64))
}

/// Unweighted mean of per-class AP over classes with ground truth.
pub fn map_at(images: &[EvalImage], tau: f64, config: &EvalConfig) -> Result<Option<f64>> {
    map_at_bucketed(images, tau, config, None)
}

fn map_range_bucketed(
    images: &[EvalImage],
    config: &EvalConfig,
    bucket: Option<SizeBucket>,
) -> Result<Option<f64>> {
    config.validate()?;
    let per: Vec<Option<f64>> = config
        .iou_thresholds
        .par_iter()
        .map(|&t| map_at_bucketed(images, t, config, bucket))
        .collect::<Result<_>>()?;
    if per.iter().any(Option::is_none) {
        return Ok(None);
    }
    let sum: f64 = per.iter().flatten().sum();
    Ok(Some(sum / per.len() as f64))
}

/// Mean of [`map_at`] over the configured thresholds.
pub fn map_range(images: &[EvalImage], config: &EvalConfig) -> Result<Option<f64>> {
    map_range_bucketed(images, config, None)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizedMap {
    pub small: Option<f64>,
    pub medium: Option<f64>,
    pub large: Option<f64>,
}

/// mAP over the threshold range, restricted to each area bucket.
pub fn map_by_size(images: &[EvalImage], config: &EvalConfig) -> Result<SizedMap> {
    Ok(SizedMap {
        small: map_range_bucketed(images, config, Some(SizeBucket::Small))?,
        medium: map_range_bucketed(images, config, Some(SizeBucket::Medium))?,
        large: map_range_bucketed(images, config, Some(SizeBucket::Large))?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub class_id: u32,
    pub ap_per_threshold: Vec<Option<f64>>,
    pub ap_mean: Option<f64>,
}

/// Per-class AP at every configured threshold, for classes seen in either
/// ground truth or predictions.
pub fn per_class_ap(images: &[EvalImage], config: &EvalConfig) -> Result<Vec<ClassAp>> {
    config.validate()?;
    let classes: BTreeSet<u32> = images
        .iter()
        .flat_map(|i| {
            i.gts
                .iter()
                .map(|g| g.class_id)
                .chain(i.preds.iter().map(|p| p.class_id))
        })
        .collect();
    classes
        .into_par_iter()
        .map(|c| {
            let aps: Vec<Option<f64>> = config
                .iou_thresholds
                .iter()
                .map(|&t| average_precision(images, c, t, config))
                .collect::<Result<_>>()?;
            let mean = if aps.iter().all(Option::is_some) {
                Some(aps.iter().flatten().sum::<f64>() / aps.len() as f64)
            } else {
                None
            };
            Ok(ClassAp {
                class_id: c,
                ap_per_threshold: aps,
                ap_mean: mean,
            })
        })
        .collect()
}

/// Estimated and true position of one ship.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GdePair {
    pub estimated: GeoPos,
    pub truth: GeoPos,
    pub range_to_camera: Option<f64>,
    pub ship_length: Option<f64>,
}

/// Half-open distance interval `(lo, hi]` in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeBucket {
    pub label: String,
    pub lo: f64,
    pub hi: f64,
}

impl RangeBucket {
    pub fn new(label: impl Into<String>, lo: f64, hi: f64) -> Self {
        Self {
            label: label.into(),
            lo,
            hi,
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        v > self.lo && v <= self.hi
    }
}

/// `basin = (0, 400]`, `river = (400, 1200]`.
pub fn default_range_buckets() -> Vec<RangeBucket> {
    vec![
        RangeBucket::new("basin", 0.0, 400.0),
        RangeBucket::new("river", 400.0, 1200.0),
    ]
}

/// Ship-length bins `(k * width, (k + 1) * width]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthBins {
    pub width: f64,
}

impl Default for LengthBins {
    fn default() -> Self {
        Self { width: 20.0 }
    }
}

impl LengthBins {
    pub fn index_of(&self, length: f64) -> Option<u32> {
        if !(length > 0.0 && length.is_finite()) {
            return None;
        }
        Some(((length / self.width).ceil() as u32).saturating_sub(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BucketStats {
    pub mean: f64,
    /// Sample standard deviation; zero for fewer than two samples.
    pub std: f64,
    pub count: usize,
}

impl BucketStats {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Self {
            mean,
            std,
            count: n,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeStats {
    pub label: String,
    pub stats: BucketStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GdeCell {
    pub range_label: String,
    pub length_lo: f64,
    pub length_hi: f64,
    pub stats: BucketStats,
}

/// GDE summaries. Only non-empty buckets are reported.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GdeStats {
    pub overall: BucketStats,
    pub by_range: Vec<RangeStats>,
    pub by_range_and_length: Vec<GdeCell>,
}

/// Haversine distances of every pair, summarized overall, per range bucket,
/// and per range x length bucket.
pub fn gde_stats(
    pairs: &[GdePair],
    earth: EarthModel,
    range_buckets: &[RangeBucket],
    length_bins: LengthBins,
) -> Result<GdeStats> {
    if pairs.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    if !(length_bins.width > 0.0 && length_bins.width.is_finite()) {
        return Err(EvalError::InvalidBuckets("length bin width".into()));
    }
    let dists: Vec<f64> = pairs
        .iter()
        .map(|p| haversine_gde(p.estimated, p.truth, earth))
        .collect();
    let overall = BucketStats::from_values(&dists).expect("non-empty");
    let mut by_range = Vec::new();
    let mut cells = Vec::new();
    for rb in range_buckets {
        let in_range: Vec<usize> = (0..pairs.len())
            .filter(|&i| pairs[i].range_to_camera.is_some_and(|r| rb.contains(r)))
            .collect();
        let values: Vec<f64> = in_range.iter().map(|&i| dists[i]).collect();
        if let Some(stats) = BucketStats::from_values(&values) {
            by_range.push(RangeStats {
                label: rb.label.clone(),
                stats,
            });
        }
        let mut bins: std::collections::BTreeMap<u32, Vec<f64>> = Default::default();
        for &i in &in_range {
            if let Some(k) = pairs[i].ship_length.and_then(|l| length_bins.index_of(l)) {
                bins.entry(k).or_default().push(dists[i]);
            }
        }
        for (k, values) in bins {
            cells.push(GdeCell {
                range_label: rb.label.clone(),
                length_lo: f64::from(k) * length_bins.width,
                length_hi: f64::from(k + 1) * length_bins.width,
                stats: BucketStats::from_values(&values).expect("non-empty bin"),
            });
        }
    }
    Ok(GdeStats {
        overall,
        by_range,
        by_range_and_length: cells,
    })
}
