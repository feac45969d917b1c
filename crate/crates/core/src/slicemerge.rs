//! Slicing of full-resolution frames into overlapping tiles and merging of
//! the per-tile predictions back into the full frame.
//!
//! Merging is remap -> greedy NMS -> logical OR of each kept mask with the
//! masks it suppressed.

use crate::evalmetrics::{box_iou, BBox};
use crate::maskops::{bbox_of, BinaryMask, MaskError};
use std::cmp::Ordering;
use std::fmt::Write as _;
use std::num::NonZeroUsize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SliceError {
    #[error("overlap must lie in [0, 1), got {0}")]
    InvalidOverlap(f64),
    #[error("slice and frame sizes must be positive")]
    ZeroSliceSize,
    #[error("prediction lies outside its slice: {0}")]
    OutOfSliceBounds(String),
    #[error("IoU threshold must lie in (0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error("slice plan text, line {line}: {msg}")]
    PlanParse { line: usize, msg: String },
}

pub type Result<T> = std::result::Result<T, SliceError>;

/// Tile origin and size in full-frame pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SliceSpec {
    pub x0: u32,
    pub y0: u32,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlicePlan {
    pub full_width: u32,
    pub full_height: u32,
    pub slice_width: u32,
    pub slice_height: u32,
    pub overlap: f64,
    /// Row-major: y origins outer, x origins inner.
    pub slices: Vec<SliceSpec>,
}

fn axis_origins(full: u32, size: u32, overlap: f64) -> (Vec<u32>, u32) {
    if full <= size {
        return (vec![0], full);
    }
    let stride = ((f64::from(size) * (1.0 - overlap)).floor() as u32).max(1);
    let mut origins = Vec::new();
    let mut o = 0u32;
    loop {
        if o + size >= full {
            origins.push(full - size);
            break;
        }
        origins.push(o);
        o += stride;
    }
    origins.dedup();
    (origins, size)
}

/// Tiles a `w x h` frame with `sw x sh` slices.
///
/// Stride per axis is `floor(s * (1 - overlap))`; the last slice on each axis
/// is shifted back to end exactly at the frame edge. A frame smaller than the
/// slice yields one slice covering the frame.
pub fn compute_slice_plan(w: u32, h: u32, sw: u32, sh: u32, overlap: f64) -> Result<SlicePlan> {
    if !(overlap.is_finite() && (0.0..1.0).contains(&overlap)) {
        return Err(SliceError::InvalidOverlap(overlap));
    }
    if sw == 0 || sh == 0 || w == 0 || h == 0 {
        return Err(SliceError::ZeroSliceSize);
    }
    let (xs, width) = axis_origins(w, sw, overlap);
    let (ys, height) = axis_origins(h, sh, overlap);
    let slices = ys
        .iter()
        .flat_map(|&y0| {
            xs.iter().map(move |&x0| SliceSpec {
                x0,
                y0,
                width,
                height,
            })
        })
        .collect();
    Ok(SlicePlan {
        full_width: w,
        full_height: h,
        slice_width: sw,
        slice_height: sh,
        overlap,
        slices,
    })
}

impl SlicePlan {
    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    /// Text table: a `#` header carrying the frame and slicing parameters,
    /// then one `x0 y0 w h` line per slice.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "# frame {} {} slice {} {} overlap {}\n",
            self.full_width, self.full_height, self.slice_width, self.slice_height, self.overlap
        );
        for sl in &self.slices {
            let _ = writeln!(s, "{} {} {} {}", sl.x0, sl.y0, sl.width, sl.height);
        }
        s
    }

    /// Parses [`SlicePlan::to_text`] output. Without a header the frame size
    /// is the extent of the slices.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut header: Option<(u32, u32, u32, u32, f64)> = None;
        let mut slices = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let err = |msg: &str| SliceError::PlanParse {
                line: i + 1,
                msg: msg.to_string(),
            };
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let t: Vec<&str> = rest.split_whitespace().collect();
                if t.len() == 8 && t[0] == "frame" && t[3] == "slice" && t[6] == "overlap" {
                    let num = |s: &str| s.parse::<u32>().map_err(|_| err("bad header number"));
                    header = Some((
                        num(t[1])?,
                        num(t[2])?,
                        num(t[4])?,
                        num(t[5])?,
                        t[7].parse::<f64>().map_err(|_| err("bad overlap"))?,
                    ));
                }
                continue;
            }
            let v: Vec<u32> = line
                .split_whitespace()
                .map(|t| t.parse::<u32>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| err("expected four non-negative integers"))?;
            if v.len() != 4 {
                return Err(err("expected four non-negative integers"));
            }
            if v[2] == 0 || v[3] == 0 {
                return Err(err("zero-sized slice"));
            }
            slices.push(SliceSpec {
                x0: v[0],
                y0: v[1],
                width: v[2],
                height: v[3],
            });
        }
        let ext_w = slices.iter().map(|s| s.x0 + s.width).max().unwrap_or(0);
        let ext_h = slices.iter().map(|s| s.y0 + s.height).max().unwrap_or(0);
        let (fw, fh, sw, sh, ov) = header.unwrap_or_else(|| {
            let sw = slices.iter().map(|s| s.width).max().unwrap_or(0);
            let sh = slices.iter().map(|s| s.height).max().unwrap_or(0);
            (ext_w, ext_h, sw, sh, 0.0)
        });
        if slices.iter().any(|s| s.x0 + s.width > fw || s.y0 + s.height > fh) {
            return Err(SliceError::PlanParse {
                line: 0,
                msg: "slice exceeds the frame".into(),
            });
        }
        Ok(Self {
            full_width: fw,
            full_height: fh,
            slice_width: sw,
            slice_height: sh,
            overlap: ov,
            slices,
        })
    }
}

/// Contiguous groups of at most `batch_size` slices; `None` means one group
/// holding the whole plan.
pub fn batch_group(plan: &SlicePlan, batch_size: Option<NonZeroUsize>) -> Vec<&[SliceSpec]> {
    if plan.slices.is_empty() {
        return Vec::new();
    }
    let n = batch_size.map_or(plan.slices.len(), NonZeroUsize::get);
    plan.slices.chunks(n).collect()
}

/// A scored instance, in slice-local or full-frame coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class_id: u32,
    pub score: f64,
    pub bbox: BBox,
    pub mask: Option<BinaryMask>,
}

impl Prediction {
    pub fn new(class_id: u32, score: f64, bbox: BBox) -> Self {
        Self {
            class_id,
            score,
            bbox,
            mask: None,
        }
    }

    pub fn with_mask(mut self, mask: BinaryMask) -> Self {
        self.mask = Some(mask);
        self
    }

    pub fn is_valid(&self) -> bool {
        (0.0..=1.0).contains(&self.score) && self.bbox.is_valid()
    }
}

const BOUNDS_EPS: f64 = 1e-9;

/// Moves a slice-local prediction into full-frame coordinates.
///
/// The mask, if present, must have the slice's dimensions and is re-embedded
/// into a `frame_w x frame_h` canvas.
pub fn remap_to_full(
    slice: &SliceSpec,
    frame_w: u32,
    frame_h: u32,
    p: &Prediction,
) -> Result<Prediction> {
    let b = &p.bbox;
    let (sw, sh) = (f64::from(slice.width), f64::from(slice.height));
    if !b.is_valid()
        || b.x_min < -BOUNDS_EPS
        || b.y_min < -BOUNDS_EPS
        || b.x_max > sw + BOUNDS_EPS
        || b.y_max > sh + BOUNDS_EPS
    {
        return Err(SliceError::OutOfSliceBounds(format!(
            "box [{}, {}, {}, {}] in {}x{} slice",
            b.x_min, b.y_min, b.x_max, b.y_max, slice.width, slice.height
        )));
    }
    if frame_w == 0 || frame_h == 0 {
        return Err(SliceError::ZeroSliceSize);
    }
    let mask = match &p.mask {
        Some(m) => {
            if m.width() != slice.width || m.height() != slice.height {
                return Err(SliceError::OutOfSliceBounds(format!(
                    "mask is {}x{}, slice is {}x{}",
                    m.width(),
                    m.height(),
                    slice.width,
                    slice.height
                )));
            }
            Some(m.translated(
                i64::from(slice.x0),
                i64::from(slice.y0),
                frame_w,
                frame_h,
            )?)
        }
        None => None,
    };
    let bbox = b
        .translate(f64::from(slice.x0), f64::from(slice.y0))
        .clip(f64::from(frame_w), f64::from(frame_h))
        .ok_or_else(|| SliceError::OutOfSliceBounds("box clipped away".into()))?;
    Ok(Prediction {
        class_id: p.class_id,
        score: p.score,
        bbox,
        mask,
    })
}

/// Deterministic ranking: score descending, then class id, then box
/// lexicographic, then input position.
fn rank_order(preds: &[Prediction]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..preds.len()).collect();
    idx.sort_by(|&a, &b| prediction_rank_cmp(&preds[a], &preds[b]).then(a.cmp(&b)));
    idx
}

/// Result of greedy NMS over a prediction list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NmsOutcome {
    /// Indices of kept predictions, in output order.
    pub kept: Vec<usize>,
    /// `clusters[k]` holds the indices suppressed by `kept[k]`.
    pub clusters: Vec<Vec<usize>>,
}

/// Greedy NMS returning which input indices survive and what each keeper
/// suppressed. A suppressed prediction joins the cluster of the
/// highest-ranked keeper whose IoU with it exceeds `tau`.
pub fn nms_clusters(preds: &[Prediction], tau: f64, class_aware: bool) -> Result<NmsOutcome> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(SliceError::InvalidThreshold(tau));
    }
    let mut kept: Vec<usize> = Vec::new();
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for i in rank_order(preds) {
        let p = &preds[i];
        let suppressor = kept.iter().position(|&k| {
            let q = &preds[k];
            (!class_aware || q.class_id == p.class_id) && box_iou(&q.bbox, &p.bbox) > tau
        });
        match suppressor {
            Some(c) => clusters[c].push(i),
            None => {
                kept.push(i);
                clusters.push(Vec::new());
            }
        }
    }
    Ok(NmsOutcome { kept, clusters })
}

/// Greedy non-maximum suppression, output sorted by descending score.
pub fn nms(preds: &[Prediction], tau: f64, class_aware: bool) -> Result<Vec<Prediction>> {
    let out = nms_clusters(preds, tau, class_aware)?;
    Ok(out.kept.iter().map(|&i| preds[i].clone()).collect())
}

/// ORs each keeper's mask with the masks it suppressed and tightens its box
/// to the merged mask. Keepers whose cluster carries no mask pass through.
pub fn merge_masks(preds: &[Prediction], outcome: &NmsOutcome) -> Result<Vec<Prediction>> {
    let mut out = Vec::with_capacity(outcome.kept.len());
    for (&k, cluster) in outcome.kept.iter().zip(&outcome.clusters) {
        let mut merged = preds[k].clone();
        let mut acc: Option<BinaryMask> = merged.mask.take();
        for &s in cluster {
            if let Some(m) = &preds[s].mask {
                match &mut acc {
                    Some(a) => a.or_assign(m)?,
                    None => acc = Some(m.clone()),
                }
            }
        }
        if let Some(m) = &acc {
            if !m.is_empty() {
                merged.bbox = bbox_of(m)?;
            }
        }
        merged.mask = acc;
        out.push(merged);
    }
    Ok(out)
}

/// Full merge of per-slice results: `slice_preds[i]` holds the slice-local
/// predictions of `plan.slices[i]`.
pub fn merge_slices(
    plan: &SlicePlan,
    slice_preds: &[Vec<Prediction>],
    tau: f64,
    class_aware: bool,
) -> Result<Vec<Prediction>> {
    use rayon::prelude::*;
    let remapped: Vec<Vec<Prediction>> = plan
        .slices
        .par_iter()
        .zip(slice_preds.par_iter())
        .map(|(s, preds)| {
            preds
                .iter()
                .map(|p| remap_to_full(s, plan.full_width, plan.full_height, p))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let all: Vec<Prediction> = remapped.into_iter().flatten().collect();
    let outcome = nms_clusters(&all, tau, class_aware)?;
    merge_masks(&all, &outcome)
}

/// Ordering used by [`nms`], exposed for callers that need to sort
/// predictions the same way.
pub fn prediction_rank_cmp(a: &Prediction, b: &Prediction) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.class_id.cmp(&b.class_id))
        .then(a.bbox.lex_cmp(&b.bbox))
}
