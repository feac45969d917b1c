//! Command implementations. Each reads its inputs, writes its outputs and
//! returns a summary; printing is left to the caller.

use super::config::ProjectConfig;
use super::geojson::{Feature, FeatureCollection, Geometry};
use super::imageio::{decode_image, write_real_map};
use super::schema::{
    calibration_document, load_correspondences, load_homography, to_canonical_json, Annotation,
    HomographyDocument, ImageRecord, InstanceDocument,
};
use super::{read_to_string, write_bytes, PipelineError, Result};
use crate::evalmetrics::{
    default_range_buckets, gde_stats, map_at, map_by_size, map_range, match_class, per_class_ap,
    ClassAp, EvalConfig, EvalImage, EvalMode, GdePair, GdeStats, LengthBins, SizedMap,
};
use crate::geodesy::{heading_marker, EarthModel, GeoPos};
use crate::homography::{fit_homography_dlt, fit_homography_ls, Correspondence, Homography, PlanarPoint};
use crate::maskops::{georef_pixel, BinaryMask};
use crate::motionheading::{heading_from_flow, planar_to_geo, FlowField, Heading, MotionError};
use crate::scatter2d::{build_morlet_bank, scatblock_forward, scatter_order1, ScatterOutput, SIGMA0};
use crate::slicemerge::{compute_slice_plan, merge_slices, Prediction, SlicePlan};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FitMethod {
    #[default]
    LeastSquares,
    Dlt,
}

pub fn calibrate(corr: &Path, out: &Path, method: FitMethod) -> Result<HomographyDocument> {
    let rows = load_correspondences(corr)?;
    let corrs: Vec<Correspondence> = rows.iter().map(|r| r.correspondence()).collect();
    let h = match method {
        FitMethod::LeastSquares => fit_homography_ls(&corrs)?,
        FitMethod::Dlt => fit_homography_dlt(&corrs)?,
    };
    let doc = calibration_document(&h, &rows)?;
    doc.save(out)?;
    Ok(doc)
}

/// Output of a command that skips bad instances instead of failing.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSummary {
    pub collection: FeatureCollection,
    pub warnings: Vec<String>,
}

fn base_properties(a: &Annotation, index: usize) -> Map<String, Value> {
    let mut p = Map::new();
    p.insert("class".into(), json!(a.category_id));
    p.insert("image_id".into(), json!(a.image_id));
    p.insert("annotation".into(), json!(a.id.unwrap_or(index as u64)));
    if let Some(s) = a.score {
        p.insert("score".into(), json!(s));
    }
    p
}

fn georef_mask(h: &Homography, mask: &BinaryMask) -> std::result::Result<(GeoPos, [u32; 2]), String> {
    let px = georef_pixel(mask).map_err(|e| e.to_string())?;
    let planar = h
        .apply(PlanarPoint::new(f64::from(px.x), f64::from(px.y)))
        .map_err(|e| e.to_string())?;
    let geo = planar_to_geo(planar).map_err(|e| e.to_string())?;
    Ok((geo, [px.x, px.y]))
}

/// Runs `f` on every annotation, grouped by image id then document order,
/// possibly in parallel across images; output order is deterministic.
fn per_annotation<T: Send>(
    doc: &InstanceDocument,
    f: impl Fn(&ImageRecord, usize) -> std::result::Result<T, String> + Sync,
) -> Result<Vec<std::result::Result<T, String>>> {
    let groups: Vec<(u64, Vec<usize>)> = doc.by_image().into_iter().collect();
    let out: Vec<Vec<std::result::Result<T, String>>> = groups
        .par_iter()
        .map(|(id, idx)| {
            let img = doc.image(*id).expect("validated image");
            idx.iter().map(|&i| f(img, i)).collect()
        })
        .collect();
    Ok(out.into_iter().flatten().collect())
}

fn collect_features(
    results: Vec<std::result::Result<Feature, String>>,
    doc: &InstanceDocument,
) -> FeatureSummary {
    let mut collection = FeatureCollection::default();
    let mut warnings = Vec::new();
    let order: Vec<usize> = doc.by_image().into_values().flatten().collect();
    for (r, i) in results.into_iter().zip(order) {
        match r {
            Ok(f) => collection.push(f),
            Err(e) => warnings.push(format!("annotation {i} skipped: {e}")),
        }
    }
    FeatureSummary {
        collection,
        warnings,
    }
}

pub fn georef(homography: &Path, pred: &Path, out: &Path) -> Result<FeatureSummary> {
    let h = load_homography(homography)?;
    let doc = InstanceDocument::load(pred)?;
    let results = per_annotation(&doc, |_, i| {
        let a = &doc.annotations[i];
        let mask = doc
            .mask_of(a)
            .ok_or_else(|| "no segmentation".to_string())?
            .map_err(|e| e.to_string())?;
        let (geo, pixel) = georef_mask(&h, &mask)?;
        let mut props = base_properties(a, i);
        props.insert("pixel".into(), json!(pixel));
        Ok(Feature::new(Geometry::point(geo), props))
    })?;
    let summary = collect_features(results, &doc);
    write_bytes(out, to_canonical_json(&summary.collection).as_bytes())?;
    Ok(summary)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadingOptions {
    pub min_mag: f64,
    pub marker_size: f64,
    pub earth: EarthModel,
}

impl HeadingOptions {
    pub fn from_config(cfg: &ProjectConfig) -> Self {
        Self {
            min_mag: cfg.min_mag,
            marker_size: cfg.marker_size,
            earth: cfg.earth(),
        }
    }
}

fn load_flow(path: &Path) -> Result<FlowField> {
    let file = std::fs::File::open(path).map_err(|e| PipelineError::io(path, e))?;
    FlowField::read_from(std::io::BufReader::new(file)).map_err(|e| match e {
        MotionError::Io(io) if io.kind() == std::io::ErrorKind::UnexpectedEof => {
            PipelineError::schema(path, "truncated flow file")
        }
        MotionError::Io(io) => PipelineError::io(path, io),
        other => PipelineError::schema(path, other.to_string()),
    })
}

/// Flow per image: a single file serves a one-image document, a directory
/// holds `<image_id>.flow` files.
fn flows_for(doc: &InstanceDocument, flow: &Path) -> Result<Vec<(u64, FlowField)>> {
    let mut out = Vec::new();
    if flow.is_dir() {
        for img in &doc.images {
            out.push((img.id, load_flow(&flow.join(format!("{}.flow", img.id)))?));
        }
    } else {
        match doc.images.as_slice() {
            [] => {}
            [img] => out.push((img.id, load_flow(flow)?)),
            _ => {
                return Err(PipelineError::Usage(format!(
                    "{} images need a flow directory, got a file",
                    doc.images.len()
                )))
            }
        }
    }
    for (id, f) in &out {
        let img = doc.image(*id).expect("listed image");
        if (f.width(), f.height()) != (img.width, img.height) {
            return Err(PipelineError::schema(
                flow,
                format!(
                    "flow for image {id} is {}x{}, image is {}x{}",
                    f.width(),
                    f.height(),
                    img.width,
                    img.height
                ),
            ));
        }
    }
    Ok(out)
}

pub fn heading(
    homography: &Path,
    pred: &Path,
    flow: &Path,
    out: &Path,
    opts: HeadingOptions,
) -> Result<FeatureSummary> {
    let h = load_homography(homography)?;
    let doc = InstanceDocument::load(pred)?;
    let flows = flows_for(&doc, flow)?;
    let results = per_annotation(&doc, |img, i| {
        let a = &doc.annotations[i];
        let bbox = a.bbox().expect("validated bbox");
        let field = &flows
            .iter()
            .find(|(id, _)| *id == img.id)
            .expect("flow loaded for every image")
            .1;
        let heading = heading_from_flow(&h, &bbox, field, opts.min_mag).map_err(|e| e.to_string())?;
        let center = match doc.mask_of(a) {
            Some(Ok(m)) if !m.is_empty() => georef_mask(&h, &m)?.0,
            Some(Err(e)) => return Err(format!("mask: {e}")),
            _ => {
                let (cx, cy) = bbox.center();
                let p = h.apply(PlanarPoint::new(cx, cy)).map_err(|e| e.to_string())?;
                planar_to_geo(p).map_err(|e| e.to_string())?
            }
        };
        let mut props = base_properties(a, i);
        let geometry = match heading {
            Heading::Degrees(deg) => {
                props.insert("heading_deg".into(), json!(deg));
                props.insert("motion".into(), json!("moving"));
                Geometry::polygon(&heading_marker(center, deg, opts.marker_size, opts.earth))
            }
            Heading::Stationary => {
                props.insert("motion".into(), json!("stationary"));
                Geometry::point(center)
            }
        };
        Ok(Feature::new(geometry, props))
    })?;
    let summary = collect_features(results, &doc);
    write_bytes(out, to_canonical_json(&summary.collection).as_bytes())?;
    Ok(summary)
}

pub fn slice_plan(w: u32, h: u32, sw: u32, sh: u32, overlap: f64, out: &Path) -> Result<SlicePlan> {
    let plan = compute_slice_plan(w, h, sw, sh, overlap)?;
    write_bytes(out, plan.to_text().as_bytes())?;
    Ok(plan)
}

pub fn slice_file_name(index: usize) -> String {
    format!("slice_{index:04}.json")
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeSummary {
    pub image_id: u64,
    pub input_predictions: usize,
    pub merged: usize,
    pub missing_slices: Vec<usize>,
}

pub fn merge(plan: &Path, pred_dir: &Path, nms_iou: f64, class_aware: bool, out: &Path) -> Result<MergeSummary> {
    let plan_text = read_to_string(plan)?;
    let plan_doc = SlicePlan::from_text(&plan_text).map_err(|e| PipelineError::schema(plan, e.to_string()))?;
    let mut image_id: Option<u64> = None;
    let mut per_slice: Vec<Vec<Prediction>> = Vec::with_capacity(plan_doc.len());
    let mut missing = Vec::new();
    for (i, s) in plan_doc.slices.iter().enumerate() {
        let path = pred_dir.join(slice_file_name(i));
        if !path.exists() {
            missing.push(i);
            per_slice.push(Vec::new());
            continue;
        }
        let doc = InstanceDocument::load(&path)?;
        let img = match doc.images.as_slice() {
            [] => {
                per_slice.push(Vec::new());
                continue;
            }
            [img] => img,
            _ => return Err(PipelineError::schema(&path, "a slice file holds exactly one image")),
        };
        if (img.width, img.height) != (s.width, s.height) {
            return Err(PipelineError::schema(
                &path,
                format!(
                    "image is {}x{}, slice {i} is {}x{}",
                    img.width, img.height, s.width, s.height
                ),
            ));
        }
        match image_id {
            None => image_id = Some(img.id),
            Some(id) if id != img.id => {
                return Err(PipelineError::schema(
                    &path,
                    format!("image id {} differs from {id} in earlier slices", img.id),
                ))
            }
            _ => {}
        }
        let preds = (0..doc.annotations.len())
            .map(|k| doc.prediction(&path, k))
            .collect::<Result<Vec<_>>>()?;
        per_slice.push(preds);
    }
    let input_predictions = per_slice.iter().map(Vec::len).sum();
    let merged = merge_slices(&plan_doc, &per_slice, nms_iou, class_aware)?;
    let image_id = image_id.unwrap_or(1);
    let annotations = merged
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let mut a = Annotation::from_prediction(image_id, p);
            a.id = Some(k as u64 + 1);
            a
        })
        .collect();
    let doc = InstanceDocument::new(
        vec![ImageRecord::new(image_id, plan_doc.full_width, plan_doc.full_height)],
        annotations,
    );
    doc.save(out)?;
    Ok(MergeSummary {
        image_id,
        input_predictions,
        merged: merged.len(),
        missing_slices: missing,
    })
}

pub const EVAL_NOTE: &str = "Metrics are computed solely from the supplied predictions and \
annotations. Given ShipSG-format model predictions and ground truth this reproduces the COCO-style \
mAP (IoU 0.50:0.95 and size buckets) and GDE mean/std tables; the detector accuracy and embedded \
inference latency of trained models are not reproduced by this tool.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format: String,
    pub version: u32,
    pub mode: EvalMode,
    pub iou_thresholds: Vec<f64>,
    pub images: usize,
    pub predictions: usize,
    pub ground_truths: usize,
    pub map: Option<f64>,
    pub map_50: Option<f64>,
    pub map_75: Option<f64>,
    pub map_by_size: SizedMap,
    pub per_class: Vec<ClassAp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gde: Option<GdeReport>,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GdeReport {
    /// Matching threshold used to pair predictions with located ground truth.
    pub match_iou: f64,
    pub pairs: usize,
    pub stats: GdeStats,
}

pub const GDE_MATCH_IOU: f64 = 0.5;

fn build_eval_images(pred_path: &Path, pred: &InstanceDocument, gt_path: &Path, gt: &InstanceDocument) -> Result<Vec<EvalImage>> {
    let gt_ids: Vec<u64> = gt.by_image().into_keys().collect();
    for img in &pred.images {
        match gt.image(img.id) {
            None if pred.annotations.iter().any(|a| a.image_id == img.id) => {
                return Err(PipelineError::schema(
                    pred_path,
                    format!("image {} is not in the ground truth", img.id),
                ))
            }
            Some(g) if (g.width, g.height) != (img.width, img.height) => {
                return Err(PipelineError::schema(
                    pred_path,
                    format!("image {} size differs from the ground truth", img.id),
                ))
            }
            _ => {}
        }
    }
    let pred_groups = pred.by_image();
    let gt_groups = gt.by_image();
    gt_ids
        .into_par_iter()
        .map(|id| {
            let preds = pred_groups
                .get(&id)
                .map(|idx| idx.iter().map(|&k| pred.prediction(pred_path, k)).collect())
                .unwrap_or_else(|| Ok(Vec::new()))?;
            let gts = gt_groups[&id]
                .iter()
                .map(|&k| gt.ground_truth(gt_path, k))
                .collect::<Result<Vec<_>>>()?;
            Ok(EvalImage::new(preds, gts))
        })
        .collect()
}

fn gde_pairs(images: &[EvalImage], h: &Homography, config: &EvalConfig) -> Result<Vec<GdePair>> {
    let classes: BTreeSet<u32> = images.iter().flat_map(|i| i.gts.iter().map(|g| g.class_id)).collect();
    let mut pairs = Vec::new();
    for c in classes {
        for m in match_class(images, c, GDE_MATCH_IOU, config)? {
            let gt = &images[m.image].gts[m.gt];
            let pred = &images[m.image].preds[m.pred];
            let (Some(truth), Some(mask)) = (gt.geo, pred.mask.as_ref()) else {
                continue;
            };
            let Ok((estimated, _)) = georef_mask(h, mask) else {
                continue;
            };
            pairs.push(GdePair {
                estimated,
                truth,
                range_to_camera: gt.range_to_camera,
                ship_length: gt.length,
            });
        }
    }
    Ok(pairs)
}

pub fn evaluate(
    pred_path: &Path,
    gt_path: &Path,
    homography: Option<&Path>,
    mode: EvalMode,
    cfg: &ProjectConfig,
    out: &Path,
) -> Result<EvalReport> {
    let pred = InstanceDocument::load(pred_path)?;
    let gt = InstanceDocument::load(gt_path)?;
    let h = homography.map(load_homography).transpose()?;
    let config = cfg.eval_config(mode);
    config.validate()?;
    let images = build_eval_images(pred_path, &pred, gt_path, &gt)?;
    let gde = match &h {
        Some(h) => {
            let pairs = gde_pairs(&images, h, &config)?;
            if pairs.is_empty() {
                None
            } else {
                Some(GdeReport {
                    match_iou: GDE_MATCH_IOU,
                    pairs: pairs.len(),
                    stats: gde_stats(&pairs, cfg.earth(), &default_range_buckets(), LengthBins::default())?,
                })
            }
        }
        None => None,
    };
    let report = EvalReport {
        format: "mastgeoref-eval-report".into(),
        version: 1,
        mode,
        iou_thresholds: config.iou_thresholds.clone(),
        images: images.len(),
        predictions: images.iter().map(|i| i.preds.len()).sum(),
        ground_truths: images.iter().map(|i| i.gts.len()).sum(),
        map: map_range(&images, &config)?,
        map_50: map_at(&images, 0.5, &config)?,
        map_75: map_at(&images, 0.75, &config)?,
        map_by_size: map_by_size(&images, &config)?,
        per_class: per_class_ap(&images, &config)?,
        gde,
        note: EVAL_NOTE.into(),
    };
    write_bytes(out, to_canonical_json(&report).as_bytes())?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScatterOptions {
    pub scales: usize,
    pub orientations: usize,
    /// Odd size; derived from the low-pass width when absent.
    pub kernel_size: Option<usize>,
    pub downsample: bool,
    /// Resolution-preserving block (upsample, scatter, rectify).
    pub block: bool,
}

/// Smallest odd size covering three low-pass standard deviations, at least 7.
pub fn default_kernel_size(scales: usize) -> usize {
    let sigma = SIGMA0 * 2f64.powi(scales.min(16) as i32);
    (2 * (3.0 * sigma).ceil() as usize + 1).max(7)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterChannel {
    pub file: String,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orientation: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterManifest {
    pub format: String,
    pub version: u32,
    pub scales: usize,
    pub orientations: usize,
    pub kernel_size: usize,
    pub downsample: bool,
    pub block: bool,
    pub input_width: usize,
    pub input_height: usize,
    pub width: usize,
    pub height: usize,
    pub channels: Vec<ScatterChannel>,
}

pub fn scatter(image: &Path, opts: &ScatterOptions, out_dir: &Path) -> Result<(ScatterManifest, ScatterOutput)> {
    let bytes = std::fs::read(image).map_err(|e| PipelineError::io(image, e))?;
    let img = decode_image(&bytes).map_err(|e| PipelineError::schema(image, e.to_string()))?;
    let kernel_size = opts.kernel_size.unwrap_or_else(|| default_kernel_size(opts.scales));
    let bank = build_morlet_bank(opts.scales, opts.orientations, kernel_size)?;
    let out = if opts.block {
        scatblock_forward(&img, &bank)?
    } else {
        scatter_order1(&img, &bank, opts.downsample)?
    };
    std::fs::create_dir_all(out_dir).map_err(|e| PipelineError::io(out_dir, e))?;
    let mut channels = Vec::with_capacity(out.channel_count());
    let write = |name: String, map: &crate::scatter2d::RealMap| -> Result<String> {
        let path: PathBuf = out_dir.join(&name);
        let mut buf = Vec::new();
        write_real_map(map, &mut buf).map_err(|e| PipelineError::io(&path, e))?;
        write_bytes(&path, &buf)?;
        Ok(name)
    };
    channels.push(ScatterChannel {
        file: write("s0.rmap".into(), &out.s0)?,
        kind: "lowpass".into(),
        scale: None,
        orientation: None,
    });
    for (k, m) in out.s_lambda.iter().enumerate() {
        let (j, l) = (k / opts.orientations, k % opts.orientations);
        channels.push(ScatterChannel {
            file: write(format!("s_j{j}_l{l}.rmap"), m)?,
            kind: "bandpass".into(),
            scale: Some(j),
            orientation: Some(l),
        });
    }
    let manifest = ScatterManifest {
        format: "mastgeoref-scatter".into(),
        version: 1,
        scales: opts.scales,
        orientations: opts.orientations,
        kernel_size,
        downsample: opts.downsample || opts.block,
        block: opts.block,
        input_width: img.width,
        input_height: img.height,
        width: out.out_width,
        height: out.out_height,
        channels,
    };
    write_bytes(&out_dir.join("manifest.json"), to_canonical_json(&manifest).as_bytes())?;
    Ok((manifest, out))
}
