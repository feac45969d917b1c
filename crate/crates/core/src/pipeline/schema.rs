//! On-disk documents.
//!
//! * Homography: JSON `{"format": "mastgeoref-homography", "version": 1,
//!   "h": [9 row-major entries], "source_rows": n, "rmse": r}`.
//! * Correspondences: CSV rows `pixel_x,pixel_y,lat,lon`, optional header,
//!   `#` comments.
//! * Instances (predictions and ground truth): COCO-style
//!   `{"version", "images", "annotations", "categories"}`. Annotations carry
//!   `bbox` as `[x, y, w, h]`, an optional `segmentation` given as polygons
//!   or run lengths (counts list or compressed string), an optional `score`
//!   and an optional `georef` object `{lat, lon, length_m, range_m}`.
//!   Unknown keys on images and annotations are preserved.
//!
//! Numbers are written in shortest round-trip form and keys in a fixed order,
//! so save-load-save is byte-stable.

use super::{read_to_string, write_bytes, PipelineError, Result};
use crate::evalmetrics::{BBox, GtInstance};
use crate::geodesy::GeoPos;
use crate::homography::{reprojection_rmse, Correspondence, Homography, PlanarPoint};
use crate::maskops::{rasterize, BinaryMask, MaskError, PolygonMask, Rle};
use crate::slicemerge::Prediction;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

pub const HOMOGRAPHY_FORMAT: &str = "mastgeoref-homography";
pub const DOC_VERSION: u32 = 1;

fn default_version() -> u32 {
    DOC_VERSION
}

/// Pretty JSON with a trailing newline.
pub fn to_canonical_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("documents serialize infallibly");
    s.push('\n');
    s
}

fn parse_json<T: for<'de> Deserialize<'de>>(path: &Path, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| PipelineError::schema(path, e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HomographyDocument {
    pub format: String,
    pub version: u32,
    pub h: [f64; 9],
    pub source_rows: usize,
    pub rmse: f64,
}

impl HomographyDocument {
    pub fn new(h: &Homography, source_rows: usize, rmse: f64) -> Self {
        Self {
            format: HOMOGRAPHY_FORMAT.to_string(),
            version: DOC_VERSION,
            h: h.to_row_major(),
            source_rows,
            rmse,
        }
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let doc: Self = parse_json(path, text)?;
        if doc.format != HOMOGRAPHY_FORMAT {
            return Err(PipelineError::schema(path, format!("unexpected format {:?}", doc.format)));
        }
        if doc.version != DOC_VERSION {
            return Err(PipelineError::schema(path, format!("unsupported version {}", doc.version)));
        }
        if doc.h.iter().any(|v| !v.is_finite()) || !doc.rmse.is_finite() {
            return Err(PipelineError::schema(path, "non-finite value"));
        }
        Ok(doc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(path, &read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_bytes(path, to_canonical_json(self).as_bytes())
    }

    pub fn homography(&self) -> Result<Homography> {
        Ok(Homography::from_row_major(&self.h)?)
    }
}

pub fn load_homography(path: &Path) -> Result<Homography> {
    HomographyDocument::load(path)?.homography()
}

/// One calibration row: an image pixel and the geographic position it shows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrespondenceRow {
    pub pixel_x: f64,
    pub pixel_y: f64,
    pub lat: f64,
    pub lon: f64,
}

impl CorrespondenceRow {
    /// Source is the pixel, destination is `(lon, lat)`.
    pub fn correspondence(&self) -> Correspondence {
        Correspondence {
            src: PlanarPoint::new(self.pixel_x, self.pixel_y),
            dst: PlanarPoint::new(self.lon, self.lat),
        }
    }
}

const CORR_HEADER: [&str; 4] = ["pixel_x", "pixel_y", "lat", "lon"];

pub fn parse_correspondences(path: &Path, text: &str) -> Result<Vec<CorrespondenceRow>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| PipelineError::schema(path, e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let err = |msg: String| PipelineError::schema(path, format!("line {line}: {msg}"));
        if rec.len() != 4 {
            return Err(err(format!("expected 4 fields, found {}", rec.len())));
        }
        if i == 0 && rec.get(0).is_some_and(|f| f.parse::<f64>().is_err()) {
            let names: Vec<String> = rec.iter().map(str::to_ascii_lowercase).collect();
            if names != CORR_HEADER {
                return Err(err(format!("header must be {}", CORR_HEADER.join(","))));
            }
            continue;
        }
        let mut v = [0.0; 4];
        for (k, field) in rec.iter().enumerate() {
            v[k] = field
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| err(format!("{} is not a finite number: {field:?}", CORR_HEADER[k])))?;
        }
        GeoPos::new(v[2], v[3]).map_err(|e| err(e.to_string()))?;
        rows.push(CorrespondenceRow {
            pixel_x: v[0],
            pixel_y: v[1],
            lat: v[2],
            lon: v[3],
        });
    }
    Ok(rows)
}

pub fn load_correspondences(path: &Path) -> Result<Vec<CorrespondenceRow>> {
    parse_correspondences(path, &read_to_string(path)?)
}

pub fn write_correspondences(rows: &[CorrespondenceRow]) -> String {
    let mut s = String::from("pixel_x,pixel_y,lat,lon\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{}\n", r.pixel_x, r.pixel_y, r.lat, r.lon));
    }
    s
}

/// Calibration summary for a fitted homography.
pub fn calibration_document(h: &Homography, rows: &[CorrespondenceRow]) -> Result<HomographyDocument> {
    let corrs: Vec<Correspondence> = rows.iter().map(CorrespondenceRow::correspondence).collect();
    let rmse = reprojection_rmse(h, &corrs)?;
    Ok(HomographyDocument::new(h, rows.len(), rmse))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: u64,
    pub width: u32,
    pub height: u32,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

impl ImageRecord {
    pub fn new(id: u64, width: u32, height: u32) -> Self {
        Self {
            id,
            width,
            height,
            extra: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub id: u32,
    pub name: String,
}

/// Run lengths with `size = [height, width]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RleRecord {
    pub size: [u32; 2],
    pub counts: RleCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RleCounts {
    Runs(Vec<u32>),
    Compressed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Segmentation {
    /// Flat `[x1, y1, x2, y2, ...]` rings, combined by union.
    Polygons(Vec<Vec<f64>>),
    Rle(RleRecord),
}

impl Segmentation {
    pub fn decode(&self, width: u32, height: u32) -> std::result::Result<BinaryMask, MaskError> {
        match self {
            Segmentation::Polygons(rings) => {
                let mut mask = BinaryMask::new(width, height)?;
                for ring in rings {
                    let poly = PolygonMask::from_flat(ring)?;
                    mask.or_assign(&rasterize(&poly, width, height)?)?;
                }
                Ok(mask)
            }
            Segmentation::Rle(r) => {
                let [h, w] = r.size;
                if (w, h) != (width, height) {
                    return Err(MaskError::DimensionMismatch(w, h, width, height));
                }
                let rle = match &r.counts {
                    RleCounts::Runs(c) => Rle {
                        width: w,
                        height: h,
                        counts: c.clone(),
                    },
                    RleCounts::Compressed(s) => Rle::from_compressed(w, h, s)?,
                };
                rle.decode()
            }
        }
    }

    /// Compressed run-length form of `mask`.
    pub fn encode(mask: &BinaryMask) -> Self {
        let rle = Rle::encode(mask);
        Segmentation::Rle(RleRecord {
            size: [rle.height, rle.width],
            counts: RleCounts::Compressed(rle.to_compressed()),
        })
    }
}

/// Geographic annotations: position, ship length and range to the camera.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeoFields {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range_m: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<u64>,
    pub image_id: u64,
    pub category_id: u32,
    /// `[x, y, w, h]`.
    pub bbox: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segmentation: Option<Segmentation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub area: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub georef: Option<GeoFields>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

impl Annotation {
    pub fn bbox(&self) -> Option<BBox> {
        let [x, y, w, h] = self.bbox;
        BBox::from_xywh(x, y, w, h).ok()
    }

    pub fn from_prediction(image_id: u64, p: &Prediction) -> Self {
        Self {
            id: None,
            image_id,
            category_id: p.class_id,
            bbox: p.bbox.to_xywh(),
            score: Some(p.score),
            segmentation: p.mask.as_ref().map(Segmentation::encode),
            area: None,
            georef: None,
            extra: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceDocument {
    #[serde(default = "default_version")]
    pub version: u32,
    pub images: Vec<ImageRecord>,
    pub annotations: Vec<Annotation>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<Category>,
}

impl InstanceDocument {
    pub fn new(images: Vec<ImageRecord>, annotations: Vec<Annotation>) -> Self {
        Self {
            version: DOC_VERSION,
            images,
            annotations,
            categories: Vec::new(),
        }
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let doc: Self = parse_json(path, text)?;
        doc.validate(path)?;
        Ok(doc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(path, &read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        to_canonical_json(self)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_bytes(path, self.to_json().as_bytes())
    }

    /// Structural checks that do not decode masks.
    pub fn validate(&self, path: &Path) -> Result<()> {
        let bad = |msg: String| Err(PipelineError::schema(path, msg));
        if self.version != DOC_VERSION {
            return bad(format!("unsupported version {}", self.version));
        }
        let mut ids = BTreeSet::new();
        for img in &self.images {
            if !ids.insert(img.id) {
                return bad(format!("duplicate image id {}", img.id));
            }
            if img.width == 0 || img.height == 0 {
                return bad(format!("image {} has zero size", img.id));
            }
        }
        for (i, a) in self.annotations.iter().enumerate() {
            if !ids.contains(&a.image_id) {
                return bad(format!("annotation {i} references unknown image {}", a.image_id));
            }
            if a.bbox().is_none() {
                return bad(format!("annotation {i} has an invalid bbox {:?}", a.bbox));
            }
            if a.score.is_some_and(|s| !s.is_finite()) {
                return bad(format!("annotation {i} has a non-finite score"));
            }
            if let Some(g) = &a.georef {
                let vals = [g.lat, g.lon, g.length_m, g.range_m];
                if vals.iter().flatten().any(|v| !v.is_finite()) {
                    return bad(format!("annotation {i} has a non-finite georef value"));
                }
                if g.lat.is_some() != g.lon.is_some() {
                    return bad(format!("annotation {i} georef needs both lat and lon"));
                }
            }
        }
        Ok(())
    }

    pub fn image(&self, id: u64) -> Option<&ImageRecord> {
        self.images.iter().find(|i| i.id == id)
    }

    /// Annotation indices grouped by image id, in document order.
    pub fn by_image(&self) -> BTreeMap<u64, Vec<usize>> {
        let mut m: BTreeMap<u64, Vec<usize>> = self.images.iter().map(|i| (i.id, Vec::new())).collect();
        for (k, a) in self.annotations.iter().enumerate() {
            m.entry(a.image_id).or_default().push(k);
        }
        m
    }

    fn dims_of(&self, a: &Annotation) -> (u32, u32) {
        let img = self.image(a.image_id).expect("validated image reference");
        (img.width, img.height)
    }

    /// Decoded mask of an annotation, `None` without segmentation.
    pub fn mask_of(&self, a: &Annotation) -> Option<std::result::Result<BinaryMask, MaskError>> {
        let (w, h) = self.dims_of(a);
        a.segmentation.as_ref().map(|s| s.decode(w, h))
    }

    /// Converts an annotation into a scored prediction. Without a score the
    /// annotation is taken as certain.
    pub fn prediction(&self, path: &Path, index: usize) -> Result<Prediction> {
        let a = &self.annotations[index];
        let bbox = a.bbox().expect("validated bbox");
        let score = a.score.unwrap_or(1.0);
        let mut p = Prediction::new(a.category_id, score, bbox);
        if let Some(m) = self.mask_of(a) {
            let m = m.map_err(|e| PipelineError::schema(path, format!("annotation {index}: {e}")))?;
            p = p.with_mask(m);
        }
        Ok(p)
    }

    pub fn ground_truth(&self, path: &Path, index: usize) -> Result<GtInstance> {
        let a = &self.annotations[index];
        let mut g = GtInstance::from_box(a.category_id, a.bbox().expect("validated bbox"));
        if let Some(m) = self.mask_of(a) {
            let m = m.map_err(|e| PipelineError::schema(path, format!("annotation {index}: {e}")))?;
            g = g.with_mask(m);
        }
        if let Some(geo) = &a.georef {
            if let (Some(lat), Some(lon)) = (geo.lat, geo.lon) {
                g.geo = Some(
                    GeoPos::new(lat, lon)
                        .map_err(|e| PipelineError::schema(path, format!("annotation {index}: {e}")))?,
                );
            }
            g.length = geo.length_m;
            g.range_to_camera = geo.range_m;
        }
        Ok(g)
    }
}
