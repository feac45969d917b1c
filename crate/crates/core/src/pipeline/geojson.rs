//! Minimal GeoJSON (RFC 7946) writer and structural validator. Positions are
//! `[longitude, latitude]`.

use crate::geodesy::GeoPos;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum Geometry {
    Point { coordinates: [f64; 2] },
    Polygon { coordinates: Vec<Vec<[f64; 2]>> },
}

fn position(p: GeoPos) -> [f64; 2] {
    [p.lon, p.lat]
}

impl Geometry {
    pub fn point(p: GeoPos) -> Self {
        Geometry::Point {
            coordinates: position(p),
        }
    }

    /// Closed counter-clockwise ring through `vertices`.
    pub fn polygon(vertices: &[GeoPos]) -> Self {
        let mut ring: Vec<[f64; 2]> = vertices.iter().copied().map(position).collect();
        let twice_area: f64 = (0..ring.len())
            .map(|i| {
                let a = ring[i];
                let b = ring[(i + 1) % ring.len()];
                a[0] * b[1] - b[0] * a[1]
            })
            .sum();
        if twice_area < 0.0 {
            ring.reverse();
        }
        if let Some(&first) = ring.first() {
            ring.push(first);
        }
        Geometry::Polygon {
            coordinates: vec![ring],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    #[serde(rename = "type")]
    pub kind: String,
    pub geometry: Geometry,
    pub properties: Map<String, Value>,
}

impl Feature {
    pub fn new(geometry: Geometry, properties: Map<String, Value>) -> Self {
        Self {
            kind: "Feature".into(),
            geometry,
            properties,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureCollection {
    #[serde(rename = "type")]
    pub kind: String,
    pub features: Vec<Feature>,
}

impl Default for FeatureCollection {
    fn default() -> Self {
        Self {
            kind: "FeatureCollection".into(),
            features: Vec::new(),
        }
    }
}

impl FeatureCollection {
    pub fn push(&mut self, f: Feature) {
        self.features.push(f);
    }
}

fn check_position(v: &Value) -> Result<(), String> {
    let a = v.as_array().ok_or("position is not an array")?;
    if a.len() < 2 || a.len() > 3 || !a.iter().all(Value::is_number) {
        return Err(format!("bad position {v}"));
    }
    let lon = a[0].as_f64().unwrap_or(f64::NAN);
    let lat = a[1].as_f64().unwrap_or(f64::NAN);
    if !(-180.0..=180.0).contains(&lon) || !(-90.0..=90.0).contains(&lat) {
        return Err(format!("position {v} out of range"));
    }
    Ok(())
}

fn check_ring(v: &Value) -> Result<(), String> {
    let ring = v.as_array().ok_or("ring is not an array")?;
    if ring.len() < 4 {
        return Err("ring has fewer than 4 positions".into());
    }
    ring.iter().try_for_each(check_position)?;
    if ring.first() != ring.last() {
        return Err("ring is not closed".into());
    }
    Ok(())
}

fn check_geometry(g: &Value) -> Result<(), String> {
    if g.is_null() {
        return Ok(());
    }
    let obj = g.as_object().ok_or("geometry is not an object")?;
    let c = obj.get("coordinates");
    match obj.get("type").and_then(Value::as_str) {
        Some("Point") => check_position(c.ok_or("missing coordinates")?),
        Some("MultiPoint") | Some("LineString") => c
            .and_then(Value::as_array)
            .ok_or("coordinates not an array")?
            .iter()
            .try_for_each(check_position),
        Some("Polygon") => c
            .and_then(Value::as_array)
            .ok_or("coordinates not an array")?
            .iter()
            .try_for_each(check_ring),
        Some("MultiPolygon") => c
            .and_then(Value::as_array)
            .ok_or("coordinates not an array")?
            .iter()
            .try_for_each(|p| {
                p.as_array()
                    .ok_or_else(|| "polygon not an array".to_string())?
                    .iter()
                    .try_for_each(check_ring)
            }),
        Some(t) => Err(format!("unsupported geometry type {t}")),
        None => Err("geometry without type".into()),
    }
}

/// Structural validation of a FeatureCollection document.
pub fn validate_feature_collection(doc: &Value) -> Result<(), String> {
    let obj = doc.as_object().ok_or("document is not an object")?;
    if obj.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err("type must be FeatureCollection".into());
    }
    let features = obj
        .get("features")
        .and_then(Value::as_array)
        .ok_or("features must be an array")?;
    for (i, f) in features.iter().enumerate() {
        let fo = f.as_object().ok_or(format!("feature {i} is not an object"))?;
        if fo.get("type").and_then(Value::as_str) != Some("Feature") {
            return Err(format!("feature {i}: type must be Feature"));
        }
        check_geometry(fo.get("geometry").ok_or(format!("feature {i}: missing geometry"))?)
            .map_err(|e| format!("feature {i}: {e}"))?;
        match fo.get("properties") {
            Some(Value::Object(_)) | Some(Value::Null) => {}
            _ => return Err(format!("feature {i}: properties must be an object or null")),
        }
    }
    Ok(())
}
