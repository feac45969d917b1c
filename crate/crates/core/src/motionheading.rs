//! Ship heading from a dense displacement field inside a detection box.
//!
//! Image-plane directions are degrees in `[0, 360)` measured from the +x axis
//! towards +y (image east = 0, image south = 90, since rows grow downwards).

use crate::evalmetrics::BBox;
use crate::geodesy::{heading_angle, GeoError, GeoPos};
use crate::homography::{Homography, HomographyError, PlanarPoint};
use std::io::{Read, Write};
use thiserror::Error;

/// Default magnitude gate in pixels per frame.
pub const DEFAULT_MIN_MAG: f64 = 0.5;
/// Minimum share of box pixels that must pass the gate for motion.
pub const MOVING_FRACTION: f64 = 0.25;

/// Two angles closer than this (in summed degrees) tie.
const TIE_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum MotionError {
    #[error("box [{0}, {1}, {2}, {3}] is outside the {4}x{5} flow field")]
    BoxOutOfBounds(f64, f64, f64, f64, u32, u32),
    #[error("invalid flow field: {0}")]
    InvalidFlow(String),
    #[error(transparent)]
    Homography(#[from] HomographyError),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, MotionError>;

/// Per-pixel displacement `(dx, dy)` in pixels per frame, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: u32,
    height: u32,
    data: Vec<[f32; 2]>,
}

impl FlowField {
    pub fn new(width: u32, height: u32, data: Vec<[f32; 2]>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(MotionError::InvalidFlow("zero dimension".into()));
        }
        if data.len() != width as usize * height as usize {
            return Err(MotionError::InvalidFlow(format!(
                "expected {} vectors, got {}",
                width as usize * height as usize,
                data.len()
            )));
        }
        if data.iter().flatten().any(|v| !v.is_finite()) {
            return Err(MotionError::InvalidFlow("non-finite displacement".into()));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn uniform(width: u32, height: u32, dx: f32, dy: f32) -> Result<Self> {
        Self::new(width, height, vec![[dx, dy]; width as usize * height as usize])
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn at(&self, x: u32, y: u32) -> [f32; 2] {
        self.data[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, v: [f32; 2]) {
        let i = y as usize * self.width as usize + x as usize;
        self.data[i] = v;
    }

    /// Binary layout: `u32 width, u32 height` then row-major `f32 dx, f32 dy`,
    /// all little-endian.
    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut header = [0u8; 8];
        r.read_exact(&mut header)?;
        let width = u32::from_le_bytes(header[0..4].try_into().expect("4 bytes"));
        let height = u32::from_le_bytes(header[4..8].try_into().expect("4 bytes"));
        let n = width as usize * height as usize;
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        if buf.len() != n * 8 {
            return Err(MotionError::InvalidFlow(format!(
                "payload is {} bytes, expected {}",
                buf.len(),
                n * 8
            )));
        }
        let data = buf
            .chunks_exact(8)
            .map(|c| {
                [
                    f32::from_le_bytes(c[0..4].try_into().expect("4 bytes")),
                    f32::from_le_bytes(c[4..8].try_into().expect("4 bytes")),
                ]
            })
            .collect();
        Self::new(width, height, data)
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let mut buf = Vec::with_capacity(8 + self.data.len() * 8);
        buf.extend_from_slice(&self.width.to_le_bytes());
        buf.extend_from_slice(&self.height.to_le_bytes());
        for [dx, dy] in &self.data {
            buf.extend_from_slice(&dx.to_le_bytes());
            buf.extend_from_slice(&dy.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DisplacementSummary {
    Moving {
        /// Image-plane direction in degrees.
        direction: f64,
        /// Median magnitude of the pixels that passed the gate.
        median_magnitude: f64,
    },
    Stationary {
        /// Median magnitude over the whole box.
        median_magnitude: f64,
    },
}

impl DisplacementSummary {
    pub fn direction(&self) -> Option<f64> {
        match self {
            Self::Moving { direction, .. } => Some(*direction),
            Self::Stationary { .. } => None,
        }
    }
}

fn image_angle(dx: f64, dy: f64) -> f64 {
    let a = dy.atan2(dx).to_degrees().rem_euclid(360.0);
    if a >= 360.0 {
        0.0
    } else {
        a
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Angle among `angles` (degrees in `[0, 360)`) minimizing the sum of
/// circular distances to all of them; ties go to the smaller angle.
///
/// Runs in `O(n log n)` using prefix sums over the sorted, unwrapped angles.
pub fn circular_median(angles: &[f64]) -> Option<f64> {
    let n = angles.len();
    if n == 0 {
        return None;
    }
    let mut a: Vec<f64> = angles.to_vec();
    a.sort_by(f64::total_cmp);
    // doubled array b[j] = a[j], b[j + n] = a[j] + 360
    let b: Vec<f64> = a.iter().copied().chain(a.iter().map(|v| v + 360.0)).collect();
    let mut prefix = vec![0.0; 2 * n + 1];
    for (j, v) in b.iter().enumerate() {
        prefix[j + 1] = prefix[j] + v;
    }
    let mut best: Option<(f64, f64)> = None; // (cost, angle)
    let mut k = 0usize; // last index in window with b[k] - c <= 180
    for i in 0..n {
        let c = b[i];
        k = k.max(i);
        while k + 1 < i + n && b[k + 1] - c <= 180.0 {
            k += 1;
        }
        let near = (k - i + 1) as f64;
        let far = (i + n - k - 1) as f64;
        let sum_near = prefix[k + 1] - prefix[i];
        let sum_far = prefix[i + n] - prefix[k + 1];
        let cost = (sum_near - near * c) + (far * (c + 360.0) - sum_far);
        best = match best {
            None => Some((cost, c)),
            Some((bc, ba)) => {
                if cost < bc - TIE_EPS || ((cost - bc).abs() <= TIE_EPS && c < ba) {
                    Some((cost, c))
                } else {
                    Some((bc, ba))
                }
            }
        };
    }
    best.map(|(_, angle)| angle)
}

fn box_pixel_range(flow: &FlowField, b: &BBox) -> Result<(u32, u32, u32, u32)> {
    let eps = 1e-9;
    let (w, h) = (f64::from(flow.width), f64::from(flow.height));
    if !b.is_valid() || b.x_min < -eps || b.y_min < -eps || b.x_max > w + eps || b.y_max > h + eps {
        return Err(MotionError::BoxOutOfBounds(
            b.x_min, b.y_min, b.x_max, b.y_max, flow.width, flow.height,
        ));
    }
    let x0 = b.x_min.max(0.0).floor() as u32;
    let y0 = b.y_min.max(0.0).floor() as u32;
    let x1 = (b.x_max.min(w).ceil() as u32).max(x0 + 1).min(flow.width);
    let y1 = (b.y_max.min(h).ceil() as u32).max(y0 + 1).min(flow.height);
    Ok((x0, y0, x1, y1))
}

/// Circular median of displacement directions inside `bbox`.
///
/// Pixels with magnitude `<= min_mag` are excluded. When fewer than a quarter
/// of the box pixels remain the object is [`DisplacementSummary::Stationary`].
pub fn median_direction(flow: &FlowField, bbox: &BBox, min_mag: f64) -> Result<DisplacementSummary> {
    let (x0, y0, x1, y1) = box_pixel_range(flow, bbox)?;
    let total = (x1 - x0) as usize * (y1 - y0) as usize;
    let mut angles = Vec::new();
    let mut moving_mags = Vec::new();
    let mut all_mags = Vec::with_capacity(total);
    for y in y0..y1 {
        for x in x0..x1 {
            let [dx, dy] = flow.at(x, y);
            let (dx, dy) = (f64::from(dx), f64::from(dy));
            let mag = dx.hypot(dy);
            all_mags.push(mag);
            if mag > min_mag {
                angles.push(image_angle(dx, dy));
                moving_mags.push(mag);
            }
        }
    }
    if (angles.len() as f64) < MOVING_FRACTION * total as f64 || angles.is_empty() {
        return Ok(DisplacementSummary::Stationary {
            median_magnitude: median(&mut all_mags),
        });
    }
    Ok(DisplacementSummary::Moving {
        direction: circular_median(&angles).expect("non-empty"),
        median_magnitude: median(&mut moving_mags),
    })
}

/// Where the ray from the box center along `direction` leaves the box.
pub fn edge_tip(bbox: &BBox, direction: f64) -> PlanarPoint {
    let (cx, cy) = bbox.center();
    let (dy, dx) = direction.to_radians().sin_cos();
    let mut t = f64::INFINITY;
    let mut snap: Option<(bool, f64)> = None; // (is_x, edge value)
    let mut consider = |cand: f64, is_x: bool, edge: f64| {
        if cand > 0.0 && cand < t {
            t = cand;
            snap = Some((is_x, edge));
        }
    };
    if dx > 0.0 {
        consider((bbox.x_max - cx) / dx, true, bbox.x_max);
    } else if dx < 0.0 {
        consider((bbox.x_min - cx) / dx, true, bbox.x_min);
    }
    if dy > 0.0 {
        consider((bbox.y_max - cy) / dy, false, bbox.y_max);
    } else if dy < 0.0 {
        consider((bbox.y_min - cy) / dy, false, bbox.y_min);
    }
    let mut p = PlanarPoint::new(cx + t * dx, cy + t * dy);
    match snap {
        Some((true, e)) => p.x = e,
        Some((false, e)) => p.y = e,
        None => return PlanarPoint::new(cx, cy),
    }
    p.x = p.x.clamp(bbox.x_min, bbox.x_max);
    p.y = p.y.clamp(bbox.y_min, bbox.y_max);
    p
}

/// Maps a destination-plane point (`x = lon`, `y = lat`) to a position.
pub fn planar_to_geo(p: PlanarPoint) -> std::result::Result<GeoPos, GeoError> {
    GeoPos::new(p.y, p.x)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Heading {
    /// Compass degrees clockwise from north.
    Degrees(f64),
    Stationary,
}

/// Geographic heading of the object in `bbox`: georeferences the box center
/// and the edge tip of the median displacement, then takes the bearing.
pub fn heading_from_flow(h: &Homography, bbox: &BBox, flow: &FlowField, min_mag: f64) -> Result<Heading> {
    let summary = median_direction(flow, bbox, min_mag)?;
    let Some(direction) = summary.direction() else {
        return Ok(Heading::Stationary);
    };
    let (cx, cy) = bbox.center();
    let tip = edge_tip(bbox, direction);
    let center_geo = planar_to_geo(h.apply(PlanarPoint::new(cx, cy))?)?;
    let tip_geo = planar_to_geo(h.apply(tip)?)?;
    Ok(Heading::Degrees(heading_angle(center_geo, tip_geo)?))
}
