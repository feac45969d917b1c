//! Binary instance masks and the geometry computed from them.

use crate::evalmetrics::BBox;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MaskError {
    #[error("mask dimensions must be positive, got {0}x{1}")]
    ZeroDimension(u32, u32),
    #[error("expected {expected} cells, got {got}")]
    BadLength { expected: usize, got: usize },
    #[error("polygon needs at least 3 distinct finite vertices")]
    DegeneratePolygon,
    #[error("mask has no foreground pixels")]
    EmptyMask,
    #[error("mask dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("invalid run-length encoding: {0}")]
    InvalidRle(String),
}

pub type Result<T> = std::result::Result<T, MaskError>;

/// Column `x` and row `y` of a pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelCoord {
    pub x: u32,
    pub y: u32,
}

/// Row-major occupancy grid.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl std::fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BinaryMask")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("area", &self.area())
            .finish()
    }
}

impl BinaryMask {
    pub fn new(width: u32, height: u32) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(MaskError::ZeroDimension(width, height));
        }
        Ok(Self {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        })
    }

    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(MaskError::ZeroDimension(width, height));
        }
        let expected = width as usize * height as usize;
        if bits.len() != expected {
            return Err(MaskError::BadLength {
                expected,
                got: bits.len(),
            });
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    /// Filled axis-aligned rectangle `[x0, x1) x [y0, y1)`, clipped.
    pub fn from_rect(width: u32, height: u32, x0: u32, y0: u32, x1: u32, y1: u32) -> Result<Self> {
        let mut m = Self::new(width, height)?;
        for y in y0.min(height)..y1.min(height) {
            for x in x0.min(width)..x1.min(width) {
                m.set(x, y, true);
            }
        }
        Ok(m)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    fn idx(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    /// Out-of-bounds reads are background.
    pub fn get(&self, x: u32, y: u32) -> bool {
        x < self.width && y < self.height && self.bits[self.idx(x, y)]
    }

    /// # Panics
    /// If `(x, y)` lies outside the mask.
    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        assert!(x < self.width && y < self.height, "pixel ({x}, {y}) out of bounds");
        let i = self.idx(x, y);
        self.bits[i] = v;
    }

    pub fn area(&self) -> u64 {
        self.bits.iter().filter(|&&b| b).count() as u64
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Iterates foreground pixels in row-major order.
    pub fn pixels(&self) -> impl Iterator<Item = PixelCoord> + '_ {
        let w = self.width as usize;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| PixelCoord {
                x: (i % w) as u32,
                y: (i / w) as u32,
            })
    }

    fn check_same_dims(&self, other: &BinaryMask) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(MaskError::DimensionMismatch(
                self.width,
                self.height,
                other.width,
                other.height,
            ));
        }
        Ok(())
    }

    pub fn or_assign(&mut self, other: &BinaryMask) -> Result<()> {
        self.check_same_dims(other)?;
        for (a, &b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= b;
        }
        Ok(())
    }

    /// `(|a and b|, |a or b|)`.
    pub fn overlap_counts(&self, other: &BinaryMask) -> Result<(u64, u64)> {
        self.check_same_dims(other)?;
        let mut inter = 0u64;
        let mut union = 0u64;
        for (&a, &b) in self.bits.iter().zip(&other.bits) {
            inter += u64::from(a && b);
            union += u64::from(a || b);
        }
        Ok((inter, union))
    }

    /// Copies this mask into a new `width x height` canvas shifted by
    /// `(dx, dy)`; pixels falling outside are dropped.
    pub fn translated(&self, dx: i64, dy: i64, width: u32, height: u32) -> Result<Self> {
        let mut out = Self::new(width, height)?;
        for p in self.pixels() {
            let x = i64::from(p.x) + dx;
            let y = i64::from(p.y) + dy;
            if x >= 0 && y >= 0 && x < i64::from(width) && y < i64::from(height) {
                out.set(x as u32, y as u32, true);
            }
        }
        Ok(out)
    }
}

/// Closed polygon in pixel coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolygonMask {
    pub vertices: Vec<(f64, f64)>,
}

impl PolygonMask {
    pub fn new(vertices: Vec<(f64, f64)>) -> Self {
        Self { vertices }
    }

    /// From a flat COCO coordinate list `[x1, y1, x2, y2, ...]`.
    pub fn from_flat(coords: &[f64]) -> Result<Self> {
        if !coords.len().is_multiple_of(2) {
            return Err(MaskError::DegeneratePolygon);
        }
        Ok(Self {
            vertices: coords.chunks_exact(2).map(|c| (c[0], c[1])).collect(),
        })
    }

    fn distinct_vertex_count(&self) -> usize {
        let mut v: Vec<(f64, f64)> = self.vertices.clone();
        v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        v.dedup();
        v.len()
    }

    /// Signed shoelace area.
    pub fn signed_area(&self) -> f64 {
        let n = self.vertices.len();
        (0..n)
            .map(|i| {
                let (x0, y0) = self.vertices[i];
                let (x1, y1) = self.vertices[(i + 1) % n];
                x0 * y1 - x1 * y0
            })
            .sum::<f64>()
            / 2.0
    }
}

/// Even-odd scanline fill: a pixel is set when its center `(x + 0.5, y + 0.5)`
/// lies inside the polygon. Edges use the half-open rule so shared edges are
/// not double counted.
pub fn rasterize(poly: &PolygonMask, width: u32, height: u32) -> Result<BinaryMask> {
    if poly
        .vertices
        .iter()
        .any(|(x, y)| !x.is_finite() || !y.is_finite())
        || poly.distinct_vertex_count() < 3
    {
        return Err(MaskError::DegeneratePolygon);
    }
    let mut mask = BinaryMask::new(width, height)?;
    let n = poly.vertices.len();
    let mut xs: Vec<f64> = Vec::with_capacity(n);
    for row in 0..height {
        let yc = f64::from(row) + 0.5;
        xs.clear();
        for i in 0..n {
            let (x0, y0) = poly.vertices[i];
            let (x1, y1) = poly.vertices[(i + 1) % n];
            if (y0 <= yc) != (y1 <= yc) {
                xs.push(x0 + (yc - y0) * (x1 - x0) / (y1 - y0));
            }
        }
        xs.sort_by(f64::total_cmp);
        for span in xs.chunks_exact(2) {
            // centers x + 0.5 in [span0, span1)
            let start = (span[0] - 0.5).ceil().max(0.0);
            let end = (span[1] - 0.5).ceil().min(f64::from(width));
            if end <= start {
                continue;
            }
            for col in start as u32..end as u32 {
                mask.set(col, row, true);
            }
        }
    }
    Ok(mask)
}

/// Pixel that best represents the hull/waterline intersection under the
/// antenna: the bottom-most foreground pixel of the column with the most
/// foreground pixels.
///
/// Ties between columns go to the column nearest the foreground centroid's x,
/// then to the smaller column index. Comparisons are done in exact integer
/// arithmetic.
pub fn georef_pixel(mask: &BinaryMask) -> Result<PixelCoord> {
    let w = mask.width as usize;
    let mut counts = vec![0u64; w];
    let mut bottom = vec![0u32; w];
    let mut total = 0u64;
    let mut sum_x = 0u128;
    for p in mask.pixels() {
        counts[p.x as usize] += 1;
        bottom[p.x as usize] = p.y; // row-major order: last seen is bottom-most
        total += 1;
        sum_x += u128::from(p.x);
    }
    if total == 0 {
        return Err(MaskError::EmptyMask);
    }
    let max = *counts.iter().max().expect("non-empty");
    // |c - sum_x / total| compared as |c * total - sum_x|
    let dist = |c: usize| (c as i128 * total as i128 - sum_x as i128).unsigned_abs();
    let col = (0..w)
        .filter(|&c| counts[c] == max)
        .min_by(|&a, &b| dist(a).cmp(&dist(b)).then(a.cmp(&b)))
        .expect("max column exists");
    Ok(PixelCoord {
        x: col as u32,
        y: bottom[col],
    })
}

/// Tight box around the foreground; pixel `(x, y)` spans `[x, x+1) x [y, y+1)`.
pub fn bbox_of(mask: &BinaryMask) -> Result<BBox> {
    let mut it = mask.pixels();
    let first = it.next().ok_or(MaskError::EmptyMask)?;
    let (mut x0, mut y0, mut x1, mut y1) = (first.x, first.y, first.x, first.y);
    for p in it {
        x0 = x0.min(p.x);
        x1 = x1.max(p.x);
        y0 = y0.min(p.y);
        y1 = y1.max(p.y);
    }
    Ok(BBox::new_unchecked(
        f64::from(x0),
        f64::from(y0),
        f64::from(x1) + 1.0,
        f64::from(y1) + 1.0,
    ))
}

/// `|a and b| / |a or b|`, zero when both are empty.
pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let (inter, union) = a.overlap_counts(b)?;
    if union == 0 {
        return Ok(0.0);
    }
    Ok(inter as f64 / union as f64)
}

/// COCO-style run-length encoding: column-major runs alternating background
/// and foreground, starting with background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rle {
    pub width: u32,
    pub height: u32,
    pub counts: Vec<u32>,
}

impl Rle {
    pub fn encode(mask: &BinaryMask) -> Self {
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0u32;
        for x in 0..mask.width {
            for y in 0..mask.height {
                let v = mask.get(x, y);
                if v != current {
                    counts.push(run);
                    run = 0;
                    current = v;
                }
                run += 1;
            }
        }
        counts.push(run);
        Self {
            width: mask.width,
            height: mask.height,
            counts,
        }
    }

    pub fn decode(&self) -> Result<BinaryMask> {
        let mut mask = BinaryMask::new(self.width, self.height)?;
        let total = self.width as u64 * self.height as u64;
        let sum: u64 = self.counts.iter().map(|&c| u64::from(c)).sum();
        if sum != total {
            return Err(MaskError::InvalidRle(format!(
                "runs cover {sum} pixels, mask has {total}"
            )));
        }
        let h = self.height as u64;
        let mut pos = 0u64;
        for (i, &c) in self.counts.iter().enumerate() {
            if i % 2 == 1 {
                for k in pos..pos + u64::from(c) {
                    mask.set((k / h) as u32, (k % h) as u32, true);
                }
            }
            pos += u64::from(c);
        }
        Ok(mask)
    }

    /// COCO compressed string form (LEB128-like, 5 bits per char, offset 48,
    /// delta-coded from the second-previous run).
    pub fn to_compressed(&self) -> String {
        let mut out = String::new();
        for (i, &c) in self.counts.iter().enumerate() {
            let mut x = i64::from(c);
            if i > 2 {
                x -= i64::from(self.counts[i - 2]);
            }
            loop {
                let mut ch = x & 0x1f;
                x >>= 5;
                let more = if ch & 0x10 != 0 { x != -1 } else { x != 0 };
                if more {
                    ch |= 0x20;
                }
                out.push((ch as u8 + 48) as char);
                if !more {
                    break;
                }
            }
        }
        out
    }

    pub fn from_compressed(width: u32, height: u32, s: &str) -> Result<Self> {
        let bytes = s.as_bytes();
        let mut counts: Vec<u32> = Vec::new();
        let mut p = 0usize;
        while p < bytes.len() {
            let mut x: i64 = 0;
            let mut k = 0u32;
            loop {
                let b = *bytes
                    .get(p)
                    .ok_or_else(|| MaskError::InvalidRle("truncated string".into()))?;
                if !(48..48 + 64).contains(&b) {
                    return Err(MaskError::InvalidRle(format!("bad character {:?}", b as char)));
                }
                let c = i64::from(b) - 48;
                if k >= 60 {
                    return Err(MaskError::InvalidRle("run value overflow".into()));
                }
                x |= (c & 0x1f) << (5 * k);
                let more = c & 0x20 != 0;
                p += 1;
                k += 1;
                if !more {
                    if c & 0x10 != 0 {
                        x |= -1i64 << (5 * k);
                    }
                    break;
                }
            }
            let i = counts.len();
            if i > 2 {
                x += i64::from(counts[i - 2]);
            }
            let v = u32::try_from(x)
                .map_err(|_| MaskError::InvalidRle(format!("negative or oversized run {x}")))?;
            counts.push(v);
        }
        Ok(Self {
            width,
            height,
            counts,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rasterize_integer_rectangle() {
        let poly = PolygonMask::new(vec![(2.0, 2.0), (6.0, 2.0), (6.0, 5.0), (2.0, 5.0)]);
        let m = rasterize(&poly, 10, 10).unwrap();
        assert_eq!(m.area(), 12);
        assert_eq!(bbox_of(&m).unwrap(), BBox::new(2.0, 2.0, 6.0, 5.0).unwrap());
    }

    #[test]
    fn rasterize_degenerate() {
        let poly = PolygonMask::new(vec![(1.0, 1.0), (4.0, 4.0), (1.0, 1.0)]);
        assert_eq!(rasterize(&poly, 10, 10), Err(MaskError::DegeneratePolygon));
        let poly = PolygonMask::new(vec![(1.0, 1.0), (f64::NAN, 4.0), (3.0, 1.0)]);
        assert_eq!(rasterize(&poly, 10, 10), Err(MaskError::DegeneratePolygon));
    }

    #[test]
    fn rasterize_clips() {
        let poly = PolygonMask::new(vec![(-5.0, -5.0), (3.0, -5.0), (3.0, 2.0), (-5.0, 2.0)]);
        let m = rasterize(&poly, 10, 10).unwrap();
        assert_eq!(m.area(), 6);
    }

    #[test]
    fn even_odd_hole() {
        // outer square and inner square traced as one self-overlapping ring
        let poly = PolygonMask::new(vec![
            (0.0, 0.0),
            (6.0, 0.0),
            (6.0, 6.0),
            (0.0, 6.0),
            (0.0, 0.0),
            (2.0, 2.0),
            (2.0, 4.0),
            (4.0, 4.0),
            (4.0, 2.0),
            (2.0, 2.0),
        ]);
        let m = rasterize(&poly, 8, 8).unwrap();
        assert_eq!(m.area(), 36 - 4);
        assert!(!m.get(3, 3));
    }

    #[test]
    fn georef_single_pixel() {
        let mut m = BinaryMask::new(10, 10).unwrap();
        m.set(7, 3, true);
        assert_eq!(georef_pixel(&m).unwrap(), PixelCoord { x: 7, y: 3 });
    }

    #[test]
    fn georef_full_rectangle_tie() {
        let m = BinaryMask::from_rect(10, 5, 0, 0, 10, 5).unwrap();
        assert_eq!(georef_pixel(&m).unwrap(), PixelCoord { x: 4, y: 4 });
    }

    #[test]
    fn georef_empty() {
        let m = BinaryMask::new(4, 4).unwrap();
        assert_eq!(georef_pixel(&m), Err(MaskError::EmptyMask));
        assert_eq!(bbox_of(&m), Err(MaskError::EmptyMask));
    }

    #[test]
    fn iou_examples() {
        let a = BinaryMask::from_rect(6, 6, 0, 0, 2, 2).unwrap();
        let b = BinaryMask::from_rect(6, 6, 1, 0, 3, 2).unwrap();
        assert!((mask_iou(&a, &b).unwrap() - 2.0 / 6.0).abs() < 1e-15);
        assert_eq!(mask_iou(&a, &a).unwrap(), 1.0);
        let c = BinaryMask::from_rect(6, 6, 4, 4, 6, 6).unwrap();
        assert_eq!(mask_iou(&a, &c).unwrap(), 0.0);
        let e = BinaryMask::new(6, 6).unwrap();
        assert_eq!(mask_iou(&e, &e).unwrap(), 0.0);
        let other = BinaryMask::new(5, 6).unwrap();
        assert!(matches!(mask_iou(&a, &other), Err(MaskError::DimensionMismatch(..))));
    }

    #[test]
    fn rle_known_encoding() {
        // 3x2 mask, column-major: col0 = [0,1], col1 = [1,1], col2 = [0,0]
        let mut m = BinaryMask::new(3, 2).unwrap();
        m.set(0, 1, true);
        m.set(1, 0, true);
        m.set(1, 1, true);
        let rle = Rle::encode(&m);
        assert_eq!(rle.counts, vec![1, 3, 2]);
        assert_eq!(rle.decode().unwrap(), m);
        let s = rle.to_compressed();
        assert_eq!(Rle::from_compressed(3, 2, &s).unwrap(), rle);
    }

    #[test]
    fn rle_rejects_bad_total() {
        let rle = Rle {
            width: 2,
            height: 2,
            counts: vec![1, 1],
        };
        assert!(matches!(rle.decode(), Err(MaskError::InvalidRle(_))));
    }
}
