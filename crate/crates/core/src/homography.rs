//! Planar homography between the camera pixel plane and the geographic plane.
//!
//! A [`Homography`] maps `p' ~ H p` in homogeneous coordinates. For
//! georeferencing, the source plane is pixels and the destination plane is
//! decimal degrees with `x = longitude` and `y = latitude`.
//!
//! Both fitters condition each plane isotropically (centroid at the origin,
//! mean radius `sqrt(2)`) before solving and de-normalize afterwards. Degree
//! coordinates across a harbour basin span only ~1e-3 of a degree, which makes
//! the raw stacked system unusable without this step.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Condition-number ceiling above which a design matrix is treated as rank
/// deficient.
pub const DEGENERACY_CONDITION: f64 = 1e12;

/// `|w|` at or below this is a point at infinity.
pub const W_EPSILON: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HomographyError {
    #[error("at least 4 correspondences are required, got {0}")]
    TooFewCorrespondences(usize),
    #[error("degenerate point configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("point maps to infinity (w = {0:e})")]
    PointAtInfinity(f64),
    #[error("homography is singular or not normalizable")]
    SingularHomography,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

pub type Result<T> = std::result::Result<T, HomographyError>;

/// A point on either plane. Pixels on the image side, degrees on the map side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanarPoint {
    pub x: f64,
    pub y: f64,
}

impl PlanarPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance(&self, other: &PlanarPoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

impl From<(f64, f64)> for PlanarPoint {
    fn from((x, y): (f64, f64)) -> Self {
        Self { x, y }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub src: PlanarPoint,
    pub dst: PlanarPoint,
}

impl Correspondence {
    pub const fn new(src: PlanarPoint, dst: PlanarPoint) -> Self {
        Self { src, dst }
    }
}

/// 3x3 projective transform normalized so that `h33 == 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    m: Matrix3<f64>,
}

impl Homography {
    pub fn identity() -> Self {
        Self {
            m: Matrix3::identity(),
        }
    }

    /// Builds a homography from any projectively equivalent matrix, rescaling
    /// it so that the bottom-right entry is exactly 1.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(HomographyError::NonFinite("homography matrix"));
        }
        let scale = m[(2, 2)];
        let max_abs = m.amax();
        if max_abs == 0.0 || scale.abs() <= f64::EPSILON * max_abs {
            return Err(HomographyError::SingularHomography);
        }
        let mut n = m / scale;
        n[(2, 2)] = 1.0;
        if n.iter().any(|v| !v.is_finite()) {
            return Err(HomographyError::SingularHomography);
        }
        let det = n.determinant();
        if !det.is_finite() || det.abs() <= f64::EPSILON * n.amax().powi(3) {
            return Err(HomographyError::SingularHomography);
        }
        Ok(Self { m: n })
    }

    /// Row-major entries `h11, h12, h13, h21, ..., h33`.
    pub fn from_row_major(entries: &[f64; 9]) -> Result<Self> {
        Self::from_matrix(Matrix3::from_row_slice(entries))
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        let mut out = [0.0; 9];
        for r in 0..3 {
            for c in 0..3 {
                out[3 * r + c] = self.m[(r, c)];
            }
        }
        out
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    /// Maps a point from the source plane to the destination plane.
    pub fn apply(&self, p: PlanarPoint) -> Result<PlanarPoint> {
        let m = &self.m;
        let w = m[(2, 0)] * p.x + m[(2, 1)] * p.y + m[(2, 2)];
        if !w.is_finite() || w.abs() <= W_EPSILON {
            return Err(HomographyError::PointAtInfinity(w));
        }
        let x = (m[(0, 0)] * p.x + m[(0, 1)] * p.y + m[(0, 2)]) / w;
        let y = (m[(1, 0)] * p.x + m[(1, 1)] * p.y + m[(1, 2)]) / w;
        Ok(PlanarPoint { x, y })
    }

    pub fn invert(&self) -> Result<Self> {
        let inv = self
            .m
            .try_inverse()
            .ok_or(HomographyError::SingularHomography)?;
        Self::from_matrix(inv)
    }

    /// `self * first`: applies `first`, then `self`.
    pub fn compose(&self, first: &Homography) -> Result<Self> {
        Self::from_matrix(self.m * first.m)
    }
}

impl Default for Homography {
    fn default() -> Self {
        Self::identity()
    }
}

pub fn apply_homography(h: &Homography, p: PlanarPoint) -> Result<PlanarPoint> {
    h.apply(p)
}

pub fn invert(h: &Homography) -> Result<Homography> {
    h.invert()
}

/// Similarity transform taking a point set to zero centroid and mean radius
/// `sqrt(2)`.
fn conditioning(points: impl Iterator<Item = PlanarPoint> + Clone) -> Result<Matrix3<f64>> {
    let n = points.clone().count() as f64;
    let (sx, sy) = points.clone().fold((0.0, 0.0), |(a, b), p| (a + p.x, b + p.y));
    let (cx, cy) = (sx / n, sy / n);
    let mean_r = points.map(|p| (p.x - cx).hypot(p.y - cy)).sum::<f64>() / n;
    let scale_ref = cx.abs().max(cy.abs()).max(mean_r);
    if !mean_r.is_finite() || mean_r <= f64::EPSILON * scale_ref || mean_r == 0.0 {
        return Err(HomographyError::DegenerateConfiguration(
            "points are coincident".into(),
        ));
    }
    let s = std::f64::consts::SQRT_2 / mean_r;
    Ok(Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0))
}

fn transform_point(t: &Matrix3<f64>, p: PlanarPoint) -> PlanarPoint {
    let v = t * Vector3::new(p.x, p.y, 1.0);
    PlanarPoint::new(v.x / v.z, v.y / v.z)
}

fn check_input(corrs: &[Correspondence]) -> Result<()> {
    if corrs.len() < 4 {
        return Err(HomographyError::TooFewCorrespondences(corrs.len()));
    }
    if corrs.iter().any(|c| !c.src.is_finite() || !c.dst.is_finite()) {
        return Err(HomographyError::NonFinite("correspondence"));
    }
    Ok(())
}

struct Conditioned {
    src_t: Matrix3<f64>,
    dst_t: Matrix3<f64>,
    pairs: Vec<(PlanarPoint, PlanarPoint)>,
}

fn condition(corrs: &[Correspondence]) -> Result<Conditioned> {
    let src_t = conditioning(corrs.iter().map(|c| c.src))?;
    let dst_t = conditioning(corrs.iter().map(|c| c.dst))?;
    let pairs = corrs
        .iter()
        .map(|c| {
            (
                transform_point(&src_t, c.src),
                transform_point(&dst_t, c.dst),
            )
        })
        .collect();
    Ok(Conditioned {
        src_t,
        dst_t,
        pairs,
    })
}

fn condition_number(singular_values: &DVector<f64>) -> f64 {
    let max = singular_values.max();
    let min = singular_values.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

fn denormalize(hn: Matrix3<f64>, c: &Conditioned) -> Result<Homography> {
    let dst_inv = c
        .dst_t
        .try_inverse()
        .ok_or(HomographyError::SingularHomography)?;
    let svd = hn.svd(false, false);
    if condition_number(&DVector::from_column_slice(svd.singular_values.as_slice()))
        > DEGENERACY_CONDITION
    {
        return Err(HomographyError::DegenerateConfiguration(
            "fitted transform is singular".into(),
        ));
    }
    Homography::from_matrix(dst_inv * hn * c.src_t).map_err(|e| match e {
        HomographyError::SingularHomography => HomographyError::DegenerateConfiguration(
            "fitted transform cannot be normalized to h33 = 1".into(),
        ),
        other => other,
    })
}

/// Least-squares fit of the eight free entries with `h33 = 1`, minimizing
/// `||A h - b||^2` over the stacked two-rows-per-correspondence system.
///
/// The minimizer is obtained from an SVD of the conditioned `2n x 8` design
/// rather than by forming `(A^T A)^-1`.
pub fn fit_homography_ls(corrs: &[Correspondence]) -> Result<Homography> {
    check_input(corrs)?;
    let c = condition(corrs)?;
    let n = c.pairs.len();
    let mut a = DMatrix::<f64>::zeros(2 * n, 8);
    let mut b = DVector::<f64>::zeros(2 * n);
    for (i, (s, d)) in c.pairs.iter().enumerate() {
        let (x, y, xp, yp) = (s.x, s.y, d.x, d.y);
        let r0 = 2 * i;
        let r1 = r0 + 1;
        a[(r0, 0)] = x;
        a[(r0, 1)] = y;
        a[(r0, 2)] = 1.0;
        a[(r0, 6)] = -xp * x;
        a[(r0, 7)] = -xp * y;
        b[r0] = xp;
        a[(r1, 3)] = x;
        a[(r1, 4)] = y;
        a[(r1, 5)] = 1.0;
        a[(r1, 6)] = -yp * x;
        a[(r1, 7)] = -yp * y;
        b[r1] = yp;
    }
    let svd = a.svd(true, true);
    if condition_number(&svd.singular_values) > DEGENERACY_CONDITION {
        return Err(HomographyError::DegenerateConfiguration(
            "design matrix is rank deficient".into(),
        ));
    }
    let h = svd
        .solve(&b, 0.0)
        .map_err(|e| HomographyError::DegenerateConfiguration(e.to_string()))?;
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0);
    denormalize(hn, &c)
}

/// Direct linear transform: null vector of the conditioned `2n x 9`
/// homogeneous design, taken as the right singular vector of the smallest
/// singular value.
pub fn fit_homography_dlt(corrs: &[Correspondence]) -> Result<Homography> {
    check_input(corrs)?;
    let c = condition(corrs)?;
    let n = c.pairs.len();
    // Pad to at least 9 rows so the thin SVD still yields the full V.
    let rows = (2 * n).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (s, d)) in c.pairs.iter().enumerate() {
        let (x, y, xp, yp) = (s.x, s.y, d.x, d.y);
        let r0 = 2 * i;
        let r1 = r0 + 1;
        a[(r0, 0)] = x;
        a[(r0, 1)] = y;
        a[(r0, 2)] = 1.0;
        a[(r0, 6)] = -xp * x;
        a[(r0, 7)] = -xp * y;
        a[(r0, 8)] = -xp;
        a[(r1, 3)] = x;
        a[(r1, 4)] = y;
        a[(r1, 5)] = 1.0;
        a[(r1, 6)] = -yp * x;
        a[(r1, 7)] = -yp * y;
        a[(r1, 8)] = -yp;
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| {
        HomographyError::DegenerateConfiguration("singular value decomposition failed".into())
    })?;
    let sv = &svd.singular_values;
    // The smallest singular value is the solution's residual; the gap to the
    // second smallest decides whether the null space is one-dimensional.
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]));
    let smallest = order[8];
    let second = sv[order[7]];
    if second <= 0.0 || sv[order[0]] / second > DEGENERACY_CONDITION {
        return Err(HomographyError::DegenerateConfiguration(
            "homogeneous design has a null space of dimension > 1".into(),
        ));
    }
    let h = v_t.row(smallest);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    denormalize(hn, &c)
}

/// Root mean square of destination-plane residuals `|H src - dst|`.
pub fn reprojection_rmse(h: &Homography, corrs: &[Correspondence]) -> Result<f64> {
    if corrs.is_empty() {
        return Err(HomographyError::TooFewCorrespondences(0));
    }
    let mut sum = 0.0;
    for c in corrs {
        let p = h.apply(c.src)?;
        let d = p.distance(&c.dst);
        sum += d * d;
    }
    Ok((sum / corrs.len() as f64).sqrt())
}
