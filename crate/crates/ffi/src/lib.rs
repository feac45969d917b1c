//! C ABI over the `mastgeoref` core.
//!
//! Every function returns an [`MgStatus`]; results come back through out
//! pointers. Objects are opaque handles released with the matching `_free`
//! function. After a failure, `mg_last_error_message` returns a description
//! of the most recent error on the calling thread.

#![allow(clippy::missing_safety_doc)]

use mastgeoref::geodesy::{self, EarthModel, GeoError, GeoPos, Hemisphere, UtmPos};
use mastgeoref::homography::{self, Correspondence, Homography, HomographyError, PlanarPoint};
use mastgeoref::maskops::{self, BinaryMask, MaskError, PolygonMask};
use mastgeoref::motionheading;
use mastgeoref::pipeline::commands::default_kernel_size;
use mastgeoref::scatter2d::{self, ScatterError, ScatterOutput};
use mastgeoref::slicemerge::{self, Prediction, SliceError, SlicePlan};
use mastgeoref::BBox;
use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    TooFewPoints = 3,
    Degenerate = 4,
    PointAtInfinity = 5,
    OutOfDomain = 6,
    EmptyMask = 7,
    BufferTooSmall = 8,
    Panic = 99,
}

/// Homography fitting method for `mg_homography_fit`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MgFitMethod {
    LeastSquares = 0,
    Dlt = 1,
}

/// Opaque 3x3 projective transform.
pub struct MgHomography(Homography);

/// Opaque binary mask.
pub struct MgMask(BinaryMask);

/// Opaque slice plan.
pub struct MgSlicePlan(SlicePlan);

/// Opaque first-order scattering result.
pub struct MgScatterOutput(ScatterOutput);

/// One slice of a plan, in full-frame pixels.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MgSlice {
    pub x0: u32,
    pub y0: u32,
    pub width: u32,
    pub height: u32,
}

/// Scored box for `mg_nms`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MgDetection {
    pub class_id: u32,
    pub score: f64,
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

struct Failure(MgStatus, String);

impl Failure {
    fn invalid(msg: impl Into<String>) -> Self {
        Self(MgStatus::InvalidArgument, msg.into())
    }
}

impl From<HomographyError> for Failure {
    fn from(e: HomographyError) -> Self {
        let code = match e {
            HomographyError::TooFewCorrespondences(_) => MgStatus::TooFewPoints,
            HomographyError::DegenerateConfiguration(_) | HomographyError::SingularHomography => {
                MgStatus::Degenerate
            }
            HomographyError::PointAtInfinity(_) => MgStatus::PointAtInfinity,
            HomographyError::NonFinite(_) => MgStatus::InvalidArgument,
        };
        Self(code, e.to_string())
    }
}

impl From<GeoError> for Failure {
    fn from(e: GeoError) -> Self {
        let code = match e {
            GeoError::OutOfUtmDomain(_) => MgStatus::OutOfDomain,
            _ => MgStatus::InvalidArgument,
        };
        Self(code, e.to_string())
    }
}

impl From<MaskError> for Failure {
    fn from(e: MaskError) -> Self {
        let code = match e {
            MaskError::EmptyMask => MgStatus::EmptyMask,
            MaskError::DegeneratePolygon => MgStatus::Degenerate,
            _ => MgStatus::InvalidArgument,
        };
        Self(code, e.to_string())
    }
}

impl From<SliceError> for Failure {
    fn from(e: SliceError) -> Self {
        Self(MgStatus::InvalidArgument, e.to_string())
    }
}

impl From<ScatterError> for Failure {
    fn from(e: ScatterError) -> Self {
        Self(MgStatus::InvalidArgument, e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

/// Runs `f`, records any failure or panic and converts it to a status.
fn guard(f: impl FnOnce() -> Outcome) -> MgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MgStatus::Ok,
        Ok(Err(Failure(code, msg))) => {
            set_error(msg);
            code
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            MgStatus::Panic
        }
    }
}

fn out<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    // SAFETY: callers pass either null or a valid, writable pointer.
    unsafe { p.as_mut() }.ok_or_else(|| Failure(MgStatus::NullPointer, format!("{name} is null")))
}

fn obj<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    // SAFETY: non-null handles were produced by this library and not yet freed.
    unsafe { p.as_ref() }.ok_or_else(|| Failure(MgStatus::NullPointer, format!("{name} is null")))
}

fn slice<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure(MgStatus::NullPointer, format!("{name} is null")));
    }
    // SAFETY: the caller guarantees `len` readable elements at `p`.
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

fn slice_mut<'a, T>(p: *mut T, len: usize, name: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure(MgStatus::NullPointer, format!("{name} is null")));
    }
    // SAFETY: the caller guarantees `len` writable elements at `p`.
    Ok(unsafe { std::slice::from_raw_parts_mut(p, len) })
}

fn boxed<T>(slot: *mut *mut T, value: T) -> Outcome {
    *out(slot, "out")? = Box::into_raw(Box::new(value));
    Ok(())
}

fn free<T>(p: *mut T) {
    if !p.is_null() {
        // SAFETY: `p` came from `Box::into_raw` in this library.
        drop(unsafe { Box::from_raw(p) });
    }
}

fn earth(radius: f64) -> Result<EarthModel, Failure> {
    if radius > 0.0 {
        Ok(EarthModel::new(radius)?)
    } else {
        Ok(EarthModel::default())
    }
}

fn pos(lat: f64, lon: f64) -> Result<GeoPos, Failure> {
    Ok(GeoPos::new(lat, lon)?)
}

// ---- library --------------------------------------------------------------

/// NUL-terminated library version; static storage, never freed.
#[no_mangle]
pub extern "C" fn mg_version() -> *const c_char {
    static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(s) => s,
        Err(_) => panic!("version string"),
    };
    VERSION.as_ptr()
}

/// Copies the calling thread's last error message into `buf` (truncated,
/// always NUL-terminated when `len > 0`). Returns the full message length
/// excluding the terminator.
#[no_mangle]
pub unsafe extern "C" fn mg_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            // SAFETY: `buf` holds at least `len` bytes.
            unsafe {
                std::ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
                *buf.add(n) = 0;
            }
        }
        msg.len()
    })
}

// ---- homography -----------------------------------------------------------

/// Fits a homography to `n` pairs; `src` and `dst` hold `2 n` interleaved
/// `x, y` values (destination `x = lon`, `y = lat` for georeferencing).
#[no_mangle]
pub unsafe extern "C" fn mg_homography_fit(
    src: *const f64,
    dst: *const f64,
    n: usize,
    method: MgFitMethod,
    out_h: *mut *mut MgHomography,
) -> MgStatus {
    guard(|| {
        let s = slice(src, 2 * n, "src")?;
        let d = slice(dst, 2 * n, "dst")?;
        let corrs: Vec<Correspondence> = s
            .chunks_exact(2)
            .zip(d.chunks_exact(2))
            .map(|(a, b)| Correspondence::new(PlanarPoint::new(a[0], a[1]), PlanarPoint::new(b[0], b[1])))
            .collect();
        let h = match method {
            MgFitMethod::LeastSquares => homography::fit_homography_ls(&corrs)?,
            MgFitMethod::Dlt => homography::fit_homography_dlt(&corrs)?,
        };
        boxed(out_h, MgHomography(h))
    })
}

/// Builds a homography from 9 row-major entries (normalized to `h33 = 1`).
#[no_mangle]
pub unsafe extern "C" fn mg_homography_from_entries(entries: *const f64, out_h: *mut *mut MgHomography) -> MgStatus {
    guard(|| {
        let e: [f64; 9] = slice(entries, 9, "entries")?.try_into().expect("nine entries");
        boxed(out_h, MgHomography(Homography::from_row_major(&e)?))
    })
}

/// Writes the 9 row-major entries.
#[no_mangle]
pub unsafe extern "C" fn mg_homography_entries(h: *const MgHomography, entries: *mut f64) -> MgStatus {
    guard(|| {
        let h = obj(h, "h")?;
        slice_mut(entries, 9, "entries")?.copy_from_slice(&h.0.to_row_major());
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mg_homography_apply(
    h: *const MgHomography,
    x: f64,
    y: f64,
    out_x: *mut f64,
    out_y: *mut f64,
) -> MgStatus {
    guard(|| {
        let p = obj(h, "h")?.0.apply(PlanarPoint::new(x, y))?;
        *out(out_x, "out_x")? = p.x;
        *out(out_y, "out_y")? = p.y;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mg_homography_invert(h: *const MgHomography, out_h: *mut *mut MgHomography) -> MgStatus {
    guard(|| {
        let inv = obj(h, "h")?.0.invert()?;
        boxed(out_h, MgHomography(inv))
    })
}

/// Root-mean-square reprojection error over `n` interleaved pairs.
#[no_mangle]
pub unsafe extern "C" fn mg_homography_rmse(
    h: *const MgHomography,
    src: *const f64,
    dst: *const f64,
    n: usize,
    out_rmse: *mut f64,
) -> MgStatus {
    guard(|| {
        let h = obj(h, "h")?;
        let s = slice(src, 2 * n, "src")?;
        let d = slice(dst, 2 * n, "dst")?;
        let corrs: Vec<Correspondence> = s
            .chunks_exact(2)
            .zip(d.chunks_exact(2))
            .map(|(a, b)| Correspondence::new(PlanarPoint::new(a[0], a[1]), PlanarPoint::new(b[0], b[1])))
            .collect();
        *out(out_rmse, "out_rmse")? = homography::reprojection_rmse(&h.0, &corrs)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mg_homography_free(h: *mut MgHomography) {
    free(h);
}

// ---- geodesy --------------------------------------------------------------

/// Great-circle distance in meters. `radius <= 0` selects the default
/// (geocentric radius at 53.55 N).
#[no_mangle]
pub unsafe extern "C" fn mg_haversine(
    lat1: f64,
    lon1: f64,
    lat2: f64,
    lon2: f64,
    radius: f64,
    out_m: *mut f64,
) -> MgStatus {
    guard(|| {
        *out(out_m, "out_m")? = geodesy::haversine_gde(pos(lat1, lon1)?, pos(lat2, lon2)?, earth(radius)?);
        Ok(())
    })
}

/// Initial bearing in `[0, 360)` degrees clockwise from north.
#[no_mangle]
pub unsafe extern "C" fn mg_heading_angle(lat1: f64, lon1: f64, lat2: f64, lon2: f64, out_deg: *mut f64) -> MgStatus {
    guard(|| {
        *out(out_deg, "out_deg")? = geodesy::heading_angle(pos(lat1, lon1)?, pos(lat2, lon2)?)?;
        Ok(())
    })
}

/// `d^2 / 2r`.
#[no_mangle]
pub extern "C" fn mg_curvature_sagitta(d: f64, r: f64) -> f64 {
    geodesy::curvature_sagitta(d, r)
}

/// WGS84 UTM coordinates; `out_south` is 1 for the southern hemisphere.
#[no_mangle]
pub unsafe extern "C" fn mg_to_utm(
    lat: f64,
    lon: f64,
    out_easting: *mut f64,
    out_northing: *mut f64,
    out_zone: *mut u8,
    out_south: *mut i32,
) -> MgStatus {
    guard(|| {
        let u = geodesy::to_utm(pos(lat, lon)?)?;
        *out(out_easting, "out_easting")? = u.easting;
        *out(out_northing, "out_northing")? = u.northing;
        *out(out_zone, "out_zone")? = u.zone;
        *out(out_south, "out_south")? = i32::from(u.hemisphere == Hemisphere::South);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mg_from_utm(
    easting: f64,
    northing: f64,
    zone: u8,
    south: i32,
    out_lat: *mut f64,
    out_lon: *mut f64,
) -> MgStatus {
    guard(|| {
        let hemi = if south != 0 { Hemisphere::South } else { Hemisphere::North };
        let p = geodesy::from_utm(UtmPos::new(easting, northing, zone, hemi)?)?;
        *out(out_lat, "out_lat")? = p.lat;
        *out(out_lon, "out_lon")? = p.lon;
        Ok(())
    })
}

// ---- masks ----------------------------------------------------------------

/// Mask from `width * height` row-major bytes; non-zero means set.
#[no_mangle]
pub unsafe extern "C" fn mg_mask_new(width: u32, height: u32, bits: *const u8, out_mask: *mut *mut MgMask) -> MgStatus {
    guard(|| {
        let n = width as usize * height as usize;
        let b = slice(bits, n, "bits")?;
        let m = BinaryMask::from_bits(width, height, b.iter().map(|&v| v != 0).collect())?;
        boxed(out_mask, MgMask(m))
    })
}

/// Even-odd fill of a polygon given as `n_vertices` interleaved `x, y`.
#[no_mangle]
pub unsafe extern "C" fn mg_mask_from_polygon(
    xy: *const f64,
    n_vertices: usize,
    width: u32,
    height: u32,
    out_mask: *mut *mut MgMask,
) -> MgStatus {
    guard(|| {
        let poly = PolygonMask::from_flat(slice(xy, 2 * n_vertices, "xy")?)?;
        boxed(out_mask, MgMask(maskops::rasterize(&poly, width, height)?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn mg_mask_area(m: *const MgMask, out_area: *mut u64) -> MgStatus {
    guard(|| {
        *out(out_area, "out_area")? = obj(m, "mask")?.0.area();
        Ok(())
    })
}

/// Georeferencing pixel: fullest column, bottom-most set row.
#[no_mangle]
pub unsafe extern "C" fn mg_mask_georef_pixel(m: *const MgMask, out_x: *mut u32, out_y: *mut u32) -> MgStatus {
    guard(|| {
        let p = maskops::georef_pixel(&obj(m, "mask")?.0)?;
        *out(out_x, "out_x")? = p.x;
        *out(out_y, "out_y")? = p.y;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mg_mask_iou(a: *const MgMask, b: *const MgMask, out_iou: *mut f64) -> MgStatus {
    guard(|| {
        *out(out_iou, "out_iou")? = maskops::mask_iou(&obj(a, "a")?.0, &obj(b, "b")?.0)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mg_mask_free(m: *mut MgMask) {
    free(m);
}

// ---- slicing and NMS ------------------------------------------------------

#[no_mangle]
pub unsafe extern "C" fn mg_slice_plan_new(
    width: u32,
    height: u32,
    slice_width: u32,
    slice_height: u32,
    overlap: f64,
    out_plan: *mut *mut MgSlicePlan,
) -> MgStatus {
    guard(|| {
        let plan = slicemerge::compute_slice_plan(width, height, slice_width, slice_height, overlap)?;
        boxed(out_plan, MgSlicePlan(plan))
    })
}

#[no_mangle]
pub unsafe extern "C" fn mg_slice_plan_len(plan: *const MgSlicePlan, out_len: *mut usize) -> MgStatus {
    guard(|| {
        *out(out_len, "out_len")? = obj(plan, "plan")?.0.len();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mg_slice_plan_get(plan: *const MgSlicePlan, index: usize, out_slice: *mut MgSlice) -> MgStatus {
    guard(|| {
        let plan = obj(plan, "plan")?;
        let s = plan
            .0
            .slices
            .get(index)
            .ok_or_else(|| Failure::invalid(format!("slice {index} of {}", plan.0.len())))?;
        *out(out_slice, "out_slice")? = MgSlice {
            x0: s.x0,
            y0: s.y0,
            width: s.width,
            height: s.height,
        };
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mg_slice_plan_free(plan: *mut MgSlicePlan) {
    free(plan);
}

/// Greedy NMS. Writes the input indices of kept detections, best first, to
/// `out_keep` (room for `n` entries) and their count to `out_kept`.
#[no_mangle]
pub unsafe extern "C" fn mg_nms(
    dets: *const MgDetection,
    n: usize,
    tau: f64,
    class_aware: bool,
    out_keep: *mut usize,
    out_kept: *mut usize,
) -> MgStatus {
    guard(|| {
        let d = slice(dets, n, "dets")?;
        let preds = d
            .iter()
            .map(|d| {
                let b = BBox::new(d.x_min, d.y_min, d.x_max, d.y_max).map_err(|e| Failure::invalid(e.to_string()))?;
                Ok(Prediction::new(d.class_id, d.score, b))
            })
            .collect::<Result<Vec<_>, Failure>>()?;
        let outcome = slicemerge::nms_clusters(&preds, tau, class_aware)?;
        let keep = slice_mut(out_keep, n, "out_keep")?;
        keep[..outcome.kept.len()].copy_from_slice(&outcome.kept);
        *out(out_kept, "out_kept")? = outcome.kept.len();
        Ok(())
    })
}

/// Circular median of `n` compass angles (degrees); ties go to the smaller.
#[no_mangle]
pub unsafe extern "C" fn mg_circular_median(angles: *const f64, n: usize, out_deg: *mut f64) -> MgStatus {
    guard(|| {
        let a = slice(angles, n, "angles")?;
        if a.iter().any(|v| !(0.0..360.0).contains(v)) {
            return Err(Failure::invalid("angles must lie in [0, 360)"));
        }
        *out(out_deg, "out_deg")? =
            motionheading::circular_median(a).ok_or_else(|| Failure::invalid("no angles"))?;
        Ok(())
    })
}

// ---- scattering -----------------------------------------------------------

/// First-order scattering of a row-major `width x height` image with a Morlet
/// bank of `scales` scales and `orientations` orientations. `kernel_size` 0
/// picks a size covering the low-pass filter.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn mg_scatter(
    image: *const f64,
    width: usize,
    height: usize,
    scales: usize,
    orientations: usize,
    kernel_size: usize,
    downsample: bool,
    out_s: *mut *mut MgScatterOutput,
) -> MgStatus {
    guard(|| {
        let n = width
            .checked_mul(height)
            .ok_or_else(|| Failure::invalid("image size overflows"))?;
        let data = slice(image, n, "image")?.to_vec();
        let img = scatter2d::RealMap::new(width, height, data)?;
        let size = if kernel_size == 0 { default_kernel_size(scales) } else { kernel_size };
        let bank = scatter2d::build_morlet_bank(scales, orientations, size)?;
        let s = scatter2d::scatter_order1(&img, &bank, downsample)?;
        boxed(out_s, MgScatterOutput(s))
    })
}

/// Channel count (`J L + 1`) and per-channel map size.
#[no_mangle]
pub unsafe extern "C" fn mg_scatter_shape(
    s: *const MgScatterOutput,
    out_channels: *mut usize,
    out_width: *mut usize,
    out_height: *mut usize,
) -> MgStatus {
    guard(|| {
        let s = &obj(s, "s")?.0;
        *out(out_channels, "out_channels")? = s.channel_count();
        *out(out_width, "out_width")? = s.out_width;
        *out(out_height, "out_height")? = s.out_height;
        Ok(())
    })
}

/// Copies channel `index` (0 is the low-pass map) into `buf` of `len` values.
#[no_mangle]
pub unsafe extern "C" fn mg_scatter_channel(
    s: *const MgScatterOutput,
    index: usize,
    buf: *mut f64,
    len: usize,
) -> MgStatus {
    guard(|| {
        let s = &obj(s, "s")?.0;
        let map = s
            .channels()
            .nth(index)
            .ok_or_else(|| Failure::invalid(format!("channel {index} of {}", s.channel_count())))?;
        if len < map.data.len() {
            return Err(Failure(
                MgStatus::BufferTooSmall,
                format!("need {} values, buffer holds {len}", map.data.len()),
            ));
        }
        slice_mut(buf, map.data.len(), "buf")?.copy_from_slice(&map.data);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mg_scatter_free(s: *mut MgScatterOutput) {
    free(s);
}
