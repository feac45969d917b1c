//! Spherical distance and bearing, WGS84 UTM projection, and map markers.
//!
//! Angles are degrees; bearings are clockwise from true north in `[0, 360)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// WGS84 semi-major axis in meters.
pub const WGS84_A: f64 = 6_378_137.0;
/// WGS84 flattening.
pub const WGS84_F: f64 = 1.0 / 298.257_223_563;
/// Latitude used for the default earth radius (Bremerhaven).
pub const BREMERHAVEN_LAT: f64 = 53.55;

const UTM_K0: f64 = 0.9996;
const UTM_FALSE_EASTING: f64 = 500_000.0;
const UTM_FALSE_NORTHING_SOUTH: f64 = 10_000_000.0;
const UTM_MAX_LAT: f64 = 84.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("latitude {0} outside [-90, 90]")]
    InvalidLatitude(f64),
    #[error("longitude {0} outside [-180, 180]")]
    InvalidLongitude(f64),
    #[error("earth radius {0} m outside (6.3e6, 6.4e6)")]
    InvalidRadius(f64),
    #[error("heading is undefined between coincident points")]
    CoincidentPoints,
    #[error("outside the UTM domain: {0}")]
    OutOfUtmDomain(String),
}

pub type Result<T> = std::result::Result<T, GeoError>;

/// Geographic position in decimal degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPos {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPos {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !(lat.is_finite() && (-90.0..=90.0).contains(&lat)) {
            return Err(GeoError::InvalidLatitude(lat));
        }
        if !(lon.is_finite() && (-180.0..=180.0).contains(&lon)) {
            return Err(GeoError::InvalidLongitude(lon));
        }
        Ok(Self { lat, lon })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Hemisphere {
    North,
    South,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtmPos {
    pub easting: f64,
    pub northing: f64,
    pub zone: u8,
    pub hemisphere: Hemisphere,
}

impl UtmPos {
    pub fn new(easting: f64, northing: f64, zone: u8, hemisphere: Hemisphere) -> Result<Self> {
        if !(1..=60).contains(&zone) {
            return Err(GeoError::OutOfUtmDomain(format!("zone {zone}")));
        }
        if !(easting.is_finite() && (100_000.0..=900_000.0).contains(&easting)) {
            return Err(GeoError::OutOfUtmDomain(format!("easting {easting}")));
        }
        if !(northing.is_finite() && (0.0..=10_000_000.0).contains(&northing)) {
            return Err(GeoError::OutOfUtmDomain(format!("northing {northing}")));
        }
        Ok(Self {
            easting,
            northing,
            zone,
            hemisphere,
        })
    }
}

/// Sphere used for haversine distances and destination points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarthModel {
    radius: f64,
}

impl EarthModel {
    pub fn new(radius: f64) -> Result<Self> {
        if !(radius > 6.3e6 && radius < 6.4e6) {
            return Err(GeoError::InvalidRadius(radius));
        }
        Ok(Self { radius })
    }

    /// Geocentric WGS84 radius at the given latitude.
    pub fn geocentric_at(lat_deg: f64) -> Result<Self> {
        let a = WGS84_A;
        let b = WGS84_A * (1.0 - WGS84_F);
        let (s, c) = lat_deg.to_radians().sin_cos();
        let num = (a * a * c).powi(2) + (b * b * s).powi(2);
        let den = (a * c).powi(2) + (b * s).powi(2);
        Self::new((num / den).sqrt())
    }

    /// Geocentric radius at Bremerhaven (53.55 N).
    pub fn bremerhaven() -> Self {
        Self::geocentric_at(BREMERHAVEN_LAT).expect("radius within bounds")
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }
}

impl Default for EarthModel {
    fn default() -> Self {
        Self::bremerhaven()
    }
}

/// Great-circle distance in meters (haversine form).
pub fn haversine_gde(a: GeoPos, b: GeoPos, earth: EarthModel) -> f64 {
    let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = (a.lat - b.lat).abs().to_radians();
    let dlambda = (a.lon - b.lon).abs().to_radians();
    let h = (dphi / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * earth.radius * h.sqrt().min(1.0).asin()
}

fn wrap_degrees(deg: f64) -> f64 {
    let w = deg.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if w >= 360.0 {
        0.0
    } else {
        w
    }
}

/// Initial great-circle bearing from `from` to `to`.
pub fn heading_angle(from: GeoPos, to: GeoPos) -> Result<f64> {
    if from.lat == to.lat && from.lon == to.lon {
        return Err(GeoError::CoincidentPoints);
    }
    let (p1, p2) = (from.lat.to_radians(), to.lat.to_radians());
    let dl = (to.lon - from.lon).to_radians();
    let y = dl.sin() * p2.cos();
    let x = p1.cos() * p2.sin() - p1.sin() * p2.cos() * dl.cos();
    Ok(wrap_degrees(y.atan2(x).to_degrees()))
}

/// Point reached travelling `distance` meters from `start` on the initial
/// bearing `bearing_deg` along a great circle.
pub fn destination_point(start: GeoPos, bearing_deg: f64, distance: f64, earth: EarthModel) -> GeoPos {
    let delta = distance / earth.radius;
    let theta = bearing_deg.to_radians();
    let p1 = start.lat.to_radians();
    let l1 = start.lon.to_radians();
    let sin_p2 = p1.sin() * delta.cos() + p1.cos() * delta.sin() * theta.cos();
    let p2 = sin_p2.clamp(-1.0, 1.0).asin();
    let l2 = l1
        + (theta.sin() * delta.sin() * p1.cos()).atan2(delta.cos() - p1.sin() * sin_p2);
    let lon = (l2.to_degrees() + 540.0).rem_euclid(360.0) - 180.0;
    GeoPos {
        lat: p2.to_degrees(),
        lon,
    }
}

/// Height of the circular segment over a chord-like distance `d` on a sphere
/// of radius `r`: `d^2 / 2r`.
pub fn curvature_sagitta(d: f64, r: f64) -> f64 {
    d * d / (2.0 * r)
}

/// Isosceles triangle marker: apex at distance `size` along `heading_deg`,
/// base vertices at distance `size / 2` perpendicular to the heading on
/// either side of `center`. Returned as `[apex, left, right]`.
pub fn heading_marker(center: GeoPos, heading_deg: f64, size: f64, earth: EarthModel) -> [GeoPos; 3] {
    let apex = destination_point(center, heading_deg, size, earth);
    let left = destination_point(center, wrap_degrees(heading_deg - 90.0), size / 2.0, earth);
    let right = destination_point(center, wrap_degrees(heading_deg + 90.0), size / 2.0, earth);
    [apex, left, right]
}

/// UTM zone by the plain 6-degree formula (no Norway/Svalbard exceptions).
pub fn utm_zone(lon: f64) -> u8 {
    let z = ((lon + 180.0) / 6.0).floor() as i64 + 1;
    z.clamp(1, 60) as u8
}

fn central_meridian(zone: u8) -> f64 {
    f64::from(zone) * 6.0 - 183.0
}

/// Krüger series coefficients for the transverse Mercator projection,
/// expanded to sixth order in the third flattening `n`.
struct TmSeries {
    big_a: f64,
    alpha: [f64; 6],
    beta: [f64; 6],
    e: f64,
}

/// `tau' = tan(conformal latitude)` from `tau = tan(latitude)`.
fn conformal_tau(tau: f64, e: f64) -> f64 {
    let sigma = (e * (e * tau / (1.0 + tau * tau).sqrt()).atanh()).sinh();
    tau * (1.0 + sigma * sigma).sqrt() - sigma * (1.0 + tau * tau).sqrt()
}

/// Inverts [`conformal_tau`] by Newton's method.
fn geodetic_tau(tau_p: f64, e: f64) -> f64 {
    let e2m = 1.0 - e * e;
    let mut tau = tau_p;
    for _ in 0..8 {
        let tp = conformal_tau(tau, e);
        let step = (tau_p - tp) / (1.0 + tp * tp).sqrt() * (1.0 + e2m * tau * tau)
            / (e2m * (1.0 + tau * tau).sqrt());
        tau += step;
        if step.abs() <= 1e-15 * tau.abs().max(1.0) {
            break;
        }
    }
    tau
}

fn tm_series() -> TmSeries {
    let f = WGS84_F;
    let n = f / (2.0 - f);
    let n2 = n * n;
    let n3 = n2 * n;
    let n4 = n3 * n;
    let n5 = n4 * n;
    let n6 = n5 * n;
    let big_a = WGS84_A / (1.0 + n) * (1.0 + n2 / 4.0 + n4 / 64.0 + n6 / 256.0);
    let alpha = [
        n / 2.0 - 2.0 * n2 / 3.0 + 5.0 * n3 / 16.0 + 41.0 * n4 / 180.0 - 127.0 * n5 / 288.0
            + 7891.0 * n6 / 37800.0,
        13.0 * n2 / 48.0 - 3.0 * n3 / 5.0 + 557.0 * n4 / 1440.0 + 281.0 * n5 / 630.0
            - 1_983_433.0 * n6 / 1_935_360.0,
        61.0 * n3 / 240.0 - 103.0 * n4 / 140.0 + 15061.0 * n5 / 26880.0
            + 167_603.0 * n6 / 181_440.0,
        49561.0 * n4 / 161_280.0 - 179.0 * n5 / 168.0 + 6_601_661.0 * n6 / 7_257_600.0,
        34729.0 * n5 / 80640.0 - 3_418_889.0 * n6 / 1_995_840.0,
        212_378_941.0 * n6 / 319_334_400.0,
    ];
    let beta = [
        n / 2.0 - 2.0 * n2 / 3.0 + 37.0 * n3 / 96.0 - n4 / 360.0 - 81.0 * n5 / 512.0
            + 96199.0 * n6 / 604_800.0,
        n2 / 48.0 + n3 / 15.0 - 437.0 * n4 / 1440.0 + 46.0 * n5 / 105.0
            - 1_118_711.0 * n6 / 3_870_720.0,
        17.0 * n3 / 480.0 - 37.0 * n4 / 840.0 - 209.0 * n5 / 4480.0 + 5569.0 * n6 / 90720.0,
        4397.0 * n4 / 161_280.0 - 11.0 * n5 / 504.0 - 830_251.0 * n6 / 7_257_600.0,
        4583.0 * n5 / 161_280.0 - 108_847.0 * n6 / 3_991_680.0,
        20_648_693.0 * n6 / 638_668_800.0,
    ];
    TmSeries {
        big_a,
        alpha,
        beta,
        e: (f * (2.0 - f)).sqrt(),
    }
}

/// Projects a WGS84 position into its standard UTM zone.
pub fn to_utm(p: GeoPos) -> Result<UtmPos> {
    GeoPos::new(p.lat, p.lon)?;
    if p.lat.abs() > UTM_MAX_LAT {
        return Err(GeoError::OutOfUtmDomain(format!("latitude {}", p.lat)));
    }
    let zone = utm_zone(p.lon);
    let s = tm_series();
    let phi = p.lat.to_radians();
    let lambda = (p.lon - central_meridian(zone)).to_radians();

    let tau_p = conformal_tau(phi.tan(), s.e);

    let xi_p = tau_p.atan2(lambda.cos());
    let eta_p = (lambda.sin() / (tau_p * tau_p + lambda.cos().powi(2)).sqrt()).asinh();

    let mut xi = xi_p;
    let mut eta = eta_p;
    for (j, a) in s.alpha.iter().enumerate() {
        let k = 2.0 * (j + 1) as f64;
        xi += a * (k * xi_p).sin() * (k * eta_p).cosh();
        eta += a * (k * xi_p).cos() * (k * eta_p).sinh();
    }
    let easting = UTM_FALSE_EASTING + UTM_K0 * s.big_a * eta;
    let mut northing = UTM_K0 * s.big_a * xi;
    let hemisphere = if p.lat >= 0.0 {
        Hemisphere::North
    } else {
        northing += UTM_FALSE_NORTHING_SOUTH;
        Hemisphere::South
    };
    UtmPos::new(easting, northing, zone, hemisphere)
}

/// Inverse of [`to_utm`].
pub fn from_utm(u: UtmPos) -> Result<GeoPos> {
    let u = UtmPos::new(u.easting, u.northing, u.zone, u.hemisphere)?;
    let s = tm_series();
    let northing = match u.hemisphere {
        Hemisphere::North => u.northing,
        Hemisphere::South => u.northing - UTM_FALSE_NORTHING_SOUTH,
    };
    let xi = northing / (UTM_K0 * s.big_a);
    let eta = (u.easting - UTM_FALSE_EASTING) / (UTM_K0 * s.big_a);

    let mut xi_p = xi;
    let mut eta_p = eta;
    for (j, b) in s.beta.iter().enumerate() {
        let k = 2.0 * (j + 1) as f64;
        xi_p -= b * (k * xi).sin() * (k * eta).cosh();
        eta_p -= b * (k * xi).cos() * (k * eta).sinh();
    }
    let tau_p = xi_p.sin() / (eta_p.sinh().powi(2) + xi_p.cos().powi(2)).sqrt();
    let phi = geodetic_tau(tau_p, s.e).atan();
    let lambda = eta_p.sinh().atan2(xi_p.cos());
    let lat = phi.to_degrees();
    let lon = central_meridian(u.zone) + lambda.to_degrees();
    let lon = if lon > 180.0 {
        lon - 360.0
    } else if lon < -180.0 {
        lon + 360.0
    } else {
        lon
    };
    if lat.abs() > UTM_MAX_LAT + 1e-9 {
        return Err(GeoError::OutOfUtmDomain(format!("latitude {lat}")));
    }
    Ok(GeoPos { lat, lon })
}
