//! Geostationary fixed-grid geometry: geodetic coordinates, scan angles and
//! pixel indices on the imager's regular scan-angle raster.
//!
//! The perspective point sits on the equator at longitude `lon0`, a distance
//! `H` from the Earth's center. A line of sight is described by the east-west
//! scan angle `x` and the north-south elevation angle `y`; the fixed grid is a
//! regular lattice in `(x, y)` with spacing `delta`.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeodesyError {
    #[error("point is behind the limb and not visible from the perspective point")]
    NotVisible,
    #[error("scan angle ({x}, {y}) does not intersect the Earth")]
    OffDisk { x: f64, y: f64 },
    #[error("unknown imager band {0}, expected 1..=16")]
    UnknownBand(u8),
    #[error("pixel ({row}, {col}) is outside the {n}x{n} grid")]
    OutOfGrid { row: i64, col: i64, n: u32 },
    #[error("invalid geodetic point: {0}")]
    InvalidPoint(String),
    #[error("invalid ellipsoid constants: {0}")]
    InvalidConsts(String),
}

pub type Result<T> = std::result::Result<T, GeodesyError>;

/// Ellipsoid and perspective-point constants.
///
/// `h` is the distance of the perspective point from the Earth's center, not
/// the height above the surface; see [`EllipsoidConsts::satellite_height`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipsoidConsts {
    pub r_eq: f64,
    pub r_pol: f64,
    pub h: f64,
    /// Longitude of the sub-satellite point, radians.
    pub lon0: f64,
}

pub const DEFAULT_R_EQ: f64 = 6_378_137.0;
pub const DEFAULT_R_POL: f64 = 6_356_752.31414;
pub const DEFAULT_H: f64 = 42_164_160.0;
pub const DEFAULT_LON0_DEG: f64 = -76.0;

impl Default for EllipsoidConsts {
    fn default() -> Self {
        EllipsoidConsts { r_eq: DEFAULT_R_EQ, r_pol: DEFAULT_R_POL, h: DEFAULT_H, lon0: DEFAULT_LON0_DEG.to_radians() }
    }
}

impl EllipsoidConsts {
    pub fn new(r_eq: f64, r_pol: f64, h: f64, lon0: f64) -> Result<Self> {
        let c = EllipsoidConsts { r_eq, r_pol, h, lon0 };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.r_eq, self.r_pol, self.h, self.lon0].iter().all(|v| v.is_finite());
        if !finite {
            return Err(GeodesyError::InvalidConsts("non-finite value".into()));
        }
        if !(0.0 < self.r_pol && self.r_pol < self.r_eq && self.r_eq < self.h) {
            return Err(GeodesyError::InvalidConsts(format!(
                "require 0 < r_pol < r_eq < h, got r_pol={} r_eq={} h={}",
                self.r_pol, self.r_eq, self.h
            )));
        }
        Ok(())
    }

    /// Height of the perspective point above the equator.
    pub fn satellite_height(&self) -> f64 {
        self.h - self.r_eq
    }

    /// First eccentricity squared, `1 - r_pol²/r_eq²`.
    pub fn e2(&self) -> f64 {
        1.0 - (self.r_pol * self.r_pol) / (self.r_eq * self.r_eq)
    }

    /// `r_eq²/r_pol²`.
    fn flattening_ratio(&self) -> f64 {
        (self.r_eq * self.r_eq) / (self.r_pol * self.r_pol)
    }

    /// Angular radius of the Earth seen from the perspective point.
    pub fn disk_angular_radius(&self) -> f64 {
        (self.r_eq / self.h).asin()
    }
}

/// Geodetic latitude/longitude in radians. Longitude is kept in `(-π, π]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeodeticPoint {
    pub lat: f64,
    pub lon: f64,
}

/// Wraps a longitude into `(-π, π]`.
pub fn normalize_lon(lon: f64) -> f64 {
    if lon > -PI && lon <= PI {
        return lon;
    }
    let wrapped = (lon + PI).rem_euclid(2.0 * PI) - PI;
    if wrapped <= -PI {
        wrapped + 2.0 * PI
    } else {
        wrapped
    }
}

impl GeodeticPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !lat.is_finite() || !lon.is_finite() {
            return Err(GeodesyError::InvalidPoint(format!("non-finite ({lat}, {lon})")));
        }
        if lat.abs() > FRAC_PI_2 {
            return Err(GeodesyError::InvalidPoint(format!("latitude {lat} rad outside [-π/2, π/2]")));
        }
        Ok(GeodeticPoint { lat, lon: normalize_lon(lon) })
    }

    pub fn from_degrees(lat_deg: f64, lon_deg: f64) -> Result<Self> {
        Self::new(lat_deg.to_radians(), lon_deg.to_radians())
    }

    pub fn lat_deg(&self) -> f64 {
        self.lat.to_degrees()
    }

    pub fn lon_deg(&self) -> f64 {
        self.lon.to_degrees()
    }
}

/// Fixed-grid scan angles, radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanAngle {
    pub x: f64,
    pub y: f64,
}

/// Geodetic to geocentric latitude.
pub fn geocentric_lat(lat: f64, consts: &EllipsoidConsts) -> f64 {
    if lat.abs() >= FRAC_PI_2 {
        return lat.signum() * FRAC_PI_2;
    }
    let ratio = (consts.r_pol * consts.r_pol) / (consts.r_eq * consts.r_eq);
    (ratio * lat.tan()).atan()
}

/// Geocentric radius of the ellipsoid at geocentric latitude `phi_c`.
pub fn geocentric_radius(phi_c: f64, consts: &EllipsoidConsts) -> f64 {
    let c = phi_c.cos();
    consts.r_pol / (1.0 - consts.e2() * c * c).sqrt()
}

/// Vector from the perspective point to the surface point, satellite frame.
fn satellite_vector(p: &GeodeticPoint, consts: &EllipsoidConsts) -> [f64; 3] {
    let phi_c = geocentric_lat(p.lat, consts);
    let r_c = geocentric_radius(phi_c, consts);
    let dlon = p.lon - consts.lon0;
    let (sin_phi, cos_phi) = phi_c.sin_cos();
    let (sin_dlon, cos_dlon) = dlon.sin_cos();
    [consts.h - r_c * cos_phi * cos_dlon, -r_c * cos_phi * sin_dlon, r_c * sin_phi]
}

/// Line of sight from the perspective point reaches `s` without first crossing
/// the ellipsoid: the view direction makes a non-negative angle with the
/// outward surface normal.
fn visible_from(s: &[f64; 3], consts: &EllipsoidConsts) -> bool {
    let [sx, sy, sz] = *s;
    sx * (consts.h - sx) >= sy * sy + consts.flattening_ratio() * sz * sz
}

pub fn is_visible(p: &GeodeticPoint, consts: &EllipsoidConsts) -> bool {
    visible_from(&satellite_vector(p, consts), consts)
}

/// Geodetic point to scan angle.
pub fn forward(p: &GeodeticPoint, consts: &EllipsoidConsts) -> Result<ScanAngle> {
    let s = satellite_vector(p, consts);
    if !visible_from(&s, consts) {
        return Err(GeodesyError::NotVisible);
    }
    let [sx, sy, sz] = s;
    let norm = (sx * sx + sy * sy + sz * sz).sqrt();
    Ok(ScanAngle { x: (-sy / norm).asin(), y: (sz / sx).atan() })
}

/// Scan angle to geodetic point, intersecting the line of sight with the
/// ellipsoid at the near root.
pub fn inverse(a: &ScanAngle, consts: &EllipsoidConsts) -> Result<GeodeticPoint> {
    if !a.x.is_finite() || !a.y.is_finite() {
        return Err(GeodesyError::OffDisk { x: a.x, y: a.y });
    }
    let k = consts.flattening_ratio();
    let (sin_x, cos_x) = a.x.sin_cos();
    let (sin_y, cos_y) = a.y.sin_cos();
    let qa = sin_x * sin_x + cos_x * cos_x * (cos_y * cos_y + k * sin_y * sin_y);
    let qb = -2.0 * consts.h * cos_x * cos_y;
    let qc = consts.h * consts.h - consts.r_eq * consts.r_eq;
    let disc = qb * qb - 4.0 * qa * qc;
    if disc < 0.0 {
        return Err(GeodesyError::OffDisk { x: a.x, y: a.y });
    }
    // near root; written as 2c / (-b + sqrt(disc)) to avoid cancellation
    let r_s = 2.0 * qc / (-qb + disc.sqrt());
    let sx = r_s * cos_x * cos_y;
    let sy = -r_s * sin_x;
    let sz = r_s * cos_x * sin_y;
    let hx = consts.h - sx;
    let lat = (k * sz / (hx * hx + sy * sy).sqrt()).atan();
    let lon = consts.lon0 - (sy / hx).atan();
    Ok(GeodeticPoint { lat, lon: normalize_lon(lon) })
}

/// Imager fixed-grid geometry for one band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridParams {
    pub band: u8,
    pub resolution_km: f64,
    pub n: u32,
    pub delta: f64,
    pub x0: f64,
    pub y0: f64,
}

/// Side length of the 2 km full-disk grid.
pub const BASE_GRID_SIDE: u32 = 5424;
/// Scan-angle step of the 2 km grid, radians.
pub const BASE_GRID_DELTA: f64 = 56e-6;

impl GridParams {
    /// Grid of side `n` spanning the same full-disk extent as the 2 km grid.
    pub fn full_disk(band: u8, resolution_km: f64, n: u32) -> Self {
        let delta = BASE_GRID_DELTA * f64::from(BASE_GRID_SIDE) / f64::from(n);
        let half = (f64::from(n) - 1.0) / 2.0;
        GridParams { band, resolution_km, n, delta, x0: -half * delta, y0: half * delta }
    }

    /// `(n - 1) / 2`, the fractional index of the grid center.
    fn center_index(&self) -> f64 {
        (f64::from(self.n) - 1.0) / 2.0
    }

    /// Half-width of the full grid in scan angle.
    pub fn half_extent(&self) -> f64 {
        f64::from(self.n) / 2.0 * self.delta
    }
}

pub fn grid_params_for_band(band: u8) -> Result<GridParams> {
    match band {
        2 => Ok(GridParams::full_disk(band, 0.5, 16272)),
        1 | 3 | 5 => Ok(GridParams::full_disk(band, 1.0, 10848)),
        4 | 6..=16 => Ok(GridParams::full_disk(band, 2.0, 5424)),
        _ => Err(GeodesyError::UnknownBand(band)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PixelIndex {
    pub row: u32,
    pub col: u32,
}

fn checked_index(row: f64, col: f64, g: &GridParams) -> Result<PixelIndex> {
    let n = f64::from(g.n);
    if !(row >= 0.0 && row < n && col >= 0.0 && col < n) {
        let clip = |v: f64| if v.is_finite() { v as i64 } else { i64::MAX };
        return Err(GeodesyError::OutOfGrid { row: clip(row), col: clip(col), n: g.n });
    }
    Ok(PixelIndex { row: row as u32, col: col as u32 })
}

/// Nearest pixel center; ties on the fractional index round away from zero.
pub fn scan_to_pixel(a: &ScanAngle, g: &GridParams) -> Result<PixelIndex> {
    let (row, col) = fractional_index(a, g);
    checked_index(row.round(), col.round(), g)
}

/// Continuous `(row, col)` position of a scan angle on the grid.
pub fn fractional_index(a: &ScanAngle, g: &GridParams) -> (f64, f64) {
    let c = g.center_index();
    (c - a.y / g.delta, a.x / g.delta + c)
}

pub fn pixel_to_scan(p: &PixelIndex, g: &GridParams) -> Result<ScanAngle> {
    if p.row >= g.n || p.col >= g.n {
        return Err(GeodesyError::OutOfGrid { row: i64::from(p.row), col: i64::from(p.col), n: g.n });
    }
    let c = g.center_index();
    Ok(ScanAngle { x: (f64::from(p.col) - c) * g.delta, y: (c - f64::from(p.row)) * g.delta })
}

/// Geodetic location of a pixel center.
pub fn pixel_center(p: &PixelIndex, g: &GridParams, consts: &EllipsoidConsts) -> Result<GeodeticPoint> {
    inverse(&pixel_to_scan(p, g)?, consts)
}
