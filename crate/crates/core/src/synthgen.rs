//! Deterministic synthetic tracks and analytic fixed-grid scenes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::colloc::{great_circle_km, track_granule, CollocError, TrackProfile, MEAN_EARTH_RADIUS_KM};
use crate::geodesy::{grid_params_for_band, EllipsoidConsts, GeodesyError, GeodeticPoint};
use crate::granule::{
    format_abi_key, format_cpr_name, params, ArrayData, FormatTag, Geoloc, Granule, GranuleError, GranuleMeta,
    ImageWindow, NameFields, ParamArray, TimeAxis, DEFAULT_CPR_ORBIT_SECONDS,
};
use crate::time::UtcMicros;

pub const DEFAULT_GROUND_SPEED_KM_S: f64 = 7.0;
pub const DEFAULT_SPACING_KM: f64 = 1.1;
pub const HEIGHT_LADDER_M: [f32; 5] = [1000.0, 2000.0, 3000.0, 4000.0, 5000.0];
pub const DEFAULT_IMAGE_PRODUCT: &str = "ABI-L1b-RadF";
pub const DEFAULT_TRACK_PRODUCT: &str = "2B-CLDCLASS";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("invalid synthesis spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Geodesy(#[from] GeodesyError),
    #[error(transparent)]
    Granule(#[from] GranuleError),
    #[error(transparent)]
    Colloc(#[from] CollocError),
}

pub type Result<T> = std::result::Result<T, SynthError>;

/// A ground track: `count` points every `spacing_km` along the great circle
/// leaving `start` at `azimuth` (radians clockwise from north).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TrackSpecDoc", into = "TrackSpecDoc")]
pub struct TrackSpec {
    pub start: GeodeticPoint,
    pub azimuth: f64,
    pub ground_speed_km_s: f64,
    pub spacing_km: f64,
    pub count: usize,
    pub t0: UtcMicros,
    pub first_profile_id: i64,
}

/// Config form of [`TrackSpec`], angles in degrees.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrackSpecDoc {
    start_lat_deg: f64,
    start_lon_deg: f64,
    #[serde(default)]
    azimuth_deg: f64,
    #[serde(default = "default_speed")]
    ground_speed_km_s: f64,
    #[serde(default = "default_spacing")]
    spacing_km: f64,
    count: usize,
    #[serde(with = "crate::time::rfc3339")]
    t0: UtcMicros,
    #[serde(default)]
    first_profile_id: i64,
}

fn default_speed() -> f64 {
    DEFAULT_GROUND_SPEED_KM_S
}

fn default_spacing() -> f64 {
    DEFAULT_SPACING_KM
}

impl TryFrom<TrackSpecDoc> for TrackSpec {
    type Error = SynthError;

    fn try_from(d: TrackSpecDoc) -> Result<Self> {
        let spec = TrackSpec {
            start: GeodeticPoint::from_degrees(d.start_lat_deg, d.start_lon_deg)?,
            azimuth: d.azimuth_deg.to_radians(),
            ground_speed_km_s: d.ground_speed_km_s,
            spacing_km: d.spacing_km,
            count: d.count,
            t0: d.t0,
            first_profile_id: d.first_profile_id,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl From<TrackSpec> for TrackSpecDoc {
    fn from(s: TrackSpec) -> Self {
        TrackSpecDoc {
            start_lat_deg: s.start.lat_deg(),
            start_lon_deg: s.start.lon_deg(),
            azimuth_deg: s.azimuth.to_degrees(),
            ground_speed_km_s: s.ground_speed_km_s,
            spacing_km: s.spacing_km,
            count: s.count,
            t0: s.t0,
            first_profile_id: s.first_profile_id,
        }
    }
}

impl TrackSpec {
    pub fn new(start: GeodeticPoint, azimuth: f64, count: usize, t0: UtcMicros) -> Self {
        TrackSpec {
            start,
            azimuth,
            ground_speed_km_s: DEFAULT_GROUND_SPEED_KM_S,
            spacing_km: DEFAULT_SPACING_KM,
            count,
            t0,
            first_profile_id: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.spacing_km > 0.0 && self.spacing_km.is_finite()) {
            return Err(SynthError::InvalidSpec(format!("spacing {} km", self.spacing_km)));
        }
        if !(self.ground_speed_km_s > 0.0 && self.ground_speed_km_s.is_finite()) {
            return Err(SynthError::InvalidSpec(format!("ground speed {} km/s", self.ground_speed_km_s)));
        }
        if !self.azimuth.is_finite() {
            return Err(SynthError::InvalidSpec("non-finite azimuth".into()));
        }
        Ok(())
    }

    /// Seconds covered by the track.
    pub fn duration_s(&self) -> f64 {
        self.count.saturating_sub(1) as f64 * self.spacing_km / self.ground_speed_km_s
    }
}

/// Point `dist_km` from `p` along the great circle with initial bearing
/// `azimuth`, on the mean-radius sphere.
pub fn destination(p: &GeodeticPoint, azimuth: f64, dist_km: f64) -> GeodeticPoint {
    let d = dist_km / MEAN_EARTH_RADIUS_KM;
    let (sin_lat, cos_lat) = p.lat.sin_cos();
    let lat2 = (sin_lat * d.cos() + cos_lat * d.sin() * azimuth.cos()).clamp(-1.0, 1.0).asin();
    let lon2 = p.lon + (azimuth.sin() * d.sin() * cos_lat).atan2(d.cos() - sin_lat * lat2.sin());
    GeodeticPoint::new(lat2, lon2).expect("finite point on the sphere")
}

pub fn gen_track(spec: &TrackSpec) -> Result<Vec<TrackProfile>> {
    spec.validate()?;
    (0..spec.count)
        .map(|i| {
            let along = i as f64 * spec.spacing_km;
            let id = spec.first_profile_id + i as i64;
            let class = id.rem_euclid(9) as u8;
            Ok(TrackProfile::new(
                id,
                spec.t0.plus_seconds(along / spec.ground_speed_km_s),
                destination(&spec.start, spec.azimuth, along),
                HEIGHT_LADDER_M.to_vec(),
                vec![class; HEIGHT_LADDER_M.len()],
            )?)
        })
        .collect()
}

/// Analytic radiance rule over window-local indices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ValueRule {
    /// `row * cols + col`.
    Ramp,
    Constant {
        value: f32,
    },
    /// Alternating 0/1 blocks of `k` pixels.
    Checker {
        k: u32,
    },
}

impl ValueRule {
    pub fn value(&self, row: u32, col: u32, cols: u32) -> f32 {
        match *self {
            ValueRule::Ramp => (u64::from(row) * u64::from(cols) + u64::from(col)) as f32,
            ValueRule::Constant { value } => value,
            ValueRule::Checker { k } => ((row / k + col / k) % 2) as f32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub band: u8,
    pub rule: ValueRule,
    #[serde(with = "crate::time::rfc3339")]
    pub t_start: UtcMicros,
    #[serde(default = "default_scan_s")]
    pub duration_s: f64,
    /// Full disk when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<ImageWindow>,
}

fn default_scan_s() -> f64 {
    600.0
}

impl SceneSpec {
    pub fn new(band: u8, rule: ValueRule, t_start: UtcMicros) -> Self {
        SceneSpec { band, rule, t_start, duration_s: default_scan_s(), window: None }
    }

    pub fn t_end(&self) -> UtcMicros {
        self.t_start.plus_seconds(self.duration_s)
    }
}

/// Imager-source granule for `spec`, named by the imager key grammar.
pub fn gen_image(spec: &SceneSpec, consts: &EllipsoidConsts) -> Result<Granule> {
    let grid = grid_params_for_band(spec.band)?;
    let window = spec.window.unwrap_or_else(|| ImageWindow::full(&grid));
    if !window.fits(&grid) || window.is_empty() {
        return Err(SynthError::InvalidSpec(format!("window {window:?} outside the band grid")));
    }
    if let ValueRule::Checker { k: 0 } = spec.rule {
        return Err(SynthError::InvalidSpec("checker block size must be positive".into()));
    }
    if !(spec.duration_s >= 0.0 && spec.duration_s.is_finite()) {
        return Err(SynthError::InvalidSpec(format!("duration {} s", spec.duration_s)));
    }
    let t_end = spec.t_end();
    let mut meta = GranuleMeta {
        source_id: String::new(),
        product: DEFAULT_IMAGE_PRODUCT.into(),
        band: Some(spec.band),
        t_start: spec.t_start,
        t_end,
        format: FormatTag::ExtAGeoImage,
        uri: String::new(),
        naming: NameFields::Abi { scan_mode: 6, created: t_end },
    };
    meta.uri = format_abi_key(&meta)?;
    let (rows, cols) = (window.rows, window.cols);
    let mut values = Vec::with_capacity(window.len());
    for r in 0..rows {
        values.extend((0..cols).map(|c| spec.rule.value(r, c, cols)));
    }
    let radiance = ParamArray::new(params::RADIANCE, vec![rows as usize, cols as usize], ArrayData::F32(values))?;
    Ok(Granule::new(
        meta,
        TimeAxis::Scalar(spec.t_start),
        Geoloc::Grid { grid, consts: *consts, window },
        vec![radiance],
    )?)
}

/// Profiler granule metadata covering `profiles`, named by the profiler grammar
/// under its day directory.
pub fn track_meta(profiles: &[TrackProfile], format: FormatTag) -> Result<GranuleMeta> {
    let first = profiles.iter().map(|p| p.time).min().unwrap_or(UtcMicros(0));
    let t_start = UtcMicros(first.0.div_euclid(1_000_000) * 1_000_000);
    let mut meta = GranuleMeta {
        source_id: String::new(),
        product: DEFAULT_TRACK_PRODUCT.into(),
        band: None,
        t_start,
        t_end: t_start.plus_seconds(DEFAULT_CPR_ORBIT_SECONDS),
        format: FormatTag::ExtBTrackProfile,
        uri: String::new(),
        naming: NameFields::Cpr { granule: 1, release: 5, epoch: 0 },
    };
    let name = format_cpr_name(&meta)?;
    let (y, d, ..) = t_start.ordinal_fields();
    meta.uri = format!("{}/{y:04}/{d:03}/{name}", meta.product);
    meta.format = format;
    Ok(meta)
}

/// Profiler-source granule as delivered by the store: seconds of the year and
/// degree coordinates.
pub fn raw_track_granule(profiles: &[TrackProfile]) -> Result<Granule> {
    let meta = track_meta(profiles, FormatTag::ExtBTrackProfile)?;
    let year = meta.t_start.ordinal_fields().0;
    let base = UtcMicros::year_start(year).expect("year in range");
    let common = track_granule(meta.clone(), profiles)?;
    Ok(Granule::new(
        meta,
        TimeAxis::YearSeconds { year, seconds: profiles.iter().map(|p| p.time.seconds_since(base)).collect() },
        Geoloc::TrackDegrees {
            lat: profiles.iter().map(|p| p.point.lat_deg()).collect(),
            lon: profiles.iter().map(|p| p.point.lon_deg()).collect(),
        },
        common.params().to_vec(),
    )?)
}

/// Largest deviation of consecutive-point distances from the nominal spacing.
pub fn spacing_error_km(profiles: &[TrackProfile], spacing_km: f64) -> f64 {
    profiles.windows(2).map(|w| (great_circle_km(&w[0].point, &w[1].point) - spacing_km).abs()).fold(0.0, f64::max)
}
