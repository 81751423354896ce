//! Track-to-grid collocation: project profiler footprints onto the imager's
//! fixed grid, pick the nearest pixel, and keep matches that satisfy the
//! spatial and temporal thresholds.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geodesy::{
    forward, fractional_index, pixel_center, EllipsoidConsts, GeodeticPoint, GridParams, PixelIndex, ScanAngle,
};
use crate::granule::{
    params, ArrayData, FormatTag, Geoloc, Granule, GranuleError, GranuleMeta, ImageWindow, ParamArray, TimeAxis,
};
use crate::time::UtcMicros;

/// Mean Earth radius used for great-circle distances, km.
pub const MEAN_EARTH_RADIUS_KM: f64 = 6371.0088;

pub const DEFAULT_D_MAX_KM: f64 = 1.1;
pub const DEFAULT_DT_MAX_S: f64 = 900.0;

/// Largest window side accepted by [`collocate_bruteforce`].
pub const BRUTEFORCE_MAX_SIDE: u32 = 512;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CollocError {
    #[error("image band {image} does not match configured band {config}")]
    BandMismatch { image: u8, config: u8 },
    #[error("expected a common-format granule, got {0}")]
    FormatMismatch(FormatTag),
    #[error("granule is not a fixed-grid image")]
    NotAnImage,
    #[error("granule is not a track")]
    NotATrack,
    #[error("missing parameter {0:?}")]
    MissingParameter(String),
    #[error("scene side {0} exceeds the brute-force limit of {BRUTEFORCE_MAX_SIDE}")]
    SceneTooLarge(u32),
    #[error("invalid track profile: {0}")]
    InvalidProfile(String),
    #[error("invalid collocation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Granule(#[from] GranuleError),
}

pub type Result<T> = std::result::Result<T, CollocError>;

/// Haversine distance on the mean sphere, km.
pub fn great_circle_km(p: &GeodeticPoint, q: &GeodeticPoint) -> f64 {
    let dlat = q.lat - p.lat;
    let dlon = q.lon - p.lon;
    let a = (dlat / 2.0).sin().powi(2) + p.lat.cos() * q.lat.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * MEAN_EARTH_RADIUS_KM * a.sqrt().min(1.0).asin()
}

/// One profiler data point.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackProfile {
    pub profile_id: i64,
    pub time: UtcMicros,
    pub point: GeodeticPoint,
    /// Bin heights in meters, strictly ascending.
    pub heights: Vec<f32>,
    /// One class label per height bin.
    pub cloud_class: Vec<u8>,
}

impl TrackProfile {
    pub fn new(
        profile_id: i64,
        time: UtcMicros,
        point: GeodeticPoint,
        heights: Vec<f32>,
        cloud_class: Vec<u8>,
    ) -> Result<Self> {
        let p = TrackProfile { profile_id, time, point, heights, cloud_class };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.heights.len() != self.cloud_class.len() {
            return Err(CollocError::InvalidProfile(format!(
                "profile {}: {} heights but {} class labels",
                self.profile_id,
                self.heights.len(),
                self.cloud_class.len()
            )));
        }
        if self.heights.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(CollocError::InvalidProfile(format!(
                "profile {}: heights not strictly ascending",
                self.profile_id
            )));
        }
        Ok(())
    }
}

/// Unpacks a common-format track granule into profiles. Profile ids come from
/// the `profile_id` array when present, otherwise from the position.
pub fn profiles_from_granule(g: &Granule) -> Result<Vec<TrackProfile>> {
    if g.format() != FormatTag::ExtCCommon {
        return Err(CollocError::FormatMismatch(g.format()));
    }
    let (Geoloc::Track(points), TimeAxis::Profiles(times)) = (g.geoloc(), g.time()) else {
        return Err(CollocError::NotATrack);
    };
    let m = points.len();
    let ids: Vec<i64> = match g.param(params::PROFILE_ID).map(|p| &p.data) {
        Some(ArrayData::I64(v)) => v.clone(),
        Some(_) => return Err(CollocError::MissingParameter("profile_id as i64".into())),
        None => (0..m as i64).collect(),
    };
    let heights = g.param(params::HEIGHTS);
    let classes = g.param(params::CLOUD_CLASS);
    let bins = |p: Option<&ParamArray>| p.map_or(0, |a| a.shape.get(1).copied().unwrap_or(1));
    let (nh, nc) = (bins(heights), bins(classes));
    let heights = match heights.map(|p| &p.data) {
        Some(ArrayData::F32(v)) => v.as_slice(),
        None => &[],
        Some(_) => return Err(CollocError::MissingParameter("heights_m as f32".into())),
    };
    let classes = match classes.map(|p| &p.data) {
        Some(ArrayData::U8(v)) => v.as_slice(),
        None => &[],
        Some(_) => return Err(CollocError::MissingParameter("cloud_class as u8".into())),
    };
    (0..m)
        .map(|i| {
            TrackProfile::new(
                ids[i],
                times[i],
                points[i],
                heights.get(i * nh..(i + 1) * nh).unwrap_or(&[]).to_vec(),
                classes.get(i * nc..(i + 1) * nc).unwrap_or(&[]).to_vec(),
            )
        })
        .collect()
}

/// Packs profiles into a common-format track granule. All profiles must have
/// the same number of height bins.
pub fn track_granule(meta: GranuleMeta, profiles: &[TrackProfile]) -> Result<Granule> {
    let m = profiles.len();
    let bins = profiles.first().map_or(0, |p| p.heights.len());
    if let Some(p) = profiles.iter().find(|p| p.heights.len() != bins) {
        return Err(CollocError::InvalidProfile(format!(
            "profile {} has {} bins, expected {bins}",
            p.profile_id,
            p.heights.len()
        )));
    }
    let params = vec![
        ParamArray::new(params::PROFILE_ID, vec![m], ArrayData::I64(profiles.iter().map(|p| p.profile_id).collect()))?,
        ParamArray::new(
            params::HEIGHTS,
            vec![m, bins],
            ArrayData::F32(profiles.iter().flat_map(|p| p.heights.iter().copied()).collect()),
        )?,
        ParamArray::new(
            params::CLOUD_CLASS,
            vec![m, bins],
            ArrayData::U8(profiles.iter().flat_map(|p| p.cloud_class.iter().copied()).collect()),
        )?,
    ];
    Ok(Granule::new(
        meta,
        TimeAxis::Profiles(profiles.iter().map(|p| p.time).collect()),
        Geoloc::Track(profiles.iter().map(|p| p.point).collect()),
        params,
    )?)
}

/// Collocation thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollocConfig {
    pub band: u8,
    #[serde(default = "default_d_max")]
    pub d_max_km: f64,
    #[serde(default = "default_dt_max")]
    pub dt_max_s: f64,
}

fn default_d_max() -> f64 {
    DEFAULT_D_MAX_KM
}

fn default_dt_max() -> f64 {
    DEFAULT_DT_MAX_S
}

impl CollocConfig {
    pub fn new(band: u8) -> Self {
        CollocConfig { band, d_max_km: DEFAULT_D_MAX_KM, dt_max_s: DEFAULT_DT_MAX_S }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=16).contains(&self.band) {
            return Err(CollocError::InvalidConfig(format!("band {} outside 1..=16", self.band)));
        }
        if !(self.d_max_km > 0.0 && self.d_max_km.is_finite()) {
            return Err(CollocError::InvalidConfig("d_max_km must be positive".into()));
        }
        if !(self.dt_max_s >= 0.0 && self.dt_max_s.is_finite()) {
            return Err(CollocError::InvalidConfig("dt_max_s must be non-negative".into()));
        }
        Ok(())
    }

    fn dt_max_us(&self) -> i64 {
        (self.dt_max_s * 1e6).round() as i64
    }
}

/// A matched profile/pixel pair. Angles are in degrees; this is the product
/// record written by the loader.
#[derive(Debug, Clone, PartialEq)]
pub struct CollocatedPixel {
    pub profile_id: i64,
    pub track_time: UtcMicros,
    pub track_lat_deg: f64,
    pub track_lon_deg: f64,
    pub band: u8,
    pub pixel_row: u32,
    pub pixel_col: u32,
    pub pixel_lat_deg: f64,
    pub pixel_lon_deg: f64,
    pub radiance: f32,
    pub dist_km: f64,
    pub dt_s: f64,
    pub heights_m: Vec<f32>,
    pub cloud_class: Vec<u8>,
}

impl CollocatedPixel {
    /// Field-wise equality that treats NaN radiance bit patterns as values.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.radiance.to_bits() == other.radiance.to_bits()
            && CollocatedPixel { radiance: 0.0, ..self.clone() } == CollocatedPixel { radiance: 0.0, ..other.clone() }
    }
}

/// Per-reason counts of profiles that produced no record.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Drops {
    pub invisible: usize,
    pub dt: usize,
    /// No pixel center within `d_max` (including profiles off the image window).
    pub dist: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Collocation {
    pub records: Vec<CollocatedPixel>,
    pub drops: Drops,
}

impl Collocation {
    pub fn summary(&self) -> String {
        format!(
            "records={} dropped_invisible={} dropped_dt={} dropped_dist={}",
            self.records.len(),
            self.drops.invisible,
            self.drops.dt,
            self.drops.dist
        )
    }
}

/// Projects each profile onto scan angles; invisible profiles are dropped and
/// counted.
pub fn transform_track(track: &[TrackProfile], consts: &EllipsoidConsts) -> (Vec<(i64, ScanAngle)>, usize) {
    let mut out = Vec::with_capacity(track.len());
    let mut dropped = 0;
    for p in track {
        match forward(&p.point, consts) {
            Ok(a) => out.push((p.profile_id, a)),
            Err(_) => dropped += 1,
        }
    }
    (out, dropped)
}

struct Scene<'a> {
    grid: GridParams,
    consts: EllipsoidConsts,
    window: ImageWindow,
    time: UtcMicros,
    radiance: &'a [f32],
}

fn scene<'a>(image: &'a Granule, cfg: &CollocConfig) -> Result<Scene<'a>> {
    cfg.validate()?;
    if image.format() != FormatTag::ExtCCommon {
        return Err(CollocError::FormatMismatch(image.format()));
    }
    let Geoloc::Grid { grid, consts, window } = image.geoloc() else {
        return Err(CollocError::NotAnImage);
    };
    if grid.band != cfg.band {
        return Err(CollocError::BandMismatch { image: grid.band, config: cfg.band });
    }
    let time = image.image_time().ok_or(CollocError::NotAnImage)?;
    let radiance = image.radiance().ok_or_else(|| CollocError::MissingParameter(params::RADIANCE.into()))?;
    Ok(Scene { grid: *grid, consts: *consts, window: *window, time, radiance })
}

enum Outcome {
    Matched(CollocatedPixel),
    Invisible,
    Late,
    Far,
}

fn tally(outcomes: Vec<Outcome>) -> Collocation {
    let mut c = Collocation::default();
    for o in outcomes {
        match o {
            Outcome::Matched(r) => c.records.push(r),
            Outcome::Invisible => c.drops.invisible += 1,
            Outcome::Late => c.drops.dt += 1,
            Outcome::Far => c.drops.dist += 1,
        }
    }
    c
}

fn sorted_by_id(track: &[TrackProfile]) -> Vec<&TrackProfile> {
    let mut v: Vec<&TrackProfile> = track.iter().collect();
    v.sort_by_key(|p| p.profile_id);
    v
}

/// Temporal and visibility gates shared by both matchers.
fn gate(p: &TrackProfile, s: &Scene, cfg: &CollocConfig) -> std::result::Result<ScanAngle, Outcome> {
    if (p.time.0 - s.time.0).abs() > cfg.dt_max_us() {
        return Err(Outcome::Late);
    }
    forward(&p.point, &s.consts).map_err(|_| Outcome::Invisible)
}

fn record(p: &TrackProfile, s: &Scene, pix: PixelIndex, center: GeodeticPoint, dist_km: f64) -> CollocatedPixel {
    let off = s.window.offset(pix.row, pix.col).expect("pixel inside window");
    CollocatedPixel {
        profile_id: p.profile_id,
        track_time: p.time,
        track_lat_deg: p.point.lat_deg(),
        track_lon_deg: p.point.lon_deg(),
        band: s.grid.band,
        pixel_row: pix.row,
        pixel_col: pix.col,
        pixel_lat_deg: center.lat_deg(),
        pixel_lon_deg: center.lon_deg(),
        radiance: s.radiance[off],
        dist_km,
        dt_s: (p.time.0 - s.time.0).abs() as f64 / 1e6,
        heights_m: p.heights.clone(),
        cloud_class: p.cloud_class.clone(),
    }
}

/// Neighborhood half-width (in pixels) that must be searched around the
/// rounded index so that every pixel center within `d_max` is seen. The
/// nadir ground sample distance is the smallest pixel spacing on the disk.
fn search_radius(s: &Scene, cfg: &CollocConfig) -> i64 {
    let gsd_km = s.grid.delta * s.consts.satellite_height() / 1000.0;
    let reach = cfg.d_max_km / gsd_km * 1.01;
    ((reach + 0.5).floor() as i64).max(1)
}

fn match_profile(p: &TrackProfile, s: &Scene, cfg: &CollocConfig, radius: i64) -> Outcome {
    let scan = match gate(p, s, cfg) {
        Ok(a) => a,
        Err(o) => return o,
    };
    if s.window.is_empty() {
        return Outcome::Far;
    }
    let (rf, cf) = fractional_index(&scan, &s.grid);
    let w = &s.window;
    let (rmin, rmax) = (i64::from(w.row0), i64::from(w.row0) + i64::from(w.rows) - 1);
    let (cmin, cmax) = (i64::from(w.col0), i64::from(w.col0) + i64::from(w.cols) - 1);
    let r = (rf.round() as i64).clamp(rmin, rmax);
    let c = (cf.round() as i64).clamp(cmin, cmax);

    let mut best: Option<(f64, PixelIndex, GeodeticPoint)> = None;
    for row in (r - radius).max(rmin)..=(r + radius).min(rmax) {
        for col in (c - radius).max(cmin)..=(c + radius).min(cmax) {
            let pix = PixelIndex { row: row as u32, col: col as u32 };
            let Ok(center) = pixel_center(&pix, &s.grid, &s.consts) else {
                continue;
            };
            let d = great_circle_km(&p.point, &center);
            if best.as_ref().is_none_or(|(bd, ..)| d < *bd) {
                best = Some((d, pix, center));
            }
        }
    }
    match best {
        Some((d, pix, center)) if d <= cfg.d_max_km => Outcome::Matched(record(p, s, pix, center, d)),
        _ => Outcome::Far,
    }
}

/// Matches each profile to its nearest pixel center in O(1): the scan angle
/// is rounded onto the grid and a small neighborhood around it is searched.
/// Output is ordered by `profile_id`.
pub fn collocate(track: &[TrackProfile], image: &Granule, cfg: &CollocConfig) -> Result<Collocation> {
    let s = scene(image, cfg)?;
    let radius = search_radius(&s, cfg);
    let outcomes: Vec<Outcome> =
        sorted_by_id(track).into_par_iter().map(|p| match_profile(p, &s, cfg, radius)).collect();
    Ok(tally(outcomes))
}

/// Reference matcher: scans every pixel of the window for each profile.
/// Ties go to the smallest row, then the smallest column.
pub fn collocate_bruteforce(track: &[TrackProfile], image: &Granule, cfg: &CollocConfig) -> Result<Collocation> {
    let s = scene(image, cfg)?;
    let side = s.window.rows.max(s.window.cols);
    if side > BRUTEFORCE_MAX_SIDE {
        return Err(CollocError::SceneTooLarge(side));
    }
    let w = s.window;
    let centers: Vec<(PixelIndex, GeodeticPoint)> = (w.row0..w.row0 + w.rows)
        .flat_map(|row| (w.col0..w.col0 + w.cols).map(move |col| PixelIndex { row, col }))
        .filter_map(|pix| pixel_center(&pix, &s.grid, &s.consts).ok().map(|c| (pix, c)))
        .collect();
    let outcomes = sorted_by_id(track)
        .into_iter()
        .map(|p| {
            if let Err(o) = gate(p, &s, cfg) {
                return o;
            }
            let mut best: Option<(f64, PixelIndex, GeodeticPoint)> = None;
            for (pix, center) in &centers {
                let d = great_circle_km(&p.point, center);
                if best.as_ref().is_none_or(|(bd, ..)| d < *bd) {
                    best = Some((d, *pix, *center));
                }
            }
            match best {
                Some((d, pix, center)) if d <= cfg.d_max_km => Outcome::Matched(record(p, &s, pix, center, d)),
                _ => Outcome::Far,
            }
        })
        .collect();
    Ok(tally(outcomes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodesy::{grid_params_for_band, inverse, is_visible, pixel_to_scan};
    use crate::granule::{FormatTag, GranuleMeta, NameFields};

    fn deg(lat: f64, lon: f64) -> GeodeticPoint {
        GeodeticPoint::from_degrees(lat, lon).unwrap()
    }

    fn profile(id: i64, t: i64, p: GeodeticPoint) -> TrackProfile {
        TrackProfile::new(id, UtcMicros(t), p, vec![1000.0, 2000.0], vec![(id % 9) as u8, 7]).unwrap()
    }

    fn image(window: ImageWindow, values: Vec<f32>, t: i64) -> Granule {
        let grid = grid_params_for_band(13).unwrap();
        Granule::new(
            GranuleMeta {
                source_id: "test".into(),
                product: "ABI-L1b-RadF".into(),
                band: Some(13),
                t_start: UtcMicros(t),
                t_end: UtcMicros(t + 600_000_000),
                format: FormatTag::ExtCCommon,
                uri: "mem".into(),
                naming: NameFields::None,
            },
            TimeAxis::Scalar(UtcMicros(t)),
            Geoloc::Grid { grid, consts: EllipsoidConsts::default(), window },
            vec![ParamArray::new(
                params::RADIANCE,
                vec![window.rows as usize, window.cols as usize],
                ArrayData::F32(values),
            )
            .unwrap()],
        )
        .unwrap()
    }

    fn ramp(window: ImageWindow) -> Granule {
        let n = window.cols as usize;
        let v = (0..window.len()).map(|i| ((i / n) * n + i % n) as f32).collect();
        image(window, v, 0)
    }

    #[test]
    fn haversine_values() {
        let p = deg(0.0, 0.0);
        assert_eq!(great_circle_km(&p, &p), 0.0);
        let q = deg(0.0, 1.0);
        // oracle: π/180 × 6371.0088
        assert!((great_circle_km(&p, &q) - 111.195_080_233_532_9).abs() < 1e-3);
        let a = deg(12.3, -45.6);
        let b = deg(-33.0, 151.2);
        assert_eq!(great_circle_km(&a, &b), great_circle_km(&b, &a));
    }

    #[test]
    fn profile_invariants() {
        let p = deg(0.0, 0.0);
        assert!(TrackProfile::new(0, UtcMicros(0), p, vec![2.0, 1.0], vec![0, 0]).is_err());
        assert!(TrackProfile::new(0, UtcMicros(0), p, vec![1.0, 2.0], vec![0]).is_err());
    }

    #[test]
    fn transform_constant_and_empty() {
        let c = EllipsoidConsts::default();
        let nadir = GeodeticPoint { lat: 0.0, lon: c.lon0 };
        let track: Vec<_> = (0..4).map(|i| profile(i, 0, nadir)).collect();
        let (out, dropped) = transform_track(&track, &c);
        assert_eq!(dropped, 0);
        assert!(out.iter().all(|(_, a)| a.x.abs() < 1e-12 && a.y.abs() < 1e-12));
        assert_eq!(transform_track(&[], &c), (vec![], 0));
    }

    #[test]
    fn transform_across_the_limb() {
        let c = EllipsoidConsts::default();
        let track: Vec<_> = (0..40).map(|i| profile(i, 0, deg(10.0, -76.0 + 60.0 + i as f64))).collect();
        let invisible = track.iter().filter(|p| !is_visible(&p.point, &c)).count();
        assert!(invisible > 0 && invisible < track.len());
        let (out, dropped) = transform_track(&track, &c);
        assert_eq!(dropped, invisible);
        assert_eq!(out.len(), track.len() - invisible);
    }

    #[test]
    fn analytic_scene_copy_contract() {
        let g = grid_params_for_band(13).unwrap();
        let c = EllipsoidConsts::default();
        let window = ImageWindow { row0: 2700, col0: 2700, rows: 24, cols: 24 };
        let img = ramp(window);
        let track: Vec<_> = [(2712, 2712), (2705, 2715), (2720, 2701)]
            .iter()
            .enumerate()
            .map(|(i, &(r, col))| {
                let p = inverse(&pixel_to_scan(&PixelIndex { row: r, col }, &g).unwrap(), &c).unwrap();
                profile(i as i64, 1_000_000, p)
            })
            .collect();
        let out = collocate(&track, &img, &CollocConfig::new(13)).unwrap();
        assert_eq!(out.records.len(), 3);
        for r in &out.records {
            let expected = ((r.pixel_row - window.row0) * window.cols + (r.pixel_col - window.col0)) as f32;
            assert_eq!(r.radiance, expected);
            assert!(r.dist_km < 1e-6);
            assert_eq!(r.dt_s, 1.0);
        }
        assert_eq!((out.records[0].pixel_row, out.records[0].pixel_col), (2712, 2712));
    }

    #[test]
    fn temporal_threshold_boundary() {
        let g = grid_params_for_band(13).unwrap();
        let c = EllipsoidConsts::default();
        let nadir = pixel_center(&PixelIndex { row: 2712, col: 2712 }, &g, &c).unwrap();
        let img = ramp(ImageWindow { row0: 2702, col0: 2702, rows: 20, cols: 20 });
        let cfg = CollocConfig::new(13);
        let edge = profile(0, 900_000_000, nadir);
        let late = profile(1, 901_000_000, nadir);
        let early = profile(2, -901_000_000, nadir);
        let out = collocate(&[late, edge, early], &img, &cfg).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.records[0].profile_id, 0);
        assert_eq!(out.drops.dt, 2);
    }

    #[test]
    fn rejects_wrong_band_and_format() {
        let img = ramp(ImageWindow { row0: 0, col0: 0, rows: 2, cols: 2 });
        assert_eq!(
            collocate(&[], &img, &CollocConfig::new(2)),
            Err(CollocError::BandMismatch { image: 13, config: 2 })
        );
        let raw = img.clone().with_meta(GranuleMeta { format: FormatTag::ExtAGeoImage, ..img.meta().clone() }).unwrap();
        assert_eq!(
            collocate(&[], &raw, &CollocConfig::new(13)),
            Err(CollocError::FormatMismatch(FormatTag::ExtAGeoImage))
        );
    }

    #[test]
    fn single_pixel_scene() {
        let g = grid_params_for_band(13).unwrap();
        let c = EllipsoidConsts::default();
        let pix = PixelIndex { row: 1000, col: 3000 };
        let center = inverse(&pixel_to_scan(&pix, &g).unwrap(), &c).unwrap();
        let img = image(ImageWindow { row0: 1000, col0: 3000, rows: 1, cols: 1 }, vec![4.5], 0);
        let track = [profile(0, 0, center)];
        let cfg = CollocConfig::new(13);
        let brute = collocate_bruteforce(&track, &img, &cfg).unwrap();
        assert_eq!(brute.records.len(), 1);
        assert!(brute.records[0].dist_km < 1e-9);
        assert_eq!(brute, collocate(&track, &img, &cfg).unwrap());
    }

    #[test]
    fn equidistant_tie_prefers_lower_index() {
        // the sub-satellite point sits at scan (0, 0), the common corner of the
        // four central pixels, so all four centers are equidistant up to rounding
        let c = EllipsoidConsts::default();
        let g = grid_params_for_band(13).unwrap();
        let img = ramp(ImageWindow { row0: 2711, col0: 2711, rows: 2, cols: 2 });
        let p = GeodeticPoint { lat: 0.0, lon: c.lon0 };
        let cfg = CollocConfig { d_max_km: 5.0, ..CollocConfig::new(13) };
        let brute = collocate_bruteforce(&[profile(0, 0, p)], &img, &cfg).unwrap();
        let fast = collocate(&[profile(0, 0, p)], &img, &cfg).unwrap();
        let r = &brute.records[0];
        let d: Vec<f64> = [(2711, 2711), (2711, 2712), (2712, 2711), (2712, 2712)]
            .iter()
            .map(|&(row, col)| great_circle_km(&p, &pixel_center(&PixelIndex { row, col }, &g, &c).unwrap()))
            .collect();
        let min = d.iter().cloned().fold(f64::INFINITY, f64::min);
        let first = d.iter().position(|&x| x == min).unwrap();
        let expect = [(2711, 2711), (2711, 2712), (2712, 2711), (2712, 2712)][first];
        assert_eq!((r.pixel_row, r.pixel_col), expect);
        assert_eq!(brute, fast);
    }

    #[test]
    fn bruteforce_refuses_large_scene() {
        let window = ImageWindow { row0: 0, col0: 0, rows: 513, cols: 1 };
        let img = image(window, vec![0.0; 513], 0);
        assert_eq!(collocate_bruteforce(&[], &img, &CollocConfig::new(13)), Err(CollocError::SceneTooLarge(513)));
    }

    #[test]
    fn granule_round_trip_of_profiles() {
        let track: Vec<_> = (0..5).map(|i| profile(10 - i, i * 1000, deg(1.0, -70.0))).collect();
        let meta = GranuleMeta {
            source_id: "t".into(),
            product: "2B-CLDCLASS".into(),
            band: None,
            t_start: UtcMicros(0),
            t_end: UtcMicros(4000),
            format: FormatTag::ExtCCommon,
            uri: "t".into(),
            naming: NameFields::None,
        };
        let g = track_granule(meta, &track).unwrap();
        assert_eq!(profiles_from_granule(&g).unwrap(), track);
    }
}
