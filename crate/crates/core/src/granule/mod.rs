//! The common granule model: acquisition time, geolocation and named parameter
//! arrays, plus normalization of source-specific granules into the common form.

mod container;
pub mod naming;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geodesy::{EllipsoidConsts, GeodeticPoint, GridParams};
use crate::time::UtcMicros;

pub use container::{read_granule, write_granule, MAGIC};
pub use naming::{
    format_abi_key, format_cpr_name, parse_abi_key, parse_cpr_name, AbiGrammar, CprGrammar, GrammarRegistry,
    NameGrammar, DEFAULT_CPR_ORBIT_SECONDS,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GranuleError {
    #[error("malformed key at byte {position}: {reason}")]
    MalformedKey { position: usize, reason: String },
    #[error("granule metadata has no band")]
    MissingBand,
    #[error("unsupported format {0:?} for this operation")]
    UnsupportedFormat(FormatTag),
    #[error("corrupt container at byte {offset}: {reason}")]
    CorruptContainer { offset: usize, reason: String },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid granule: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, GranuleError>;

pub(crate) fn malformed(position: usize, reason: impl Into<String>) -> GranuleError {
    GranuleError::MalformedKey { position, reason: reason.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FormatTag {
    #[serde(rename = "ExtA_GeoImage")]
    ExtAGeoImage,
    #[serde(rename = "ExtB_TrackProfile")]
    ExtBTrackProfile,
    #[serde(rename = "ExtC_Common")]
    ExtCCommon,
}

impl FormatTag {
    pub fn as_str(self) -> &'static str {
        match self {
            FormatTag::ExtAGeoImage => "ExtA_GeoImage",
            FormatTag::ExtBTrackProfile => "ExtB_TrackProfile",
            FormatTag::ExtCCommon => "ExtC_Common",
        }
    }
}

impl std::str::FromStr for FormatTag {
    type Err = GranuleError;

    fn from_str(s: &str) -> Result<Self> {
        [FormatTag::ExtAGeoImage, FormatTag::ExtBTrackProfile, FormatTag::ExtCCommon]
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| GranuleError::Invalid(format!("unknown format tag {s:?}")))
    }
}

impl std::fmt::Display for FormatTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Grammar-specific fields of a granule name that are not part of the common
/// metadata but are needed to reproduce the name exactly.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "grammar", rename_all = "snake_case")]
pub enum NameFields {
    #[default]
    None,
    Abi {
        scan_mode: u8,
        created: UtcMicros,
    },
    Cpr {
        granule: u32,
        release: u8,
        epoch: u8,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GranuleMeta {
    pub source_id: String,
    pub product: String,
    pub band: Option<u8>,
    pub t_start: UtcMicros,
    pub t_end: UtcMicros,
    pub format: FormatTag,
    pub uri: String,
    #[serde(default)]
    pub naming: NameFields,
}

impl GranuleMeta {
    pub fn validate(&self) -> Result<()> {
        if self.t_start > self.t_end {
            return Err(GranuleError::Invalid(format!("t_start {} after t_end {}", self.t_start, self.t_end)));
        }
        if let Some(b) = self.band {
            if !(1..=16).contains(&b) {
                return Err(GranuleError::Invalid(format!("band {b} outside 1..=16")));
            }
        }
        match (self.format, self.band) {
            (FormatTag::ExtAGeoImage, None) => Err(GranuleError::MissingBand),
            (FormatTag::ExtBTrackProfile, Some(_)) => Err(GranuleError::Invalid("track granules carry no band".into())),
            _ => Ok(()),
        }
    }

    pub fn midpoint(&self) -> UtcMicros {
        UtcMicros::midpoint(self.t_start, self.t_end)
    }

    /// Closed-interval overlap with `[t0, t1]`.
    pub fn intersects(&self, t0: UtcMicros, t1: UtcMicros) -> bool {
        self.t_start <= t1 && self.t_end >= t0
    }
}

/// Acquisition time attribute.
#[derive(Debug, Clone, PartialEq)]
pub enum TimeAxis {
    /// One instant for a whole image.
    Scalar(UtcMicros),
    /// One instant per profile.
    Profiles(Vec<UtcMicros>),
    /// Seconds elapsed since 00:00:00 UTC on January 1 of `year`, per profile.
    /// Only found in raw track granules.
    YearSeconds { year: i32, seconds: Vec<f64> },
}

impl TimeAxis {
    fn len(&self) -> Option<usize> {
        match self {
            TimeAxis::Scalar(_) => None,
            TimeAxis::Profiles(v) => Some(v.len()),
            TimeAxis::YearSeconds { seconds, .. } => Some(seconds.len()),
        }
    }
}

/// Sub-rectangle of a fixed grid, in full-grid pixel indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageWindow {
    pub row0: u32,
    pub col0: u32,
    pub rows: u32,
    pub cols: u32,
}

impl ImageWindow {
    pub fn full(grid: &GridParams) -> Self {
        ImageWindow { row0: 0, col0: 0, rows: grid.n, cols: grid.n }
    }

    pub fn contains(&self, row: u32, col: u32) -> bool {
        row >= self.row0
            && col >= self.col0
            && u64::from(row) < u64::from(self.row0) + u64::from(self.rows)
            && u64::from(col) < u64::from(self.col0) + u64::from(self.cols)
    }

    /// Row-major offset of a full-grid pixel inside the window.
    pub fn offset(&self, row: u32, col: u32) -> Option<usize> {
        self.contains(row, col).then(|| (row - self.row0) as usize * self.cols as usize + (col - self.col0) as usize)
    }

    pub fn len(&self) -> usize {
        self.rows as usize * self.cols as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn fits(&self, grid: &GridParams) -> bool {
        u64::from(self.row0) + u64::from(self.rows) <= u64::from(grid.n)
            && u64::from(self.col0) + u64::from(self.cols) <= u64::from(grid.n)
    }
}

/// Geolocation attribute.
#[derive(Debug, Clone, PartialEq)]
pub enum Geoloc {
    /// Pixels of a (windowed) fixed grid.
    Grid { grid: GridParams, consts: EllipsoidConsts, window: ImageWindow },
    /// One geodetic point per profile, radians.
    Track(Vec<GeodeticPoint>),
    /// One point per profile in degrees, as delivered by raw track sources.
    TrackDegrees { lat: Vec<f64>, lon: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
    I32,
    I64,
    U8,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F32 | DType::I32 => 4,
            DType::F64 | DType::I64 => 8,
            DType::U8 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    I32(Vec<i32>),
    I64(Vec<i64>),
    U8(Vec<u8>),
}

impl ArrayData {
    pub fn dtype(&self) -> DType {
        match self {
            ArrayData::F32(_) => DType::F32,
            ArrayData::F64(_) => DType::F64,
            ArrayData::I32(_) => DType::I32,
            ArrayData::I64(_) => DType::I64,
            ArrayData::U8(_) => DType::U8,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ArrayData::F32(v) => v.len(),
            ArrayData::F64(v) => v.len(),
            ArrayData::I32(v) => v.len(),
            ArrayData::I64(v) => v.len(),
            ArrayData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Bitwise equality, so that NaN payloads compare equal to themselves.
    pub fn bit_eq(&self, other: &ArrayData) -> bool {
        match (self, other) {
            (ArrayData::F32(a), ArrayData::F32(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            (ArrayData::F64(a), ArrayData::F64(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            (a, b) => a == b,
        }
    }
}

/// Canonical fill for floating-point parameters.
pub const FILL_F32: f32 = f32::NAN;
/// Canonical fill for class-label parameters.
pub const FILL_U8: u8 = 255;

/// One named parameter array. The first axis runs over profiles for tracks;
/// images use `[rows, cols]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamArray {
    pub name: String,
    pub shape: Vec<usize>,
    /// Source-declared fill value, if it differs from the canonical one.
    pub fill: Option<f64>,
    pub data: ArrayData,
}

impl ParamArray {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: ArrayData) -> Result<Self> {
        let p = ParamArray { name: name.into(), shape, fill: None, data };
        p.check_len()?;
        Ok(p)
    }

    pub fn with_fill(mut self, fill: f64) -> Self {
        self.fill = Some(fill);
        self
    }

    pub fn element_count(&self) -> usize {
        self.shape.iter().product()
    }

    fn check_len(&self) -> Result<()> {
        if self.element_count() != self.data.len() {
            return Err(GranuleError::ShapeMismatch(format!(
                "array {:?} declares shape {:?} ({} elements) but holds {}",
                self.name,
                self.shape,
                self.element_count(),
                self.data.len()
            )));
        }
        Ok(())
    }

    pub fn bit_eq(&self, other: &ParamArray) -> bool {
        self.name == other.name
            && self.shape == other.shape
            && self.fill.map(f64::to_bits) == other.fill.map(f64::to_bits)
            && self.data.bit_eq(&other.data)
    }
}

/// Well-known parameter names.
pub mod params {
    pub const RADIANCE: &str = "radiance";
    pub const PROFILE_ID: &str = "profile_id";
    pub const HEIGHTS: &str = "heights_m";
    pub const CLOUD_CLASS: &str = "cloud_class";
}

/// A granule: metadata plus the Time, Geoloc and Parameters attributes.
/// Immutable once constructed.
#[derive(Debug, Clone, PartialEq)]
pub struct Granule {
    meta: GranuleMeta,
    time: TimeAxis,
    geoloc: Geoloc,
    params: Vec<ParamArray>,
}

impl Granule {
    pub fn new(meta: GranuleMeta, time: TimeAxis, geoloc: Geoloc, params: Vec<ParamArray>) -> Result<Self> {
        let g = Granule { meta, time, geoloc, params };
        g.validate()?;
        Ok(g)
    }

    pub fn meta(&self) -> &GranuleMeta {
        &self.meta
    }

    pub fn time(&self) -> &TimeAxis {
        &self.time
    }

    pub fn geoloc(&self) -> &Geoloc {
        &self.geoloc
    }

    pub fn params(&self) -> &[ParamArray] {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<&ParamArray> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn format(&self) -> FormatTag {
        self.meta.format
    }

    pub fn is_image(&self) -> bool {
        matches!(self.geoloc, Geoloc::Grid { .. })
    }

    /// Single acquisition instant of an image granule.
    pub fn image_time(&self) -> Option<UtcMicros> {
        match self.time {
            TimeAxis::Scalar(t) => Some(t),
            _ => None,
        }
    }

    pub fn radiance(&self) -> Option<&[f32]> {
        match self.param(params::RADIANCE).map(|p| &p.data) {
            Some(ArrayData::F32(v)) => Some(v),
            _ => None,
        }
    }

    /// Number of profiles (tracks) or pixels (images).
    pub fn cardinality(&self) -> usize {
        match &self.geoloc {
            Geoloc::Grid { window, .. } => window.len(),
            Geoloc::Track(p) => p.len(),
            Geoloc::TrackDegrees { lat, .. } => lat.len(),
        }
    }

    /// Same granule with different metadata (format/uri/source relabelling).
    pub fn with_meta(self, meta: GranuleMeta) -> Result<Self> {
        Granule::new(meta, self.time, self.geoloc, self.params)
    }

    fn validate(&self) -> Result<()> {
        self.meta.validate()?;
        for (i, p) in self.params.iter().enumerate() {
            p.check_len()?;
            if self.params[..i].iter().any(|q| q.name == p.name) {
                return Err(GranuleError::Invalid(format!("duplicate parameter {:?}", p.name)));
            }
        }
        match (&self.geoloc, self.meta.format) {
            (Geoloc::Grid { .. }, FormatTag::ExtBTrackProfile) => {
                return Err(GranuleError::Invalid("track format with grid geolocation".into()))
            }
            (Geoloc::Track(_) | Geoloc::TrackDegrees { .. }, FormatTag::ExtAGeoImage) => {
                return Err(GranuleError::Invalid("image format with track geolocation".into()))
            }
            (Geoloc::TrackDegrees { .. }, FormatTag::ExtCCommon) => {
                return Err(GranuleError::Invalid("common format requires radians".into()))
            }
            _ => {}
        }
        match &self.geoloc {
            Geoloc::Grid { grid, consts, window } => {
                consts.validate().map_err(|e| GranuleError::Invalid(e.to_string()))?;
                if !window.fits(grid) {
                    return Err(GranuleError::ShapeMismatch(format!(
                        "window {window:?} exceeds {}x{} grid",
                        grid.n, grid.n
                    )));
                }
                if self.meta.band.is_some_and(|b| b != grid.band) {
                    return Err(GranuleError::Invalid(format!(
                        "meta band {:?} disagrees with grid band {}",
                        self.meta.band, grid.band
                    )));
                }
                if !matches!(self.time, TimeAxis::Scalar(_)) {
                    return Err(GranuleError::Invalid("images carry a scalar time".into()));
                }
                let want = [window.rows as usize, window.cols as usize];
                for p in &self.params {
                    if p.shape != want {
                        return Err(GranuleError::ShapeMismatch(format!(
                            "image parameter {:?} has shape {:?}, window is {:?}",
                            p.name, p.shape, want
                        )));
                    }
                }
            }
            Geoloc::Track(_) | Geoloc::TrackDegrees { .. } => {
                if self.meta.band.is_some() {
                    return Err(GranuleError::Invalid("track granules carry no band".into()));
                }
                if let Geoloc::TrackDegrees { lat, lon } = &self.geoloc {
                    if lat.len() != lon.len() {
                        return Err(GranuleError::ShapeMismatch(format!(
                            "{} latitudes but {} longitudes",
                            lat.len(),
                            lon.len()
                        )));
                    }
                }
                let m = self.cardinality();
                match self.time.len() {
                    Some(n) if n == m => {}
                    Some(n) => return Err(GranuleError::ShapeMismatch(format!("{m} profiles but {n} time stamps"))),
                    None => return Err(GranuleError::Invalid("tracks carry per-profile times".into())),
                }
                for p in &self.params {
                    if p.shape.first() != Some(&m) {
                        return Err(GranuleError::ShapeMismatch(format!(
                            "track parameter {:?} has shape {:?}, expected leading axis {m}",
                            p.name, p.shape
                        )));
                    }
                }
            }
        }
        if let Some(r) = self.param(params::RADIANCE) {
            if let ArrayData::F32(v) = &r.data {
                let bad = v.iter().position(|x| x.is_infinite() || (x.is_nan() && r.fill.is_some_and(|f| !f.is_nan())));
                if let Some(i) = bad {
                    return Err(GranuleError::Invalid(format!(
                        "radiance element {i} is neither finite nor the fill value"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Normalizes a source granule into the common format: times become epoch
/// microseconds, angles radians, declared fills the canonical fills. Parameter
/// values are otherwise carried bit for bit.
pub fn to_common(raw: &Granule) -> Result<Granule> {
    if raw.format() == FormatTag::ExtCCommon {
        return Err(GranuleError::UnsupportedFormat(FormatTag::ExtCCommon));
    }
    let time = match &raw.time {
        TimeAxis::YearSeconds { year, seconds } => {
            let base = UtcMicros::year_start(*year)
                .ok_or_else(|| GranuleError::Invalid(format!("year {year} out of range")))?;
            TimeAxis::Profiles(seconds.iter().map(|s| base.plus_seconds(*s)).collect())
        }
        other => other.clone(),
    };
    let geoloc = match &raw.geoloc {
        Geoloc::TrackDegrees { lat, lon } => Geoloc::Track(
            lat.iter()
                .zip(lon)
                .map(|(la, lo)| GeodeticPoint::from_degrees(*la, *lo))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| GranuleError::Invalid(e.to_string()))?,
        ),
        other => other.clone(),
    };
    let params = raw.params.iter().map(canonical_fill).collect();
    let meta = GranuleMeta { format: FormatTag::ExtCCommon, ..raw.meta.clone() };
    Granule::new(meta, time, geoloc, params)
}

fn canonical_fill(p: &ParamArray) -> ParamArray {
    let Some(fill) = p.fill else {
        return p.clone();
    };
    let data = match &p.data {
        ArrayData::F32(v) => {
            ArrayData::F32(v.iter().map(|&x| if f64::from(x) == fill { FILL_F32 } else { x }).collect())
        }
        ArrayData::F64(v) => ArrayData::F64(v.iter().map(|&x| if x == fill { f64::NAN } else { x }).collect()),
        ArrayData::U8(v) => ArrayData::U8(v.iter().map(|&x| if f64::from(x) == fill { FILL_U8 } else { x }).collect()),
        // integer arrays keep their declared fill
        ArrayData::I32(_) | ArrayData::I64(_) => return p.clone(),
    };
    ParamArray { name: p.name.clone(), shape: p.shape.clone(), fill: None, data }
}
