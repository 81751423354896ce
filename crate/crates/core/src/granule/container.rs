//! `.sgr` interchange container.
//!
//! Layout: the magic bytes `SGR1`, a UTF-8 JSON header, the separator `\n\0`,
//! then one little-endian payload block per header-declared array, in header
//! order. Axis arrays (per-profile time and coordinates) use reserved names
//! starting with `@`.

use serde::{Deserialize, Serialize};

use super::{ArrayData, DType, Geoloc, Granule, GranuleError, GranuleMeta, ImageWindow, ParamArray, Result, TimeAxis};
use crate::geodesy::{EllipsoidConsts, GeodeticPoint, GridParams};
use crate::time::UtcMicros;

pub const MAGIC: &[u8; 4] = b"SGR1";
const SEPARATOR: &[u8; 2] = b"\n\0";

const AXIS_TIME: &str = "@time";
const AXIS_LAT: &str = "@lat";
const AXIS_LON: &str = "@lon";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    meta: GranuleMeta,
    time: TimeHeader,
    geoloc: GeolocHeader,
    arrays: Vec<ArrayHeader>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum TimeHeader {
    Scalar { t_us: UtcMicros },
    Profiles,
    YearSeconds { year: i32 },
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum GeolocHeader {
    Grid { grid: GridParams, consts: EllipsoidConsts, window: ImageWindow },
    Track,
    TrackDegrees,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArrayHeader {
    name: String,
    dtype: DType,
    shape: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fill: Option<f64>,
}

fn corrupt(offset: usize, reason: impl Into<String>) -> GranuleError {
    GranuleError::CorruptContainer { offset, reason: reason.into() }
}

pub fn write_granule(g: &Granule) -> Vec<u8> {
    let mut blocks: Vec<(ArrayHeader, &ArrayData)> = Vec::new();
    let mut owned: Vec<(ArrayHeader, ArrayData)> = Vec::new();

    let time = match g.time() {
        TimeAxis::Scalar(t) => TimeHeader::Scalar { t_us: *t },
        TimeAxis::Profiles(v) => {
            owned.push(axis(AXIS_TIME, ArrayData::I64(v.iter().map(|t| t.0).collect())));
            TimeHeader::Profiles
        }
        TimeAxis::YearSeconds { year, seconds } => {
            owned.push(axis(AXIS_TIME, ArrayData::F64(seconds.clone())));
            TimeHeader::YearSeconds { year: *year }
        }
    };
    let geoloc = match g.geoloc() {
        Geoloc::Grid { grid, consts, window } => GeolocHeader::Grid { grid: *grid, consts: *consts, window: *window },
        Geoloc::Track(points) => {
            owned.push(axis(AXIS_LAT, ArrayData::F64(points.iter().map(|p| p.lat).collect())));
            owned.push(axis(AXIS_LON, ArrayData::F64(points.iter().map(|p| p.lon).collect())));
            GeolocHeader::Track
        }
        Geoloc::TrackDegrees { lat, lon } => {
            owned.push(axis(AXIS_LAT, ArrayData::F64(lat.clone())));
            owned.push(axis(AXIS_LON, ArrayData::F64(lon.clone())));
            GeolocHeader::TrackDegrees
        }
    };
    for (h, d) in &owned {
        blocks.push((ArrayHeader { name: h.name.clone(), dtype: h.dtype, shape: h.shape.clone(), fill: None }, d));
    }
    for p in g.params() {
        blocks.push((
            ArrayHeader { name: p.name.clone(), dtype: p.data.dtype(), shape: p.shape.clone(), fill: p.fill },
            &p.data,
        ));
    }

    let header = Header {
        meta: g.meta().clone(),
        time,
        geoloc,
        arrays: blocks
            .iter()
            .map(|(h, _)| ArrayHeader { name: h.name.clone(), dtype: h.dtype, shape: h.shape.clone(), fill: h.fill })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serialization cannot fail");
    let payload: usize = blocks.iter().map(|(h, d)| h.dtype.size() * d.len()).sum();

    let mut out = Vec::with_capacity(MAGIC.len() + json.len() + SEPARATOR.len() + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&json);
    out.extend_from_slice(SEPARATOR);
    for (_, data) in blocks {
        write_block(&mut out, data);
    }
    out
}

fn axis(name: &str, data: ArrayData) -> (ArrayHeader, ArrayData) {
    (ArrayHeader { name: name.into(), dtype: data.dtype(), shape: vec![data.len()], fill: None }, data)
}

fn write_block(out: &mut Vec<u8>, data: &ArrayData) {
    match data {
        ArrayData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        ArrayData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        ArrayData::I32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        ArrayData::I64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        ArrayData::U8(v) => out.extend_from_slice(v),
    }
}

fn read_block(bytes: &[u8], dtype: DType) -> ArrayData {
    fn le<const N: usize, T>(bytes: &[u8], f: fn([u8; N]) -> T) -> Vec<T> {
        bytes.chunks_exact(N).map(|c| f(c.try_into().expect("chunks_exact yields N bytes"))).collect()
    }
    match dtype {
        DType::F32 => ArrayData::F32(le(bytes, f32::from_le_bytes)),
        DType::F64 => ArrayData::F64(le(bytes, f64::from_le_bytes)),
        DType::I32 => ArrayData::I32(le(bytes, i32::from_le_bytes)),
        DType::I64 => ArrayData::I64(le(bytes, i64::from_le_bytes)),
        DType::U8 => ArrayData::U8(bytes.to_vec()),
    }
}

pub fn read_granule(bytes: &[u8]) -> Result<Granule> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(corrupt(0, "missing SGR1 magic"));
    }
    let body = &bytes[MAGIC.len()..];
    let sep = body
        .windows(SEPARATOR.len())
        .position(|w| w == SEPARATOR)
        .ok_or_else(|| corrupt(MAGIC.len(), "header terminator not found"))?;
    let header: Header = serde_json::from_slice(&body[..sep])
        .map_err(|e| corrupt(MAGIC.len() + e.column().saturating_sub(1), e.to_string()))?;

    let mut offset = MAGIC.len() + sep + SEPARATOR.len();
    let mut arrays = Vec::with_capacity(header.arrays.len());
    for a in header.arrays {
        let count = a
            .shape
            .iter()
            .try_fold(1usize, |acc, d| acc.checked_mul(*d))
            .ok_or_else(|| corrupt(offset, format!("array {:?} shape overflows", a.name)))?;
        let len = count
            .checked_mul(a.dtype.size())
            .ok_or_else(|| corrupt(offset, format!("array {:?} size overflows", a.name)))?;
        let remaining = bytes.len() - offset;
        if len > remaining {
            return Err(GranuleError::ShapeMismatch(format!(
                "array {:?} declares {count} elements ({len} bytes) but only {remaining} bytes remain",
                a.name
            )));
        }
        let data = read_block(&bytes[offset..offset + len], a.dtype);
        offset += len;
        arrays.push(ParamArray { name: a.name, shape: a.shape, fill: a.fill, data });
    }
    if offset != bytes.len() {
        return Err(GranuleError::ShapeMismatch(format!(
            "{} trailing bytes after the last declared array",
            bytes.len() - offset
        )));
    }

    let mut take = |name: &str| -> Option<ArrayData> {
        let i = arrays.iter().position(|a| a.name == name)?;
        Some(arrays.remove(i).data)
    };
    let time = match header.time {
        TimeHeader::Scalar { t_us } => TimeAxis::Scalar(t_us),
        TimeHeader::Profiles => match take(AXIS_TIME) {
            Some(ArrayData::I64(v)) => TimeAxis::Profiles(v.into_iter().map(UtcMicros).collect()),
            _ => return Err(corrupt(0, "per-profile times need an i64 @time array")),
        },
        TimeHeader::YearSeconds { year } => match take(AXIS_TIME) {
            Some(ArrayData::F64(seconds)) => TimeAxis::YearSeconds { year, seconds },
            _ => return Err(corrupt(0, "year-relative times need an f64 @time array")),
        },
    };
    let geoloc = match header.geoloc {
        GeolocHeader::Grid { grid, consts, window } => Geoloc::Grid { grid, consts, window },
        kind @ (GeolocHeader::Track | GeolocHeader::TrackDegrees) => {
            let (Some(ArrayData::F64(lat)), Some(ArrayData::F64(lon))) = (take(AXIS_LAT), take(AXIS_LON)) else {
                return Err(corrupt(0, "track geolocation needs f64 @lat and @lon arrays"));
            };
            if lat.len() != lon.len() {
                return Err(GranuleError::ShapeMismatch(format!(
                    "{} latitudes but {} longitudes",
                    lat.len(),
                    lon.len()
                )));
            }
            match kind {
                GeolocHeader::TrackDegrees => Geoloc::TrackDegrees { lat, lon },
                _ => Geoloc::Track(lat.into_iter().zip(lon).map(|(lat, lon)| GeodeticPoint { lat, lon }).collect()),
            }
        }
    };
    if let Some(a) = arrays.iter().find(|a| a.name.starts_with('@')) {
        return Err(corrupt(0, format!("unexpected axis array {:?}", a.name)));
    }
    Granule::new(header.meta, time, geoloc, arrays)
}
