//! Product store: serialized collocation records plus an append-only catalog.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::colloc::{CollocConfig, CollocatedPixel};
use crate::granule::GranuleMeta;
use crate::time::UtcMicros;

pub const CATALOG_FILE: &str = "catalog.jsonl";

/// Column order shared by both encodings.
pub const COLUMNS: [&str; 14] = [
    "profile_id",
    "track_time_us",
    "track_lat_deg",
    "track_lon_deg",
    "band",
    "pixel_row",
    "pixel_col",
    "pixel_lat_deg",
    "pixel_lon_deg",
    "radiance",
    "dist_km",
    "dt_s",
    "heights_m",
    "cloud_class",
];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LoadError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("malformed product at line {line}: {reason}")]
    MalformedProduct { line: usize, reason: String },
    #[error("malformed catalog at line {line}: {reason}")]
    MalformedCatalog { line: usize, reason: String },
}

pub type Result<T> = std::result::Result<T, LoadError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> LoadError + '_ {
    move |e| LoadError::Io { path: path.to_path_buf(), message: e.to_string() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProductFormat {
    #[default]
    Jsonl,
    Csv,
}

impl ProductFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ProductFormat::Jsonl => "jsonl",
            ProductFormat::Csv => "csv",
        }
    }

    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "jsonl" => Some(ProductFormat::Jsonl),
            "csv" => Some(ProductFormat::Csv),
            _ => None,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Row {
    profile_id: i64,
    track_time_us: i64,
    track_lat_deg: f64,
    track_lon_deg: f64,
    band: u8,
    pixel_row: u32,
    pixel_col: u32,
    pixel_lat_deg: f64,
    pixel_lon_deg: f64,
    radiance: Option<f32>,
    dist_km: f64,
    dt_s: f64,
    heights_m: Vec<f32>,
    cloud_class: Vec<u8>,
}

impl From<&CollocatedPixel> for Row {
    fn from(r: &CollocatedPixel) -> Self {
        Row {
            profile_id: r.profile_id,
            track_time_us: r.track_time.0,
            track_lat_deg: r.track_lat_deg,
            track_lon_deg: r.track_lon_deg,
            band: r.band,
            pixel_row: r.pixel_row,
            pixel_col: r.pixel_col,
            pixel_lat_deg: r.pixel_lat_deg,
            pixel_lon_deg: r.pixel_lon_deg,
            radiance: (!r.radiance.is_nan()).then_some(r.radiance),
            dist_km: r.dist_km,
            dt_s: r.dt_s,
            heights_m: r.heights_m.clone(),
            cloud_class: r.cloud_class.clone(),
        }
    }
}

impl From<Row> for CollocatedPixel {
    fn from(r: Row) -> Self {
        CollocatedPixel {
            profile_id: r.profile_id,
            track_time: UtcMicros(r.track_time_us),
            track_lat_deg: r.track_lat_deg,
            track_lon_deg: r.track_lon_deg,
            band: r.band,
            pixel_row: r.pixel_row,
            pixel_col: r.pixel_col,
            pixel_lat_deg: r.pixel_lat_deg,
            pixel_lon_deg: r.pixel_lon_deg,
            radiance: r.radiance.unwrap_or(f32::NAN),
            dist_km: r.dist_km,
            dt_s: r.dt_s,
            heights_m: r.heights_m,
            cloud_class: r.cloud_class,
        }
    }
}

/// Records in product order: profile id, then track time, band and pixel.
pub fn sorted(records: &[CollocatedPixel]) -> Vec<&CollocatedPixel> {
    let mut v: Vec<_> = records.iter().collect();
    v.sort_by_key(|r| (r.profile_id, r.track_time, r.band, r.pixel_row, r.pixel_col));
    v
}

pub fn encode_jsonl(records: &[CollocatedPixel]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in sorted(records) {
        serde_json::to_writer(&mut out, &Row::from(r)).expect("finite row");
        out.push(b'\n');
    }
    out
}

fn join<T: std::fmt::Display>(xs: &[T]) -> String {
    let mut s = String::new();
    for (i, x) in xs.iter().enumerate() {
        if i > 0 {
            s.push('|');
        }
        write!(s, "{x}").unwrap();
    }
    s
}

fn csv_fields(r: &CollocatedPixel) -> [String; 14] {
    [
        r.profile_id.to_string(),
        r.track_time.0.to_string(),
        r.track_lat_deg.to_string(),
        r.track_lon_deg.to_string(),
        r.band.to_string(),
        r.pixel_row.to_string(),
        r.pixel_col.to_string(),
        r.pixel_lat_deg.to_string(),
        r.pixel_lon_deg.to_string(),
        if r.radiance.is_nan() { String::new() } else { r.radiance.to_string() },
        r.dist_km.to_string(),
        r.dt_s.to_string(),
        join(&r.heights_m),
        join(&r.cloud_class),
    ]
}

/// Comma-separated with a header row; list columns are `|`-joined and a NaN
/// radiance is an empty field.
pub fn encode_csv(records: &[CollocatedPixel]) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(COLUMNS).expect("in-memory write");
    for r in sorted(records) {
        w.write_record(csv_fields(r)).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn encode(records: &[CollocatedPixel], format: ProductFormat) -> Vec<u8> {
    match format {
        ProductFormat::Jsonl => encode_jsonl(records),
        ProductFormat::Csv => encode_csv(records),
    }
}

/// Hex SHA-256 of the canonical JSON-lines encoding.
pub fn product_id(records: &[CollocatedPixel]) -> String {
    hex::encode(Sha256::digest(encode_jsonl(records)))
}

pub fn decode_jsonl(bytes: &[u8]) -> Result<Vec<CollocatedPixel>> {
    let text =
        std::str::from_utf8(bytes).map_err(|e| LoadError::MalformedProduct { line: 0, reason: e.to_string() })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let row: Row = serde_json::from_str(line)
            .map_err(|e| LoadError::MalformedProduct { line: i + 1, reason: e.to_string() })?;
        out.push(row.into());
    }
    Ok(out)
}

fn parse_list<T: std::str::FromStr>(s: &str) -> std::result::Result<Vec<T>, T::Err> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split('|').map(str::parse).collect()
}

fn csv_row(fields: &[&str]) -> std::result::Result<CollocatedPixel, String> {
    fn p<T: std::str::FromStr>(name: &str, s: &str) -> std::result::Result<T, String>
    where
        T::Err: std::fmt::Display,
    {
        s.parse().map_err(|e| format!("{name}: {e}"))
    }
    if fields.len() != COLUMNS.len() {
        return Err(format!("expected {} fields, found {}", COLUMNS.len(), fields.len()));
    }
    Ok(CollocatedPixel {
        profile_id: p("profile_id", fields[0])?,
        track_time: UtcMicros(p("track_time_us", fields[1])?),
        track_lat_deg: p("track_lat_deg", fields[2])?,
        track_lon_deg: p("track_lon_deg", fields[3])?,
        band: p("band", fields[4])?,
        pixel_row: p("pixel_row", fields[5])?,
        pixel_col: p("pixel_col", fields[6])?,
        pixel_lat_deg: p("pixel_lat_deg", fields[7])?,
        pixel_lon_deg: p("pixel_lon_deg", fields[8])?,
        radiance: if fields[9].is_empty() { f32::NAN } else { p("radiance", fields[9])? },
        dist_km: p("dist_km", fields[10])?,
        dt_s: p("dt_s", fields[11])?,
        heights_m: parse_list(fields[12]).map_err(|e| format!("heights_m: {e}"))?,
        cloud_class: parse_list(fields[13]).map_err(|e| format!("cloud_class: {e}"))?,
    })
}

pub fn decode_csv(bytes: &[u8]) -> Result<Vec<CollocatedPixel>> {
    let mut rd = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(bytes);
    let mut rows = rd.records();
    let malformed = |line: u64, reason: String| LoadError::MalformedProduct { line: line as usize, reason };
    match rows.next() {
        Some(Ok(h)) if h.iter().eq(COLUMNS) => {}
        Some(Err(e)) => return Err(malformed(1, e.to_string())),
        _ => return Err(malformed(1, "unexpected header".into())),
    }
    let mut out = Vec::new();
    for row in rows {
        let row = row.map_err(|e| malformed(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = row.position().map_or(0, |p| p.line());
        let fields: Vec<&str> = row.iter().collect();
        out.push(csv_row(&fields).map_err(|reason| malformed(line, reason))?);
    }
    Ok(out)
}

pub fn decode(bytes: &[u8], format: ProductFormat) -> Result<Vec<CollocatedPixel>> {
    match format {
        ProductFormat::Jsonl => decode_jsonl(bytes),
        ProductFormat::Csv => decode_csv(bytes),
    }
}

pub fn read_product(path: &Path) -> Result<Vec<CollocatedPixel>> {
    let format = ProductFormat::from_path(path)
        .ok_or_else(|| LoadError::Io { path: path.to_path_buf(), message: "unknown product extension".into() })?;
    decode(&fs::read(path).map_err(io_err(path))?, format)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogEntry {
    pub product_id: String,
    #[serde(with = "crate::time::rfc3339")]
    pub created_at: UtcMicros,
    pub source_a: GranuleMeta,
    pub source_b: GranuleMeta,
    pub cfg: CollocConfig,
    pub record_count: usize,
    /// Product file name relative to the store directory.
    pub path: String,
    pub digest: String,
}

/// Where a product came from: the image and track granules.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub source_a: GranuleMeta,
    pub source_b: GranuleMeta,
    pub cfg: CollocConfig,
}

fn catalog_text(dir: &Path) -> Result<String> {
    let path = dir.join(CATALOG_FILE);
    match fs::read_to_string(&path) {
        Ok(t) => Ok(t),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(String::new()),
        Err(e) => Err(io_err(&path)(e)),
    }
}

/// Catalog entries in file order; any line that does not parse is an error.
pub fn read_catalog(dir: &Path) -> Result<Vec<CatalogEntry>> {
    let text = catalog_text(dir)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(line)
                .map_err(|e| LoadError::MalformedCatalog { line: i + 1, reason: e.to_string() })?,
        );
    }
    Ok(out)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Writes the product file and records it in the catalog. Loading the same
/// records again leaves both the file and the catalog untouched and returns
/// the existing entry.
pub fn load(
    dir: &Path,
    records: &[CollocatedPixel],
    format: ProductFormat,
    provenance: &Provenance,
    created_at: UtcMicros,
) -> Result<CatalogEntry> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let id = product_id(records);
    let file_name = format!("{id}.{}", format.extension());
    let known = catalog_text(dir)?
        .lines()
        .filter_map(|l| serde_json::from_str::<CatalogEntry>(l).ok())
        .find(|e| e.product_id == id && e.path == file_name);
    if let Some(existing) = known {
        if dir.join(&existing.path).is_file() {
            return Ok(existing);
        }
    }
    let bytes = encode(records, format);
    let product_path = dir.join(&file_name);
    if fs::read(&product_path).ok().as_deref() != Some(bytes.as_slice()) {
        write_atomic(&product_path, &bytes)?;
    }
    let entry = CatalogEntry {
        product_id: id,
        created_at,
        source_a: provenance.source_a.clone(),
        source_b: provenance.source_b.clone(),
        cfg: provenance.cfg,
        record_count: records.len(),
        path: file_name,
        digest: "sha256".into(),
    };
    catalog_append(dir, &entry)?;
    Ok(entry)
}

/// Appends one line, starting a fresh line when the file does not end with a
/// newline (an interrupted earlier append).
fn catalog_append(dir: &Path, entry: &CatalogEntry) -> Result<()> {
    let path = dir.join(CATALOG_FILE);
    let needs_newline = match fs::read(&path) {
        Ok(b) => b.last().is_some_and(|&c| c != b'\n'),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => false,
        Err(e) => return Err(io_err(&path)(e)),
    };
    let mut line = if needs_newline { String::from("\n") } else { String::new() };
    line.push_str(&serde_json::to_string(entry).expect("plain struct"));
    line.push('\n');
    let mut f = fs::OpenOptions::new().create(true).append(true).open(&path).map_err(io_err(&path))?;
    f.write_all(line.as_bytes()).map_err(io_err(&path))
}
