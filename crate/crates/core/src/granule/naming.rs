//! File-name grammars for the two source layouts.
//!
//! Imager object keys:
//! `<prod>/<YYYY>/<DDD>/<HH>/OR_<prod>-M<m>C<cc>_G16_s<YYYYDDDHHMMSSt>_e<...>_c<...>.nc`
//! where the trailing `t` is tenths of a second.
//!
//! Profiler granule names:
//! `<YYYYDDDHHMMSS>_<NNNNN>_CS_<product>_GRANULE_P1_R<rr>_E<ee>.hdf`

use std::collections::BTreeMap;
use std::sync::Arc;

use super::{malformed, FormatTag, GranuleError, GranuleMeta, NameFields, Result};
use crate::time::UtcMicros;

/// Nominal profiler orbit (granule) duration, seconds.
pub const DEFAULT_CPR_ORBIT_SECONDS: f64 = 5933.0;

/// Longest imager granule duration assumed when deriving listing prefixes.
const ABI_MAX_GRANULE_SECONDS: i64 = 3600;

const MICROS_PER_TENTH: i64 = 100_000;

/// A registered naming convention: parses names into metadata, formats them
/// back, and derives listing prefixes for a time window.
pub trait NameGrammar: Send + Sync {
    fn id(&self) -> &str;

    fn parse(&self, name: &str) -> Result<GranuleMeta>;

    fn format(&self, meta: &GranuleMeta) -> Result<String>;

    /// Listing prefixes whose union covers every granule of `product`
    /// intersecting `[t0, t1]`.
    fn prefixes(&self, product: &str, t0: UtcMicros, t1: UtcMicros) -> Vec<String>;
}

/// Fixed-width digit field at `start..start + width`.
fn digits(s: &str, start: usize, width: usize, what: &str) -> Result<u32> {
    let field = s
        .get(start..start + width)
        .ok_or_else(|| malformed(start, format!("{what}: expected {width} digits, input ends")))?;
    if let Some(i) = field.bytes().position(|b| !b.is_ascii_digit()) {
        return Err(malformed(start + i, format!("{what}: expected a digit")));
    }
    Ok(field.parse().expect("all-digit field"))
}

fn expect_literal(s: &str, at: usize, lit: &str) -> Result<usize> {
    if s.get(at..at + lit.len()) == Some(lit) {
        Ok(at + lit.len())
    } else {
        Err(malformed(at, format!("expected {lit:?}")))
    }
}

/// `YYYYDDDHHMMSS` (13 digits) plus optional tenths digit at `start`.
fn parse_stamp(s: &str, start: usize, tenths: bool) -> Result<UtcMicros> {
    let width = if tenths { 14 } else { 13 };
    let field = s.get(start..).unwrap_or("");
    let run = field.bytes().take_while(u8::is_ascii_digit).count();
    if run != width {
        return Err(malformed(start, format!("timestamp must be exactly {width} digits, found {run}")));
    }
    let year = digits(s, start, 4, "year")? as i32;
    let doy = digits(s, start + 4, 3, "day of year")?;
    let hh = digits(s, start + 7, 2, "hour")?;
    let mm = digits(s, start + 9, 2, "minute")?;
    let ss = digits(s, start + 11, 2, "second")?;
    let tenth = if tenths { digits(s, start + 13, 1, "tenths")? } else { 0 };
    if hh > 23 || mm > 59 || ss > 59 {
        return Err(malformed(start + 7, "time of day out of range"));
    }
    UtcMicros::from_ordinal(year, doy, hh, mm, ss, tenth * MICROS_PER_TENTH as u32)
        .ok_or_else(|| malformed(start + 4, format!("day {doy} does not exist in {year}")))
}

fn format_stamp(t: UtcMicros, tenths: bool) -> String {
    let (y, d, h, m, s, us) = t.ordinal_fields();
    if tenths {
        format!("{y:04}{d:03}{h:02}{m:02}{s:02}{}", us / MICROS_PER_TENTH as u32)
    } else {
        format!("{y:04}{d:03}{h:02}{m:02}{s:02}")
    }
}

fn check_year(t: UtcMicros) -> Result<()> {
    let y = t.ordinal_fields().0;
    if (0..=9999).contains(&y) {
        Ok(())
    } else {
        Err(GranuleError::Invalid(format!("year {y} cannot be written as four digits")))
    }
}

/// Geostationary imager object-key grammar.
#[derive(Debug, Clone, Default)]
pub struct AbiGrammar;

impl NameGrammar for AbiGrammar {
    fn id(&self) -> &str {
        "abi"
    }

    fn parse(&self, key: &str) -> Result<GranuleMeta> {
        parse_abi_key(key)
    }

    fn format(&self, meta: &GranuleMeta) -> Result<String> {
        format_abi_key(meta)
    }

    fn prefixes(&self, product: &str, t0: UtcMicros, t1: UtcMicros) -> Vec<String> {
        let hour = 3_600_000_000i64;
        let first = (t0.0 - ABI_MAX_GRANULE_SECONDS * 1_000_000).div_euclid(hour);
        let last = t1.0.div_euclid(hour);
        (first..=last)
            .map(|h| {
                let (y, d, hh, ..) = UtcMicros(h * hour).ordinal_fields();
                format!("{product}/{y:04}/{d:03}/{hh:02}/")
            })
            .collect()
    }
}

pub fn parse_abi_key(key: &str) -> Result<GranuleMeta> {
    // directory part: <prod>/<YYYY>/<DDD>/<HH>/
    let parts: Vec<&str> = key.split('/').collect();
    if parts.len() != 5 {
        return Err(malformed(
            0,
            format!("expected <prod>/<YYYY>/<DDD>/<HH>/<file>, found {} path components", parts.len()),
        ));
    }
    let prod_dir = parts[0];
    if prod_dir.is_empty() {
        return Err(malformed(0, "empty product directory"));
    }
    let mut pos = prod_dir.len() + 1;
    let dir_year = digits(key, pos, 4, "directory year")?;
    if parts[1].len() != 4 {
        return Err(malformed(pos, "directory year must be 4 digits"));
    }
    pos += 5;
    let dir_day = digits(key, pos, 3, "directory day")?;
    if parts[2].len() != 3 {
        return Err(malformed(pos, "directory day must be 3 digits"));
    }
    pos += 4;
    let dir_hour = digits(key, pos, 2, "directory hour")?;
    if parts[3].len() != 2 {
        return Err(malformed(pos, "directory hour must be 2 digits"));
    }
    pos += 3;
    let file_start = pos;

    // file part: OR_<prod>-M<m>C<cc>_G16_s..._e..._c....nc
    pos = expect_literal(key, pos, "OR_")?;
    pos = expect_literal(key, pos, prod_dir)?;
    pos = expect_literal(key, pos, "-M")?;
    let scan_mode = digits(key, pos, 1, "scan mode")? as u8;
    pos += 1;
    pos = expect_literal(key, pos, "C")?;
    let band = digits(key, pos, 2, "channel")? as u8;
    if !(1..=16).contains(&band) {
        return Err(malformed(pos, format!("channel {band} outside 01..16")));
    }
    pos += 2;
    pos = expect_literal(key, pos, "_G16_s")?;
    let t_start = parse_stamp(key, pos, true)?;
    pos += 14;
    pos = expect_literal(key, pos, "_e")?;
    let t_end = parse_stamp(key, pos, true)?;
    pos += 14;
    pos = expect_literal(key, pos, "_c")?;
    let created = parse_stamp(key, pos, true)?;
    pos += 14;
    pos = expect_literal(key, pos, ".nc")?;
    if pos != key.len() {
        return Err(malformed(pos, "trailing characters after .nc"));
    }

    let (y, d, h, ..) = t_start.ordinal_fields();
    if (y as u32, d, h) != (dir_year, dir_day, dir_hour) {
        return Err(malformed(file_start, "directory year/day/hour disagrees with the start timestamp"));
    }
    if t_end < t_start {
        return Err(malformed(file_start, "end time precedes start time"));
    }
    Ok(GranuleMeta {
        source_id: String::new(),
        product: prod_dir.to_string(),
        band: Some(band),
        t_start,
        t_end,
        format: FormatTag::ExtAGeoImage,
        uri: key.to_string(),
        naming: NameFields::Abi { scan_mode, created },
    })
}

/// Emits the imager key for `meta`. Times are written to tenths of a second;
/// `meta.uri` and `meta.source_id` are ignored.
pub fn format_abi_key(meta: &GranuleMeta) -> Result<String> {
    if meta.format != FormatTag::ExtAGeoImage {
        return Err(GranuleError::UnsupportedFormat(meta.format));
    }
    let band = meta.band.ok_or(GranuleError::MissingBand)?;
    if meta.product.is_empty() || meta.product.contains('/') {
        return Err(GranuleError::Invalid(format!("product {:?} not usable in a key", meta.product)));
    }
    let (scan_mode, created) = match meta.naming {
        NameFields::Abi { scan_mode, created } => (scan_mode, created),
        _ => (6, meta.t_end),
    };
    if scan_mode > 9 {
        return Err(GranuleError::Invalid(format!("scan mode {scan_mode} is not one digit")));
    }
    for t in [meta.t_start, meta.t_end, created] {
        check_year(t)?;
    }
    let (y, d, h, ..) = meta.t_start.ordinal_fields();
    let prod = &meta.product;
    Ok(format!(
        "{prod}/{y:04}/{d:03}/{h:02}/OR_{prod}-M{scan_mode}C{band:02}_G16_s{}_e{}_c{}.nc",
        format_stamp(meta.t_start, true),
        format_stamp(meta.t_end, true),
        format_stamp(created, true),
    ))
}

/// Profiler granule-name grammar. The name carries only the start time; the
/// end time is `start + orbit_seconds`.
#[derive(Debug, Clone)]
pub struct CprGrammar {
    pub orbit_seconds: f64,
}

impl Default for CprGrammar {
    fn default() -> Self {
        CprGrammar { orbit_seconds: DEFAULT_CPR_ORBIT_SECONDS }
    }
}

impl NameGrammar for CprGrammar {
    fn id(&self) -> &str {
        "cpr"
    }

    fn parse(&self, name: &str) -> Result<GranuleMeta> {
        parse_cpr_name(name, self.orbit_seconds)
    }

    fn format(&self, meta: &GranuleMeta) -> Result<String> {
        format_cpr_name(meta)
    }

    /// Profiler stores are organized as `<product>/<YYYY>/<DDD>/` day
    /// directories holding bare granule names.
    fn prefixes(&self, product: &str, t0: UtcMicros, t1: UtcMicros) -> Vec<String> {
        let day = 86_400_000_000i64;
        let lookback = (self.orbit_seconds * 1e6).ceil() as i64;
        let first = (t0.0 - lookback).div_euclid(day);
        let last = t1.0.div_euclid(day);
        (first..=last)
            .map(|d| {
                let (y, doy, ..) = UtcMicros(d * day).ordinal_fields();
                format!("{product}/{y:04}/{doy:03}/")
            })
            .collect()
    }
}

/// Parses a bare profiler granule name or one under `<product>/<YYYY>/<DDD>/`.
pub fn parse_cpr_name(name: &str, orbit_seconds: f64) -> Result<GranuleMeta> {
    let base_at = name.rfind('/').map_or(0, |i| i + 1);
    let base = &name[base_at..];
    let err = |e: GranuleError| match e {
        GranuleError::MalformedKey { position, reason } => {
            GranuleError::MalformedKey { position: position + base_at, reason }
        }
        other => other,
    };
    let t_start = parse_stamp(base, 0, false).map_err(err)?;
    let mut pos = expect_literal(base, 13, "_").map_err(err)?;
    let granule = digits(base, pos, 5, "granule number").map_err(err)?;
    pos += 5;
    pos = expect_literal(base, pos, "_CS_").map_err(err)?;
    let rest = &base[pos..];
    let marker = "_GRANULE_P1_R";
    let prod_len =
        rest.find(marker).ok_or_else(|| malformed(base_at + pos, "expected _GRANULE_P1_R after the product"))?;
    let product = &rest[..prod_len];
    if product.is_empty() || !product.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-') {
        return Err(malformed(base_at + pos, format!("invalid product {product:?}")));
    }
    pos += prod_len + marker.len();
    let release = digits(base, pos, 2, "release").map_err(err)? as u8;
    pos += 2;
    pos = expect_literal(base, pos, "_E").map_err(err)?;
    let epoch = digits(base, pos, 2, "epoch").map_err(err)? as u8;
    pos += 2;
    pos = expect_literal(base, pos, ".hdf").map_err(err)?;
    if pos != base.len() {
        return Err(malformed(base_at + pos, "trailing characters after .hdf"));
    }
    Ok(GranuleMeta {
        source_id: String::new(),
        product: product.to_string(),
        band: None,
        t_start,
        t_end: t_start.plus_seconds(orbit_seconds),
        format: FormatTag::ExtBTrackProfile,
        uri: name.to_string(),
        naming: NameFields::Cpr { granule, release, epoch },
    })
}

/// Emits the bare profiler granule name (whole seconds).
pub fn format_cpr_name(meta: &GranuleMeta) -> Result<String> {
    if meta.format != FormatTag::ExtBTrackProfile {
        return Err(GranuleError::UnsupportedFormat(meta.format));
    }
    if meta.product.is_empty() || !meta.product.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-') {
        return Err(GranuleError::Invalid(format!("product {:?} not usable in a name", meta.product)));
    }
    let NameFields::Cpr { granule, release, epoch } = meta.naming else {
        return Err(GranuleError::Invalid("profiler names need granule/release/epoch fields".into()));
    };
    if granule > 99_999 || release > 99 || epoch > 99 {
        return Err(GranuleError::Invalid("granule/release/epoch exceed their digit widths".into()));
    }
    check_year(meta.t_start)?;
    Ok(format!(
        "{}_{granule:05}_CS_{}_GRANULE_P1_R{release:02}_E{epoch:02}.hdf",
        format_stamp(meta.t_start, false),
        meta.product
    ))
}

/// Grammars by id. Sources refer to a grammar by id, so alternate layouts
/// can be registered without touching the extractors.
#[derive(Clone)]
pub struct GrammarRegistry {
    grammars: BTreeMap<String, Arc<dyn NameGrammar>>,
}

impl GrammarRegistry {
    pub fn empty() -> Self {
        GrammarRegistry { grammars: BTreeMap::new() }
    }

    pub fn with_defaults(cpr_orbit_seconds: f64) -> Self {
        let mut r = Self::empty();
        r.register(Arc::new(AbiGrammar));
        r.register(Arc::new(CprGrammar { orbit_seconds: cpr_orbit_seconds }));
        r
    }

    pub fn register(&mut self, g: Arc<dyn NameGrammar>) {
        self.grammars.insert(g.id().to_string(), g);
    }

    pub fn get(&self, id: &str) -> Option<Arc<dyn NameGrammar>> {
        self.grammars.get(id).cloned()
    }
}

impl Default for GrammarRegistry {
    fn default() -> Self {
        Self::with_defaults(DEFAULT_CPR_ORBIT_SECONDS)
    }
}

impl std::fmt::Debug for GrammarRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.grammars.keys()).finish()
    }
}
