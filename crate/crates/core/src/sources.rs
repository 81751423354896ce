//! Extractors: enumerate granules in a source store through a pluggable
//! transport, pre-select them by time, and fetch them into the common format.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fs;
use std::io::Write;
use std::path::{Component, Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use walkdir::WalkDir;

use crate::granule::{
    read_granule, to_common, FormatTag, GrammarRegistry, Granule, GranuleError, GranuleMeta, NameGrammar,
};
use crate::time::UtcMicros;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("transport {op} {name:?} failed: {message}")]
pub struct TransportError {
    pub op: &'static str,
    pub name: String,
    pub message: String,
}

impl TransportError {
    pub fn new(op: &'static str, name: impl Into<String>, message: impl Into<String>) -> Self {
        TransportError { op, name: name.into(), message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SourceError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Granule(#[from] GranuleError),
    #[error("no temporal match: best gap {}", best_gap_s.map_or("n/a (no candidates)".to_string(), |g| format!("{g} s")))]
    NoTemporalMatch { best_gap_s: Option<f64> },
    #[error("invalid source spec: {0}")]
    InvalidSpec(String),
    #[error("invalid time window: {0}")]
    InvalidWindow(String),
    #[error("fetched granule is {found}, listing says {expected}")]
    FormatMismatch { expected: FormatTag, found: FormatTag },
    #[error("cache i/o: {0}")]
    Cache(String),
}

pub type Result<T> = std::result::Result<T, SourceError>;

/// Byte-level access to a store. Listings are sorted lexicographically; no
/// retries happen at this layer.
pub trait Transport: Send + Sync {
    /// All names starting with `prefix`, sorted.
    fn list(&self, prefix: &str) -> std::result::Result<Vec<String>, TransportError>;

    fn get(&self, name: &str) -> std::result::Result<Vec<u8>, TransportError>;

    /// True when the transport cannot serve concurrent `get` calls.
    fn single_flight(&self) -> bool {
        false
    }
}

/// A directory tree laid out like the object store: names are paths relative
/// to `root`, separated by `/`.
#[derive(Debug, Clone)]
pub struct LocalDirTransport {
    root: PathBuf,
}

impl LocalDirTransport {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        LocalDirTransport { root: root.into() }
    }

    fn resolve(&self, name: &str) -> std::result::Result<PathBuf, TransportError> {
        let rel = Path::new(name);
        if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
            return Err(TransportError::new("get", name, "name escapes the store root"));
        }
        Ok(self.root.join(rel))
    }
}

impl Transport for LocalDirTransport {
    fn list(&self, prefix: &str) -> std::result::Result<Vec<String>, TransportError> {
        if !self.root.is_dir() {
            return Err(TransportError::new(
                "list",
                prefix,
                format!("store root {} is not a directory", self.root.display()),
            ));
        }
        let dir_part = prefix.rfind('/').map_or("", |i| &prefix[..i]);
        let start = if dir_part.is_empty() {
            self.root.clone()
        } else {
            self.resolve(dir_part).map_err(|e| TransportError { op: "list", ..e })?
        };
        if !start.is_dir() {
            return Ok(Vec::new());
        }
        let mut names = Vec::new();
        for entry in WalkDir::new(&start) {
            let entry = entry.map_err(|e| TransportError::new("list", prefix, e.to_string()))?;
            if !entry.file_type().is_file() {
                continue;
            }
            let rel = entry.path().strip_prefix(&self.root).expect("walk stays under root");
            let parts: Option<Vec<&str>> = rel.components().map(|c| c.as_os_str().to_str()).collect();
            if let Some(parts) = parts {
                let name = parts.join("/");
                if name.starts_with(prefix) {
                    names.push(name);
                }
            }
        }
        names.sort();
        Ok(names)
    }

    fn get(&self, name: &str) -> std::result::Result<Vec<u8>, TransportError> {
        let path = self.resolve(name)?;
        fs::read(&path).map_err(|e| TransportError::new("get", name, e.to_string()))
    }
}

/// Operation recorded by [`MemoryTransport`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportOp {
    List(String),
    Get(String),
}

/// In-memory store for tests and dry runs. Records every operation and can be
/// programmed to fail upcoming calls.
#[derive(Debug, Default)]
pub struct MemoryTransport {
    objects: Mutex<BTreeMap<String, Vec<u8>>>,
    log: Mutex<Vec<TransportOp>>,
    failures: Mutex<VecDeque<TransportError>>,
}

impl MemoryTransport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_objects<I, K>(objects: I) -> Self
    where
        I: IntoIterator<Item = (K, Vec<u8>)>,
        K: Into<String>,
    {
        let t = Self::new();
        for (k, v) in objects {
            t.put(k, v);
        }
        t
    }

    /// Seeds an object; not recorded in the operation log.
    pub fn put(&self, name: impl Into<String>, bytes: Vec<u8>) {
        self.objects.lock().unwrap().insert(name.into(), bytes);
    }

    /// The next transport call returns `err`.
    pub fn fail_next(&self, err: TransportError) {
        self.failures.lock().unwrap().push_back(err);
    }

    pub fn ops(&self) -> Vec<TransportOp> {
        self.log.lock().unwrap().clone()
    }

    pub fn snapshot(&self) -> BTreeMap<String, Vec<u8>> {
        self.objects.lock().unwrap().clone()
    }

    fn injected(&self) -> Option<TransportError> {
        self.failures.lock().unwrap().pop_front()
    }
}

impl Transport for MemoryTransport {
    fn list(&self, prefix: &str) -> std::result::Result<Vec<String>, TransportError> {
        self.log.lock().unwrap().push(TransportOp::List(prefix.to_string()));
        if let Some(e) = self.injected() {
            return Err(e);
        }
        Ok(self
            .objects
            .lock()
            .unwrap()
            .range(prefix.to_string()..)
            .take_while(|(k, _)| k.starts_with(prefix))
            .map(|(k, _)| k.clone())
            .collect())
    }

    fn get(&self, name: &str) -> std::result::Result<Vec<u8>, TransportError> {
        self.log.lock().unwrap().push(TransportOp::Get(name.to_string()));
        if let Some(e) = self.injected() {
            return Err(e);
        }
        self.objects
            .lock()
            .unwrap()
            .get(name)
            .cloned()
            .ok_or_else(|| TransportError::new("get", name, "no such object"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    LocalDir,
    ObjectStore,
    RemoteDir,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub id: String,
    pub kind: SourceKind,
    pub root: String,
    /// Grammar id; defaults to `abi` for object stores and `cpr` for remote
    /// directories.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name_grammar: Option<String>,
}

impl SourceSpec {
    pub fn grammar_id(&self) -> Result<&str> {
        match (&self.name_grammar, self.kind) {
            (Some(g), _) => Ok(g),
            (None, SourceKind::ObjectStore) => Ok("abi"),
            (None, SourceKind::RemoteDir) => Ok("cpr"),
            (None, SourceKind::LocalDir) => Err(SourceError::InvalidSpec(format!(
                "source {:?}: local_dir sources must name their grammar",
                self.id
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(SourceError::InvalidSpec("empty source id".into()));
        }
        if self.root.is_empty() {
            return Err(SourceError::InvalidSpec(format!("source {:?}: empty root", self.id)));
        }
        self.grammar_id().map(|_| ())
    }
}

/// Transport for a spec. Local directories, `file://` roots and plain paths
/// are served from disk (object-store and remote-directory layouts mirrored
/// on the filesystem); network schemes need an adapter registered by the
/// embedding application.
pub fn open_transport(spec: &SourceSpec) -> Result<Arc<dyn Transport>> {
    let root = spec.root.as_str();
    if let Some(path) = root.strip_prefix("file://") {
        return Ok(Arc::new(LocalDirTransport::new(path)));
    }
    if let Some((scheme, _)) = root.split_once("://") {
        return Err(TransportError::new(
            "open",
            root,
            format!("no transport adapter for scheme {scheme:?} is available"),
        )
        .into());
    }
    Ok(Arc::new(LocalDirTransport::new(root)))
}

/// A configured source: spec, transport and name grammar.
#[derive(Clone)]
pub struct Source {
    pub spec: SourceSpec,
    transport: Arc<dyn Transport>,
    grammar: Arc<dyn NameGrammar>,
}

impl std::fmt::Debug for Source {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Source").field("spec", &self.spec).finish_non_exhaustive()
    }
}

impl Source {
    pub fn new(spec: SourceSpec, transport: Arc<dyn Transport>, grammars: &GrammarRegistry) -> Result<Self> {
        spec.validate()?;
        let id = spec.grammar_id()?;
        let grammar =
            grammars.get(id).ok_or_else(|| SourceError::InvalidSpec(format!("unknown name grammar {id:?}")))?;
        Ok(Source { spec, transport, grammar })
    }

    pub fn open(spec: SourceSpec, grammars: &GrammarRegistry) -> Result<Self> {
        let transport = open_transport(&spec)?;
        Self::new(spec, transport, grammars)
    }

    pub fn transport(&self) -> &dyn Transport {
        self.transport.as_ref()
    }

    pub fn grammar(&self) -> &dyn NameGrammar {
        self.grammar.as_ref()
    }
}

/// A listed name that did not parse under the source grammar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedKey {
    pub source_id: String,
    pub key: String,
    pub position: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Listing {
    pub metas: Vec<GranuleMeta>,
    pub skipped: Vec<SkippedKey>,
}

impl Listing {
    /// Diagnostics as JSON lines, one object per skipped key.
    pub fn diagnostics_jsonl(&self) -> String {
        self.skipped.iter().map(|s| serde_json::to_string(s).expect("plain struct") + "\n").collect()
    }
}

/// Granules of `product` (and `band`, when given) whose time range intersects
/// `[t0, t1]`, sorted by start time then uri. Only the prefixes derived from
/// the window are listed.
pub fn list_granules(src: &Source, t0: UtcMicros, t1: UtcMicros, product: &str, band: Option<u8>) -> Result<Listing> {
    if t0 > t1 {
        return Err(SourceError::InvalidWindow(format!("{t0} is after {t1}")));
    }
    let mut listing = Listing::default();
    for prefix in src.grammar.prefixes(product, t0, t1) {
        for key in src.transport.list(&prefix)? {
            match src.grammar.parse(&key) {
                Ok(mut meta) => {
                    let wanted =
                        meta.product == product && band.is_none_or(|b| meta.band == Some(b)) && meta.intersects(t0, t1);
                    if wanted {
                        meta.source_id = src.spec.id.clone();
                        listing.metas.push(meta);
                    }
                }
                Err(GranuleError::MalformedKey { position, reason }) => {
                    listing.skipped.push(SkippedKey { source_id: src.spec.id.clone(), key, position, reason })
                }
                Err(e) => listing.skipped.push(SkippedKey {
                    source_id: src.spec.id.clone(),
                    key,
                    position: 0,
                    reason: e.to_string(),
                }),
            }
        }
    }
    listing.metas.sort_by(|a, b| (a.t_start, &a.uri).cmp(&(b.t_start, &b.uri)));
    listing.metas.dedup_by(|a, b| a.uri == b.uri);
    Ok(listing)
}

/// The candidate whose midpoint is closest to the window midpoint. Ties go to
/// the earlier start time, then the smaller uri.
pub fn select_covering(candidates: &[GranuleMeta], t0: UtcMicros, t1: UtcMicros, dt_max_s: f64) -> Result<GranuleMeta> {
    if t0 > t1 {
        return Err(SourceError::InvalidWindow(format!("{t0} is after {t1}")));
    }
    let mid = UtcMicros::midpoint(t0, t1);
    let best = candidates
        .iter()
        .min_by(|a, b| {
            let ga = (a.midpoint().0 - mid.0).unsigned_abs();
            let gb = (b.midpoint().0 - mid.0).unsigned_abs();
            (ga, a.t_start, &a.uri).cmp(&(gb, b.t_start, &b.uri))
        })
        .ok_or(SourceError::NoTemporalMatch { best_gap_s: None })?;
    let gap_us = (best.midpoint().0 - mid.0).unsigned_abs();
    if gap_us as f64 > dt_max_s * 1e6 {
        return Err(SourceError::NoTemporalMatch { best_gap_s: Some(gap_us as f64 / 1e6) });
    }
    Ok(best.clone())
}

/// Decoders for source containers, keyed by format tag. Every tag decodes the
/// `.sgr` interchange container unless overridden.
#[derive(Clone)]
pub struct ReaderRegistry {
    readers: HashMap<FormatTag, fn(&[u8]) -> std::result::Result<Granule, GranuleError>>,
}

impl Default for ReaderRegistry {
    fn default() -> Self {
        let mut readers: HashMap<FormatTag, fn(&[u8]) -> _> = HashMap::new();
        for tag in [FormatTag::ExtAGeoImage, FormatTag::ExtBTrackProfile, FormatTag::ExtCCommon] {
            readers.insert(tag, read_granule as fn(&[u8]) -> _);
        }
        ReaderRegistry { readers }
    }
}

impl ReaderRegistry {
    pub fn register(&mut self, tag: FormatTag, reader: fn(&[u8]) -> std::result::Result<Granule, GranuleError>) {
        self.readers.insert(tag, reader);
    }

    pub fn decode(&self, tag: FormatTag, bytes: &[u8]) -> Result<Granule> {
        let reader = self.readers.get(&tag).ok_or(SourceError::Granule(GranuleError::UnsupportedFormat(tag)))?;
        Ok(reader(bytes)?)
    }
}

/// Decodes fetched bytes and brings the granule into the common format.
pub fn decode_common(bytes: &[u8], expected: FormatTag, readers: &ReaderRegistry) -> Result<Granule> {
    let g = readers.decode(expected, bytes)?;
    if g.format() != expected && g.format() != FormatTag::ExtCCommon {
        return Err(SourceError::FormatMismatch { expected, found: g.format() });
    }
    if g.format() == FormatTag::ExtCCommon {
        Ok(g)
    } else {
        Ok(to_common(&g)?)
    }
}

/// Retrieves `meta.uri` through the source transport and normalizes it.
/// Transport errors are returned as-is.
pub fn fetch(src: &Source, meta: &GranuleMeta) -> Result<Granule> {
    fetch_with(src, meta, &ReaderRegistry::default(), None)
}

pub fn fetch_with(
    src: &Source,
    meta: &GranuleMeta,
    readers: &ReaderRegistry,
    cache: Option<&FetchCache>,
) -> Result<Granule> {
    let bytes = match cache {
        Some(c) => c.get_or_fetch(&src.spec.id, &meta.uri, || src.transport.get(&meta.uri))?,
        None => src.transport.get(&meta.uri)?,
    };
    decode_common(&bytes, meta.format, readers)
}

/// Content-addressed cache of fetched bytes: `objects/<sha256>` holds the
/// bytes, `refs/<sha256(source \0 uri)>` the digest of the object last fetched
/// for that name.
#[derive(Debug, Clone)]
pub struct FetchCache {
    dir: PathBuf,
}

pub const CACHE_ENV: &str = "COLLOC_ETL_CACHE";

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl FetchCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        FetchCache { dir: dir.into() }
    }

    /// Cache configured through the environment, if any.
    pub fn from_env() -> Option<Self> {
        std::env::var_os(CACHE_ENV).filter(|v| !v.is_empty()).map(|v| Self::new(PathBuf::from(v)))
    }

    fn io(e: std::io::Error) -> SourceError {
        SourceError::Cache(e.to_string())
    }

    fn lookup(&self, ref_path: &Path) -> Option<Vec<u8>> {
        let digest = fs::read_to_string(ref_path).ok()?;
        let bytes = fs::read(self.dir.join("objects").join(digest.trim())).ok()?;
        (sha256_hex(&bytes) == digest.trim()).then_some(bytes)
    }

    pub fn get_or_fetch<F>(&self, source_id: &str, uri: &str, fetch: F) -> Result<Vec<u8>>
    where
        F: FnOnce() -> std::result::Result<Vec<u8>, TransportError>,
    {
        let ref_key = sha256_hex(format!("{source_id}\0{uri}").as_bytes());
        let ref_path = self.dir.join("refs").join(&ref_key);
        if let Some(bytes) = self.lookup(&ref_path) {
            return Ok(bytes);
        }
        let bytes = fetch()?;
        let digest = sha256_hex(&bytes);
        fs::create_dir_all(self.dir.join("objects")).map_err(Self::io)?;
        fs::create_dir_all(self.dir.join("refs")).map_err(Self::io)?;
        write_atomic(&self.dir.join("objects").join(&digest), &bytes).map_err(Self::io)?;
        write_atomic(&ref_path, digest.as_bytes()).map_err(Self::io)?;
        Ok(bytes)
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
    }
    fs::rename(tmp, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodesy::{grid_params_for_band, EllipsoidConsts};
    use crate::granule::{
        format_abi_key, params, write_granule, ArrayData, Geoloc, ImageWindow, NameFields, ParamArray, TimeAxis,
    };

    fn t(h: u32, m: u32) -> UtcMicros {
        UtcMicros::from_ordinal(2019, 36, h, m, 0, 0).unwrap()
    }

    fn meta_at(start: UtcMicros, minutes: f64) -> GranuleMeta {
        let mut m = GranuleMeta {
            source_id: String::new(),
            product: "ABI-L1b-RadF".into(),
            band: Some(13),
            t_start: start,
            t_end: start.plus_seconds(minutes * 60.0),
            format: FormatTag::ExtAGeoImage,
            uri: String::new(),
            naming: NameFields::Abi { scan_mode: 6, created: start },
        };
        m.uri = format_abi_key(&m).unwrap();
        m
    }

    fn image_bytes(meta: &GranuleMeta) -> Vec<u8> {
        let grid = grid_params_for_band(13).unwrap();
        let g = Granule::new(
            meta.clone(),
            TimeAxis::Scalar(meta.t_start),
            Geoloc::Grid {
                grid,
                consts: EllipsoidConsts::default(),
                window: ImageWindow { row0: 0, col0: 0, rows: 1, cols: 2 },
            },
            vec![ParamArray::new(params::RADIANCE, vec![1, 2], ArrayData::F32(vec![1.0, 2.0])).unwrap()],
        )
        .unwrap();
        write_granule(&g)
    }

    fn store(metas: &[GranuleMeta]) -> Arc<MemoryTransport> {
        Arc::new(MemoryTransport::with_objects(metas.iter().map(|m| (m.uri.clone(), image_bytes(m)))))
    }

    fn source(transport: Arc<MemoryTransport>) -> Source {
        let spec = SourceSpec {
            id: "goes".into(),
            kind: SourceKind::ObjectStore,
            root: "mem://bucket".into(),
            name_grammar: None,
        };
        Source::new(spec, transport, &GrammarRegistry::default()).unwrap()
    }

    #[test]
    fn empty_store_lists_nothing() {
        let src = source(Arc::new(MemoryTransport::new()));
        let l = list_granules(&src, t(10, 0), t(11, 0), "ABI-L1b-RadF", None).unwrap();
        assert!(l.metas.is_empty() && l.skipped.is_empty());
    }

    #[test]
    fn window_selects_intersecting_granules() {
        // six 10-minute granules 10:00..11:00, each lasting 9 minutes
        let metas: Vec<_> = (0..6).map(|i| meta_at(t(10, 10 * i), 9.0)).collect();
        let src = source(store(&metas));
        let (w0, w1) = (t(10, 22), t(10, 37));
        let got = list_granules(&src, w0, w1, "ABI-L1b-RadF", Some(13)).unwrap();
        let brute: Vec<_> = metas.iter().filter(|m| m.intersects(w0, w1)).cloned().collect();
        assert_eq!(brute.len(), 2);
        let got_uris: Vec<_> = got.metas.iter().map(|m| m.uri.clone()).collect();
        let want: Vec<_> = brute.iter().map(|m| m.uri.clone()).collect();
        assert_eq!(got_uris, want);
        assert!(got.metas.iter().all(|m| m.source_id == "goes"));

        let before = list_granules(&src, t(8, 0), t(8, 30), "ABI-L1b-RadF", None).unwrap();
        assert!(before.metas.is_empty());
    }

    #[test]
    fn malformed_keys_are_skipped_and_reported() {
        let metas = vec![meta_at(t(10, 0), 9.0)];
        let tr = store(&metas);
        tr.put("ABI-L1b-RadF/2019/036/10/garbage.nc", vec![]);
        let src = source(tr);
        let l = list_granules(&src, t(10, 0), t(10, 30), "ABI-L1b-RadF", None).unwrap();
        assert_eq!(l.metas.len(), 1);
        assert_eq!(l.skipped.len(), 1);
        let line = l.diagnostics_jsonl();
        let v: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
        assert_eq!(v["key"], "ABI-L1b-RadF/2019/036/10/garbage.nc");
    }

    #[test]
    fn inverted_window_rejected() {
        let src = source(Arc::new(MemoryTransport::new()));
        assert!(matches!(list_granules(&src, t(11, 0), t(10, 0), "P", None), Err(SourceError::InvalidWindow(_))));
    }

    #[test]
    fn select_single_centered() {
        let m = meta_at(t(10, 0), 10.0);
        let got = select_covering(std::slice::from_ref(&m), t(10, 0), t(10, 10), 900.0).unwrap();
        assert_eq!(got, m);
    }

    #[test]
    fn select_nearest_midpoint() {
        // granule midpoints at 10:05, 10:15, 10:25; track midpoint 10:18
        let metas: Vec<_> = (0..3).map(|i| meta_at(t(10, 10 * i), 10.0)).collect();
        let got = select_covering(&metas, t(10, 13), t(10, 23), 900.0).unwrap();
        assert_eq!(got, metas[1]);
    }

    #[test]
    fn select_tie_prefers_earlier() {
        let metas: Vec<_> = (0..2).map(|i| meta_at(t(10, 10 * i), 10.0)).collect();
        // midpoints 10:05 and 10:15, window midpoint 10:10
        let got = select_covering(&[metas[1].clone(), metas[0].clone()], t(10, 5), t(10, 15), 900.0).unwrap();
        assert_eq!(got, metas[0]);
    }

    #[test]
    fn select_threshold() {
        let metas = vec![meta_at(t(10, 0), 10.0)];
        match select_covering(&metas, t(11, 0), t(11, 10), 900.0) {
            Err(SourceError::NoTemporalMatch { best_gap_s: Some(g) }) => assert_eq!(g, 3600.0),
            other => panic!("{other:?}"),
        }
        assert_eq!(
            select_covering(&[], t(11, 0), t(11, 10), 900.0),
            Err(SourceError::NoTemporalMatch { best_gap_s: None })
        );
    }

    #[test]
    fn fetch_by_key_normalizes() {
        let metas: Vec<_> = (0..3).map(|i| meta_at(t(10, 10 * i), 9.0)).collect();
        let tr = store(&metas);
        let before = tr.snapshot();
        let src = source(tr.clone());
        let g = fetch(&src, &metas[1]).unwrap();
        assert_eq!(g.format(), FormatTag::ExtCCommon);
        assert_eq!(g.meta().uri, metas[1].uri);
        assert_eq!(tr.ops(), vec![TransportOp::Get(metas[1].uri.clone())]);
        assert_eq!(tr.snapshot(), before);
    }

    #[test]
    fn fetch_surfaces_transport_error_without_retry() {
        let metas = vec![meta_at(t(10, 0), 9.0)];
        let tr = store(&metas);
        let err = TransportError::new("get", metas[0].uri.clone(), "connection reset");
        tr.fail_next(err.clone());
        let src = source(tr.clone());
        assert_eq!(fetch(&src, &metas[0]), Err(SourceError::Transport(err)));
        assert_eq!(tr.ops().len(), 1);
        assert!(fetch(&src, &metas[0]).is_ok());
    }

    #[test]
    fn local_dir_layout_and_cache() {
        let dir = tempfile::tempdir().unwrap();
        let m = meta_at(t(10, 0), 9.0);
        let path = dir.path().join(&m.uri);
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(&path, image_bytes(&m)).unwrap();
        let spec = SourceSpec {
            id: "goes".into(),
            kind: SourceKind::LocalDir,
            root: dir.path().to_string_lossy().into_owned(),
            name_grammar: Some("abi".into()),
        };
        let src = Source::open(spec, &GrammarRegistry::default()).unwrap();
        let l = list_granules(&src, t(10, 0), t(10, 30), "ABI-L1b-RadF", None).unwrap();
        assert_eq!(l.metas.len(), 1);
        assert_eq!(l.metas[0].uri, m.uri);

        let cache_dir = tempfile::tempdir().unwrap();
        let cache = FetchCache::new(cache_dir.path());
        let a = fetch_with(&src, &m, &ReaderRegistry::default(), Some(&cache)).unwrap();
        fs::remove_file(&path).unwrap();
        let b = fetch_with(&src, &m, &ReaderRegistry::default(), Some(&cache)).unwrap();
        assert_eq!(a, b);
        assert!(fetch(&src, &m).is_err());
    }

    #[test]
    fn local_dir_rejects_escaping_names() {
        let dir = tempfile::tempdir().unwrap();
        let t = LocalDirTransport::new(dir.path());
        assert!(t.get("../etc/passwd").is_err());
        assert_eq!(t.list("missing/").unwrap(), Vec::<String>::new());
    }

    #[test]
    fn network_schemes_need_an_adapter() {
        let spec = SourceSpec {
            id: "cs".into(),
            kind: SourceKind::RemoteDir,
            root: "sftp://example.invalid/data".into(),
            name_grammar: None,
        };
        assert!(matches!(open_transport(&spec), Err(SourceError::Transport(_))));
        assert_eq!(spec.grammar_id().unwrap(), "cpr");
        let local = SourceSpec { kind: SourceKind::LocalDir, ..spec };
        assert!(local.validate().is_err());
    }
}
