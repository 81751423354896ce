//! Runs a collocation job, either directly or by walking a pipeline graph
//! stage by stage.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use super::graph::{GraphError, Node, NodeKind, Payload, PipelineGraph, ValidationReport};
use crate::colloc::{
    collocate, profiles_from_granule, transform_track, CollocConfig, CollocError, Collocation, TrackProfile,
};
use crate::geodesy::ScanAngle;
use crate::granule::{to_common, FormatTag, Geoloc, Granule, GranuleError, GranuleMeta};
use crate::loader::{self, CatalogEntry, LoadError, ProductFormat, Provenance};
use crate::sources::{decode_common, list_granules, select_covering, FetchCache, ReaderRegistry, Source, SourceError};
use crate::time::UtcMicros;

#[derive(Debug, Error)]
pub enum ExecError {
    #[error(transparent)]
    Source(#[from] SourceError),
    #[error(transparent)]
    Granule(#[from] GranuleError),
    #[error(transparent)]
    Colloc(#[from] CollocError),
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("pipeline graph is invalid: {}", .0.violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidGraph(ValidationReport),
    #[error("constraint {id:?} ({predicate}) violated: {reason}")]
    Constraint { id: String, predicate: String, reason: String },
    #[error("empty product: {0}")]
    EmptyProduct(String),
    #[error("node {node:?}: {reason}")]
    Node { node: String, reason: String },
    #[error("track granule holds no profiles")]
    EmptyTrack,
}

pub type Result<T> = std::result::Result<T, ExecError>;

/// Everything a collocation run needs besides the graph.
#[derive(Clone)]
pub struct Job {
    pub image_source: Source,
    pub track_source: Source,
    /// Track granule name within the track source.
    pub track_uri: String,
    /// Image granule name; selected by time when absent.
    pub image_uri: Option<String>,
    pub image_product: String,
    pub cfg: CollocConfig,
    pub output_dir: PathBuf,
    pub format: ProductFormat,
    pub cache: Option<FetchCache>,
    pub readers: ReaderRegistry,
    pub created_at: UtcMicros,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub collocation: Collocation,
    pub entry: CatalogEntry,
    pub product_path: PathBuf,
}

fn get_bytes(src: &Source, uri: &str, cache: Option<&FetchCache>) -> Result<Vec<u8>> {
    Ok(match cache {
        Some(c) => c.get_or_fetch(&src.spec.id, uri, || src.transport().get(uri))?,
        None => src.transport().get(uri).map_err(SourceError::from)?,
    })
}

fn named_meta(src: &Source, uri: &str) -> Result<GranuleMeta> {
    let mut meta = src.grammar().parse(uri)?;
    meta.source_id = src.spec.id.clone();
    Ok(meta)
}

/// Time span covered by the profiles.
pub fn profile_window(profiles: &[TrackProfile]) -> Result<(UtcMicros, UtcMicros)> {
    let t0 = profiles.iter().map(|p| p.time).min().ok_or(ExecError::EmptyTrack)?;
    let t1 = profiles.iter().map(|p| p.time).max().ok_or(ExecError::EmptyTrack)?;
    Ok((t0, t1))
}

/// The image granule for `window`: the named one, or the candidate whose
/// midpoint is nearest the window midpoint among granules intersecting the
/// window widened by the temporal threshold.
pub fn resolve_image(job: &Job, window: (UtcMicros, UtcMicros)) -> Result<GranuleMeta> {
    if let Some(uri) = &job.image_uri {
        return named_meta(&job.image_source, uri);
    }
    let (t0, t1) = window;
    let slack = job.cfg.dt_max_s;
    let listing = list_granules(
        &job.image_source,
        t0.plus_seconds(-slack),
        t1.plus_seconds(slack),
        &job.image_product,
        Some(job.cfg.band),
    )?;
    Ok(select_covering(&listing.metas, t0, t1, job.cfg.dt_max_s)?)
}

fn finish(job: &Job, collocation: Collocation, image: GranuleMeta, track: GranuleMeta) -> Result<RunOutcome> {
    if collocation.records.is_empty() {
        return Err(ExecError::EmptyProduct(collocation.summary()));
    }
    let provenance = Provenance { source_a: image, source_b: track, cfg: job.cfg };
    let entry = loader::load(&job.output_dir, &collocation.records, job.format, &provenance, job.created_at)?;
    let product_path = job.output_dir.join(&entry.path);
    Ok(RunOutcome { collocation, entry, product_path })
}

/// Fetch both granules, convert, collocate and load.
pub fn run_direct(job: &Job) -> Result<RunOutcome> {
    let track_meta = named_meta(&job.track_source, &job.track_uri)?;
    let track_bytes = get_bytes(&job.track_source, &job.track_uri, job.cache.as_ref())?;
    let track = decode_common(&track_bytes, track_meta.format, &job.readers)?;
    let profiles = profiles_from_granule(&track)?;
    let image_meta = resolve_image(job, profile_window(&profiles)?)?;
    let image_bytes = get_bytes(&job.image_source, &image_meta.uri, job.cache.as_ref())?;
    let image = decode_common(&image_bytes, image_meta.format, &job.readers)?;
    let collocation = collocate(&profiles, &image, &job.cfg)?;
    finish(job, collocation, image_meta, track_meta)
}

/// Staged data held by a Concept.
#[derive(Debug, Clone)]
pub enum Artifact {
    Raw(Granule),
    Common { image: Granule, track: Granule },
    Projected { image: Granule, profiles: Vec<TrackProfile>, scans: Vec<(i64, ScanAngle)>, invisible: usize },
    Product(Collocation),
    Stored(Box<RunOutcome>),
}

impl Artifact {
    fn describe(&self) -> String {
        match self {
            Artifact::Raw(g) => format!("{} {}", g.format(), g.meta().uri),
            Artifact::Common { image, track } => {
                format!("pixels={} profiles={}", image.cardinality(), track.cardinality())
            }
            Artifact::Projected { scans, invisible, .. } => {
                format!("projected={} invisible={invisible}", scans.len())
            }
            Artifact::Product(c) => c.summary(),
            Artifact::Stored(o) => format!("product={}", o.product_path.display()),
        }
    }
}

pub const OPS: [&str; 4] = ["convert", "project", "match", "load"];
pub const PREDICATES: [&str; 4] = ["dt_within", "dist_within", "non_empty", "band_is"];

/// One line per executed node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeStatus {
    pub stage: usize,
    pub node: String,
    pub detail: String,
}

impl std::fmt::Display for NodeStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "stage={} node={} ok {}", self.stage, self.node, self.detail)
    }
}

struct Resolved {
    track_meta: GranuleMeta,
    track_raw: Granule,
    image_meta: GranuleMeta,
}

fn node_err(node: &str, reason: impl Into<String>) -> ExecError {
    ExecError::Node { node: node.into(), reason: reason.into() }
}

fn preflight(graph: &PipelineGraph) -> Result<()> {
    let report = graph.validate();
    if let Some(path) = report.violations.iter().find_map(|v| match v {
        super::graph::Violation::Cycle { path } => Some(path.clone()),
        _ => None,
    }) {
        return Err(GraphError::CyclicGraph(path).into());
    }
    if !report.is_ok() {
        return Err(ExecError::InvalidGraph(report));
    }
    for node in graph.nodes() {
        match &node.payload {
            Payload::Transformation(t) if !OPS.contains(&t.op.as_str()) => {
                return Err(node_err(&node.id, format!("unknown operation {:?}", t.op)))
            }
            Payload::EtlConstraint(c) if !PREDICATES.contains(&c.predicate.as_str()) => {
                return Err(node_err(&node.id, format!("unknown predicate {:?}", c.predicate)))
            }
            Payload::Concept(c)
                if graph.inputs_of(&node.id).is_empty()
                    && !matches!(c.format.format, FormatTag::ExtAGeoImage | FormatTag::ExtBTrackProfile) =>
            {
                return Err(node_err(&node.id, "source concepts must hold imager or profiler data"));
            }
            _ => {}
        }
    }
    Ok(())
}

fn resolve(job: &Job) -> Result<Resolved> {
    let track_meta = named_meta(&job.track_source, &job.track_uri)?;
    let bytes = get_bytes(&job.track_source, &job.track_uri, job.cache.as_ref())?;
    let track_raw = job.readers.decode(track_meta.format, &bytes)?;
    let common = if track_raw.format() == FormatTag::ExtCCommon { track_raw.clone() } else { to_common(&track_raw)? };
    let window = profile_window(&profiles_from_granule(&common)?)?;
    let image_meta = resolve_image(job, window)?;
    Ok(Resolved { track_meta, track_raw, image_meta })
}

fn extract(node: &Node, graph: &PipelineGraph, job: &Job, r: &Resolved) -> Result<Artifact> {
    let format = graph.node(&node.id).and_then(Node::as_concept).unwrap().format.format;
    match format {
        FormatTag::ExtBTrackProfile => Ok(Artifact::Raw(r.track_raw.clone())),
        FormatTag::ExtAGeoImage => {
            let bytes = get_bytes(&job.image_source, &r.image_meta.uri, job.cache.as_ref())?;
            Ok(Artifact::Raw(job.readers.decode(r.image_meta.format, &bytes)?))
        }
        FormatTag::ExtCCommon => Err(node_err(&node.id, "no extractor for common-format sources")),
    }
}

fn transform(node: &Node, op: &str, inputs: Vec<Arc<Artifact>>, job: &Job, r: &Resolved) -> Result<Artifact> {
    let one = |inputs: &[Arc<Artifact>]| -> Result<Arc<Artifact>> {
        match inputs {
            [a] => Ok(a.clone()),
            _ => Err(node_err(&node.id, format!("{op} takes one input, got {}", inputs.len()))),
        }
    };
    match op {
        "convert" => {
            let mut image = None;
            let mut track = None;
            for a in &inputs {
                let Artifact::Raw(g) = a.as_ref() else {
                    return Err(node_err(&node.id, "convert takes source granules"));
                };
                let g = if g.format() == FormatTag::ExtCCommon { g.clone() } else { to_common(g)? };
                let slot = if matches!(g.geoloc(), Geoloc::Grid { .. }) { &mut image } else { &mut track };
                if slot.replace(g).is_some() {
                    return Err(node_err(&node.id, "convert takes one image and one track"));
                }
            }
            match (image, track) {
                (Some(image), Some(track)) => Ok(Artifact::Common { image, track }),
                _ => Err(node_err(&node.id, "convert takes one image and one track")),
            }
        }
        "project" => match one(&inputs)?.as_ref() {
            Artifact::Common { image, track } => {
                let Geoloc::Grid { consts, .. } = image.geoloc() else {
                    return Err(ExecError::Colloc(CollocError::NotAnImage));
                };
                let profiles = profiles_from_granule(track)?;
                let (scans, invisible) = transform_track(&profiles, consts);
                Ok(Artifact::Projected { image: image.clone(), profiles, scans, invisible })
            }
            _ => Err(node_err(&node.id, "project takes converted granules")),
        },
        "match" => match one(&inputs)?.as_ref() {
            Artifact::Projected { image, profiles, .. } => Ok(Artifact::Product(collocate(profiles, image, &job.cfg)?)),
            Artifact::Common { image, track } => {
                Ok(Artifact::Product(collocate(&profiles_from_granule(track)?, image, &job.cfg)?))
            }
            _ => Err(node_err(&node.id, "match takes projected or converted granules")),
        },
        "load" => match one(&inputs)?.as_ref() {
            Artifact::Product(c) => {
                Ok(Artifact::Stored(Box::new(finish(job, c.clone(), r.image_meta.clone(), r.track_meta.clone())?)))
            }
            _ => Err(node_err(&node.id, "load takes a collocation product")),
        },
        other => Err(node_err(&node.id, format!("unknown operation {other:?}"))),
    }
}

fn arg_f64(args: &serde_json::Value, key: &str, default: f64) -> std::result::Result<f64, String> {
    match args.get(key) {
        None => Ok(default),
        Some(v) => v.as_f64().ok_or_else(|| format!("argument {key:?} must be a number")),
    }
}

/// Evaluates a constraint predicate on one artifact; `Err` carries the reason.
fn check_predicate(
    predicate: &str,
    args: &serde_json::Value,
    artifact: &Artifact,
    cfg: &CollocConfig,
) -> std::result::Result<(), String> {
    match (predicate, artifact) {
        ("dt_within", Artifact::Product(c)) => {
            let max = arg_f64(args, "max_s", cfg.dt_max_s)?;
            match c.records.iter().find(|r| r.dt_s.abs() > max) {
                Some(r) => Err(format!("profile {} has dt {} s > {max} s", r.profile_id, r.dt_s)),
                None => Ok(()),
            }
        }
        ("dist_within", Artifact::Product(c)) => {
            let max = arg_f64(args, "max_km", cfg.d_max_km)?;
            match c.records.iter().find(|r| r.dist_km > max) {
                Some(r) => Err(format!("profile {} is {} km away > {max} km", r.profile_id, r.dist_km)),
                None => Ok(()),
            }
        }
        ("non_empty", a) => {
            let n = match a {
                Artifact::Raw(g) => g.cardinality(),
                Artifact::Common { image, track } => image.cardinality().min(track.cardinality()),
                Artifact::Projected { scans, .. } => scans.len(),
                Artifact::Product(c) => c.records.len(),
                Artifact::Stored(o) => o.collocation.records.len(),
            };
            if n == 0 {
                Err("no data".into())
            } else {
                Ok(())
            }
        }
        ("band_is", a) => {
            let want = arg_f64(args, "band", f64::from(cfg.band))?;
            let band = match a {
                Artifact::Raw(g) | Artifact::Common { image: g, .. } | Artifact::Projected { image: g, .. } => {
                    g.meta().band
                }
                Artifact::Product(c) => c.records.first().map(|r| r.band),
                Artifact::Stored(o) => o.collocation.records.first().map(|r| r.band),
            };
            match band {
                Some(b) if f64::from(b) != want => Err(format!("band {b}, expected {want}")),
                _ => Ok(()),
            }
        }
        (p, a) => Err(format!("{p} does not apply to {}", a.describe())),
    }
}

/// Executes `graph` for `job`. Stage members run concurrently on a pool of
/// `jobs` threads; constraints are checked as soon as every concept owning a
/// constrained attribute has been materialized. Status lines go to `status`.
pub fn run_pipeline(
    graph: &PipelineGraph,
    job: &Job,
    jobs: usize,
    status: &mut dyn FnMut(&NodeStatus),
) -> Result<RunOutcome> {
    preflight(graph)?;
    let schedule = graph.topo_schedule()?;
    let resolved = resolve(job)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| node_err("executor", e.to_string()))?;

    let constraints: Vec<(&Node, BTreeSet<&str>)> = graph
        .nodes()
        .filter_map(|n| match &n.payload {
            Payload::EtlConstraint(c) => {
                let owners = graph
                    .nodes()
                    .filter(|o| {
                        if o.kind() != NodeKind::Concept {
                            return false;
                        }
                        let attrs = graph.attributes_of(&o.id);
                        c.attributes.iter().any(|a| attrs.contains(a.as_str()))
                    })
                    .map(|o| o.id.as_str())
                    .collect();
                Some((n, owners))
            }
            _ => None,
        })
        .collect();
    let mut checked: BTreeSet<&str> = BTreeSet::new();
    let mut artifacts: BTreeMap<String, Arc<Artifact>> = BTreeMap::new();

    for (stage_no, stage) in schedule.stages.iter().enumerate() {
        let results: Vec<(String, Result<Arc<Artifact>>)> = pool.install(|| {
            stage
                .par_iter()
                .map(|id| {
                    let node = graph.node(id).expect("scheduled node exists");
                    let inputs: Vec<Arc<Artifact>> =
                        graph.inputs_of(id).iter().map(|i| artifacts[*i].clone()).collect();
                    let out = match &node.payload {
                        Payload::Concept(_) if inputs.is_empty() => extract(node, graph, job, &resolved).map(Arc::new),
                        Payload::Concept(_) => Ok(inputs[0].clone()),
                        Payload::Transformation(t) => transform(node, &t.op, inputs, job, &resolved).map(Arc::new),
                        _ => Err(node_err(id, "not schedulable")),
                    };
                    (id.clone(), out)
                })
                .collect()
        });
        for (id, res) in results {
            let artifact = res?;
            status(&NodeStatus { stage: stage_no, node: id.clone(), detail: artifact.describe() });
            artifacts.insert(id, artifact);
        }

        for (node, owners) in &constraints {
            if checked.contains(node.id.as_str()) || !owners.iter().all(|o| artifacts.contains_key(*o)) {
                continue;
            }
            let Payload::EtlConstraint(c) = &node.payload else { unreachable!() };
            for owner in owners {
                check_predicate(&c.predicate, &c.args, &artifacts[*owner], &job.cfg).map_err(|reason| {
                    ExecError::Constraint {
                        id: node.id.clone(),
                        predicate: c.predicate.clone(),
                        reason: format!("on {owner}: {reason}"),
                    }
                })?;
            }
            checked.insert(node.id.as_str());
            status(&NodeStatus {
                stage: stage_no,
                node: node.id.clone(),
                detail: format!("constraint {} holds", c.predicate),
            });
        }
    }

    artifacts
        .values()
        .find_map(|a| match a.as_ref() {
            Artifact::Stored(o) => Some((**o).clone()),
            _ => None,
        })
        .ok_or_else(|| node_err("executor", "graph has no load step"))
}
