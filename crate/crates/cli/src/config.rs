use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use colloc_etl::colloc::CollocConfig;
use colloc_etl::geodesy::EllipsoidConsts;
use colloc_etl::loader::ProductFormat;
use colloc_etl::sources::SourceSpec;
use colloc_etl::synthgen::{SceneSpec, TrackSpec};
use serde::Deserialize;

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config: {}", self.0)
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstsOverride {
    pub r_eq: Option<f64>,
    pub r_pol: Option<f64>,
    #[serde(alias = "H")]
    pub h: Option<f64>,
    pub lon0_deg: Option<f64>,
}

impl ConstsOverride {
    pub fn resolve(&self) -> Result<EllipsoidConsts, ConfigError> {
        let d = EllipsoidConsts::default();
        EllipsoidConsts::new(
            self.r_eq.unwrap_or(d.r_eq),
            self.r_pol.unwrap_or(d.r_pol),
            self.h.unwrap_or(d.h),
            self.lon0_deg.map_or(d.lon0, f64::to_radians),
        )
        .map_err(|e| ConfigError(format!("consts: {e}")))
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
    #[serde(default)]
    pub format: ProductFormat,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: default_out_dir(), format: ProductFormat::default() }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackFixtureFormat {
    /// Seconds of the year and degree coordinates, as a profiler store ships.
    #[default]
    Raw,
    Common,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub track: Option<TrackSpec>,
    pub scene: Option<SceneSpec>,
    #[serde(default)]
    pub track_format: TrackFixtureFormat,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub consts: ConstsOverride,
    pub sources: Vec<SourceSpec>,
    pub colloc: CollocConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub synth: Option<SynthConfig>,
}

fn is_url(root: &str) -> bool {
    root.contains("://")
}

impl Config {
    /// Parses and validates `path`. Relative local paths are taken relative
    /// to the directory holding the config file.
    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        let mut cfg: Config =
            serde_json::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for s in &mut cfg.sources {
            if !is_url(&s.root) && Path::new(&s.root).is_relative() {
                s.root = base.join(&s.root).to_string_lossy().into_owned();
            }
        }
        if cfg.output.dir.is_relative() {
            cfg.output.dir = base.join(&cfg.output.dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.consts.resolve()?;
        self.colloc.validate().map_err(|e| ConfigError(format!("colloc: {e}")))?;
        let mut ids = BTreeSet::new();
        for s in &self.sources {
            s.validate().map_err(|e| ConfigError(e.to_string()))?;
            if !ids.insert(s.id.as_str()) {
                return Err(ConfigError(format!("duplicate source id {:?}", s.id)));
            }
        }
        if let Some(scene) = self.synth.as_ref().and_then(|s| s.scene.as_ref()) {
            if scene.band != self.colloc.band {
                return Err(ConfigError(format!(
                    "synth scene band {} differs from colloc band {}",
                    scene.band, self.colloc.band
                )));
            }
        }
        Ok(())
    }

    pub fn source(&self, id: &str) -> Result<&SourceSpec, ConfigError> {
        self.sources.iter().find(|s| s.id == id).ok_or_else(|| ConfigError(format!("no source {id:?}")))
    }

    /// The source named `explicit`, or the only source using `grammar`.
    pub fn source_for(&self, explicit: Option<&str>, grammar: &str) -> Result<&SourceSpec, ConfigError> {
        if let Some(id) = explicit {
            return self.source(id);
        }
        let mut hits = self.sources.iter().filter(|s| s.grammar_id().ok() == Some(grammar));
        match (hits.next(), hits.next()) {
            (Some(s), None) => Ok(s),
            (None, _) => Err(ConfigError(format!("no source uses the {grammar} grammar"))),
            (Some(_), Some(_)) => {
                Err(ConfigError(format!("several sources use the {grammar} grammar; pick one explicitly")))
            }
        }
    }

    /// Filesystem root of a source stored on local disk.
    pub fn local_root(spec: &SourceSpec) -> Result<PathBuf, ConfigError> {
        if let Some(p) = spec.root.strip_prefix("file://") {
            return Ok(PathBuf::from(p));
        }
        if is_url(&spec.root) {
            return Err(ConfigError(format!("source {:?} is not on local disk", spec.id)));
        }
        Ok(PathBuf::from(&spec.root))
    }
}
