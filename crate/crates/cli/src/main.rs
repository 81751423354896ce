mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use colloc_etl::granule::{write_granule, FormatTag, GrammarRegistry, GranuleError};
use colloc_etl::loader::{LoadError, ProductFormat};
use colloc_etl::pipeline::{self, ExecError, GraphError, Job, PipelineGraph};
use colloc_etl::sources::{fetch_with, list_granules, FetchCache, ReaderRegistry, Source, SourceError};
use colloc_etl::synthgen::{self, gen_image, gen_track};
use colloc_etl::UtcMicros;

use config::{Config, ConfigError, TrackFixtureFormat};

const EXIT_CONFIG: u8 = 1;
const EXIT_IO: u8 = 2;
const EXIT_NO_MATCH: u8 = 3;
const EXIT_EMPTY: u8 = 4;
const EXIT_CONSTRAINT: u8 = 5;
const EXIT_CYCLE: u8 = 6;

#[derive(Parser)]
#[command(name = "colloc-etl", version, about = "Collocate geostationary imager pixels with profiler tracks")]
struct Cli {
    /// JSON configuration file.
    #[arg(long, global = true, default_value = "colloc-etl.json")]
    config: PathBuf,
    /// Worker threads (default: available processors).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List granules of a source intersecting a time window (TSV on stdout).
    List {
        #[arg(long)]
        source: String,
        #[arg(long)]
        start: UtcMicros,
        #[arg(long)]
        end: UtcMicros,
        /// Product name; defaults to the usual product of the source grammar.
        #[arg(long)]
        product: Option<String>,
        #[arg(long)]
        band: Option<u8>,
    },
    /// Fetch one granule, convert it to the common format and write it as `.sgr`.
    Fetch {
        #[arg(long)]
        source: String,
        #[arg(long)]
        uri: String,
        /// Destination file (default: `<output.dir>/<name>.sgr`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Collocate a track granule with the matching image and load the product.
    Collocate(RunArgs),
    /// Pipeline graphs.
    Pipeline {
        #[command(subcommand)]
        command: PipelineCommand,
    },
    /// Write synthetic track and scene fixtures into the configured stores.
    Synth,
}

#[derive(Subcommand)]
enum PipelineCommand {
    /// Execute a pipeline graph for a track granule.
    Run {
        /// Graph JSON file (default: the standard collocation pipeline).
        #[arg(long)]
        graph: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Print the standard collocation pipeline graph as JSON.
    Template,
}

#[derive(Args)]
struct RunArgs {
    /// Track granule name within the track source.
    #[arg(long)]
    track: String,
    /// Image granule name; selected by time when omitted.
    #[arg(long)]
    image: Option<String>,
    #[arg(long)]
    image_source: Option<String>,
    #[arg(long)]
    track_source: Option<String>,
    #[arg(long, default_value = synthgen::DEFAULT_IMAGE_PRODUCT)]
    image_product: String,
    #[arg(long)]
    band: Option<u8>,
    #[arg(long)]
    d_max_km: Option<f64>,
    #[arg(long)]
    dt_max_s: Option<f64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    format: Option<String>,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl ToString) -> Self {
        Failure { code, message: message.to_string() }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::new(EXIT_CONFIG, e)
    }
}

fn granule_code(e: &GranuleError) -> u8 {
    match e {
        GranuleError::MalformedKey { .. } | GranuleError::MissingBand | GranuleError::Invalid(_) => EXIT_CONFIG,
        _ => EXIT_IO,
    }
}

fn source_code(e: &SourceError) -> u8 {
    match e {
        SourceError::Transport(_) | SourceError::Cache(_) | SourceError::FormatMismatch { .. } => EXIT_IO,
        SourceError::Granule(g) => granule_code(g),
        SourceError::NoTemporalMatch { .. } => EXIT_NO_MATCH,
        SourceError::InvalidSpec(_) | SourceError::InvalidWindow(_) => EXIT_CONFIG,
    }
}

fn exec_code(e: &ExecError) -> u8 {
    match e {
        ExecError::Source(s) => source_code(s),
        ExecError::Granule(g) => granule_code(g),
        ExecError::Colloc(_) | ExecError::InvalidGraph(_) | ExecError::Node { .. } => EXIT_CONFIG,
        ExecError::Load(LoadError::Io { .. }) => EXIT_IO,
        ExecError::Load(_) => EXIT_IO,
        ExecError::Graph(GraphError::CyclicGraph(_)) => EXIT_CYCLE,
        ExecError::Graph(_) => EXIT_CONFIG,
        ExecError::Constraint { .. } => EXIT_CONSTRAINT,
        ExecError::EmptyProduct(_) | ExecError::EmptyTrack => EXIT_EMPTY,
    }
}

impl From<ExecError> for Failure {
    fn from(e: ExecError) -> Self {
        Failure::new(exec_code(&e), e)
    }
}

impl From<SourceError> for Failure {
    fn from(e: SourceError) -> Self {
        Failure::new(source_code(&e), e)
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::new(EXIT_IO, format!("{}: {e}", path.display()))
}

fn open_source(cfg: &Config, id: &str) -> Result<Source, Failure> {
    Ok(Source::open(cfg.source(id)?.clone(), &GrammarRegistry::default())?)
}

fn cmd_list(
    cfg: &Config,
    source: &str,
    start: UtcMicros,
    end: UtcMicros,
    product: Option<String>,
    band: Option<u8>,
) -> Result<(), Failure> {
    let src = open_source(cfg, source)?;
    let product = product.unwrap_or_else(|| match src.grammar().id() {
        "cpr" => synthgen::DEFAULT_TRACK_PRODUCT.to_string(),
        _ => synthgen::DEFAULT_IMAGE_PRODUCT.to_string(),
    });
    let listing = list_granules(&src, start, end, &product, band)?;
    let mut out = std::io::stdout().lock();
    let mut emit = || -> std::io::Result<()> {
        writeln!(out, "source_id\tproduct\tband\tt_start\tt_end\tformat\turi")?;
        for m in &listing.metas {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                m.source_id,
                m.product,
                m.band.map_or(String::new(), |b| b.to_string()),
                m.t_start,
                m.t_end,
                m.format,
                m.uri
            )?;
        }
        Ok(())
    };
    emit().map_err(|e| Failure::new(EXIT_IO, e))?;
    eprint!("{}", listing.diagnostics_jsonl());
    Ok(())
}

fn cmd_fetch(cfg: &Config, source: &str, uri: &str, out: Option<PathBuf>) -> Result<(), Failure> {
    let src = open_source(cfg, source)?;
    let mut meta = src.grammar().parse(uri).map_err(SourceError::from)?;
    meta.source_id = src.spec.id.clone();
    let g = fetch_with(&src, &meta, &ReaderRegistry::default(), FetchCache::from_env().as_ref())?;
    let out = out.unwrap_or_else(|| {
        let base = uri.rsplit('/').next().unwrap_or(uri);
        let stem = base.rsplit_once('.').map_or(base, |(s, _)| s);
        cfg.output.dir.join(format!("{stem}.sgr"))
    });
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
    }
    std::fs::write(&out, write_granule(&g)).map_err(|e| io_failure(&out, e))?;
    println!("{}", out.display());
    Ok(())
}

fn build_job(cfg: &Config, args: &RunArgs) -> Result<Job, Failure> {
    let registry = GrammarRegistry::default();
    let image_spec = cfg.source_for(args.image_source.as_deref(), "abi")?.clone();
    let track_spec = cfg.source_for(args.track_source.as_deref(), "cpr")?.clone();
    let mut colloc = cfg.colloc;
    if let Some(b) = args.band {
        colloc.band = b;
    }
    if let Some(d) = args.d_max_km {
        colloc.d_max_km = d;
    }
    if let Some(t) = args.dt_max_s {
        colloc.dt_max_s = t;
    }
    colloc.validate().map_err(|e| Failure::new(EXIT_CONFIG, e))?;
    let format = match args.format.as_deref() {
        None => cfg.output.format,
        Some("jsonl") => ProductFormat::Jsonl,
        Some("csv") => ProductFormat::Csv,
        Some(other) => return Err(Failure::new(EXIT_CONFIG, format!("unknown format {other:?}"))),
    };
    Ok(Job {
        image_source: Source::open(image_spec, &registry)?,
        track_source: Source::open(track_spec, &registry)?,
        track_uri: args.track.clone(),
        image_uri: args.image.clone(),
        image_product: args.image_product.clone(),
        cfg: colloc,
        output_dir: args.output_dir.clone().unwrap_or_else(|| cfg.output.dir.clone()),
        format,
        cache: FetchCache::from_env(),
        readers: ReaderRegistry::default(),
        created_at: UtcMicros::now(),
    })
}

fn report(outcome: &pipeline::RunOutcome) {
    eprintln!("{}", outcome.collocation.summary());
    println!("{}", outcome.product_path.display());
}

fn summarize_empty(e: &ExecError) {
    if let ExecError::EmptyProduct(summary) = e {
        eprintln!("{summary}");
    }
}

fn cmd_collocate(cfg: &Config, args: &RunArgs) -> Result<(), Failure> {
    let job = build_job(cfg, args)?;
    match pipeline::run_direct(&job) {
        Ok(o) => {
            report(&o);
            Ok(())
        }
        Err(e) => {
            summarize_empty(&e);
            Err(e.into())
        }
    }
}

fn cmd_pipeline_run(cfg: &Config, graph: Option<&Path>, args: &RunArgs, jobs: usize) -> Result<(), Failure> {
    let graph = match graph {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).map_err(|e| Failure::new(EXIT_CONFIG, format!("{}: {e}", p.display())))?;
            PipelineGraph::from_json(&text).map_err(|e| Failure::new(EXIT_CONFIG, e))?
        }
        None => pipeline::collocation_pipeline(),
    };
    let job = build_job(cfg, args)?;
    let mut status = |s: &pipeline::NodeStatus| eprintln!("{s}");
    match pipeline::run_pipeline(&graph, &job, jobs, &mut status) {
        Ok(o) => {
            report(&o);
            Ok(())
        }
        Err(e) => {
            summarize_empty(&e);
            Err(e.into())
        }
    }
}

fn write_fixture(root: &Path, uri: &str, bytes: &[u8]) -> Result<PathBuf, Failure> {
    let path = root.join(uri);
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
    }
    std::fs::write(&path, bytes).map_err(|e| io_failure(&path, e))?;
    Ok(path)
}

fn cmd_synth(cfg: &Config) -> Result<(), Failure> {
    let synth = cfg.synth.as_ref().ok_or_else(|| Failure::new(EXIT_CONFIG, "config has no synth block"))?;
    let consts = cfg.consts.resolve()?;
    if let Some(spec) = &synth.track {
        let root = Config::local_root(cfg.source_for(None, "cpr")?)?;
        let profiles = gen_track(spec).map_err(|e| Failure::new(EXIT_CONFIG, e))?;
        let g = match synth.track_format {
            TrackFixtureFormat::Raw => synthgen::raw_track_granule(&profiles),
            TrackFixtureFormat::Common => synthgen::track_meta(&profiles, FormatTag::ExtCCommon)
                .and_then(|m| Ok(colloc_etl::colloc::track_granule(m, &profiles)?)),
        }
        .map_err(|e| Failure::new(EXIT_CONFIG, e))?;
        write_fixture(&root, &g.meta().uri, &write_granule(&g))?;
        println!("track\t{}", g.meta().uri);
    }
    if let Some(spec) = &synth.scene {
        let root = Config::local_root(cfg.source_for(None, "abi")?)?;
        let g = gen_image(spec, &consts).map_err(|e| Failure::new(EXIT_CONFIG, e))?;
        write_fixture(&root, &g.meta().uri, &write_granule(&g))?;
        println!("image\t{}", g.meta().uri);
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let jobs = cli.jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())).max(1);
    if let Command::Pipeline { command: PipelineCommand::Template } = cli.command {
        println!("{}", pipeline::collocation_pipeline().to_json());
        return Ok(());
    }
    let cfg = Config::load(&cli.config)?;
    // the pool only fails if already initialized
    let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    match cli.command {
        Command::List { source, start, end, product, band } => cmd_list(&cfg, &source, start, end, product, band),
        Command::Fetch { source, uri, out } => cmd_fetch(&cfg, &source, &uri, out),
        Command::Collocate(args) => cmd_collocate(&cfg, &args),
        Command::Pipeline { command: PipelineCommand::Run { graph, run } } => {
            cmd_pipeline_run(&cfg, graph.as_deref(), &run, jobs)
        }
        Command::Pipeline { command: PipelineCommand::Template } => unreachable!(),
        Command::Synth => cmd_synth(&cfg),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
