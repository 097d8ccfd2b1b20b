//! Command-line front end.

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use modtrans_core::{DiffMode, ParallelismStrategy};

use crate::error::Error;
use crate::pipeline::{self, ExtractOptions, GenerateOptions, ModelSource, ZooContext};
use crate::zoo::{fetch_model, FetchSource, HttpTransport, ModelCache, Transport, ZooManifest};

/// Translate ONNX models into distributed-training simulator workload files.
///
/// Exit codes: 0 success, 1 diff found differences, 2 decode error or
/// unknown zoo model (also bad usage), 3 layer extraction error, 4 workload
/// generation error, 5 I/O or network error.
#[derive(Debug, Parser)]
#[command(name = "modtrans", version)]
pub struct Cli {
    /// Zoo manifest JSON to use instead of the bundled one.
    #[arg(long, global = true, value_name = "FILE")]
    pub manifest: Option<PathBuf>,
    /// Never touch the network; zoo models must already be cached.
    #[arg(long, global = true)]
    pub offline: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the workload file for a model.
    Translate(TranslateArgs),
    /// Print the per-layer table of a model.
    Inspect(InspectArgs),
    /// Compare per-layer sizes of two models or workload files.
    Diff(DiffArgs),
    /// Download zoo models into the cache.
    Fetch(FetchArgs),
    /// List the models in the zoo manifest.
    List,
}

#[derive(Debug, Args)]
#[group(id = "source", required = true, multiple = false)]
pub struct SourceArgs {
    /// ONNX file on disk.
    #[arg(long, short = 'i', group = "source", value_name = "FILE")]
    pub input: Option<PathBuf>,
    /// Zoo model name (see `modtrans list`).
    #[arg(long, short = 'm', group = "source", value_name = "NAME")]
    pub model: Option<String>,
}

impl SourceArgs {
    fn source(&self) -> ModelSource {
        match (&self.input, &self.model) {
            (Some(p), _) => ModelSource::File(p.clone()),
            (None, Some(name)) => ModelSource::Zoo(name.clone()),
            (None, None) => unreachable!("clap enforces one source"),
        }
    }
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    /// Layer name prefix; defaults to the file stem or zoo name.
    #[arg(long)]
    pub label: Option<String>,
    /// `raw-name<TAB>layer-name` overrides.
    #[arg(long, value_name = "FILE")]
    pub rename_map: Option<PathBuf>,
    /// Minimum tensor rank counted as a layer.
    #[arg(long, default_value_t = 2)]
    pub min_rank: usize,
    /// Drop initializers whose name contains this substring. Repeatable.
    #[arg(long, value_name = "SUBSTRING")]
    pub exclude: Vec<String>,
    /// Keep every initializer, ignoring --min-rank and --exclude.
    #[arg(long)]
    pub include_all: bool,
}

impl FilterArgs {
    fn options(&self, source: &ModelSource) -> Result<ExtractOptions, Error> {
        let label = self.label.clone().unwrap_or_else(|| source.default_label());
        let mut opts = ExtractOptions::new(label);
        opts.policy.min_rank = self.min_rank;
        opts.policy.name_excludes = self.exclude.clone();
        opts.policy.include_all = self.include_all;
        if let Some(path) = &self.rename_map {
            opts.load_rename_map(path)?;
        }
        Ok(opts)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Data,
    Model,
    Hybrid,
}

impl From<StrategyArg> for ParallelismStrategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Data => ParallelismStrategy::Data,
            StrategyArg::Model => ParallelismStrategy::Model,
            StrategyArg::Hybrid => ParallelismStrategy::HybridDataModel,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Format {
    #[default]
    Table,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Ordered,
    Multiset,
}

impl From<ModeArg> for DiffMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Ordered => DiffMode::Ordered,
            ModeArg::Multiset => DiffMode::Multiset,
        }
    }
}

#[derive(Debug, Args)]
pub struct TranslateArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long, short = 's', value_enum, default_value = "data")]
    pub strategy: StrategyArg,
    /// Output path; standard output when absent.
    #[arg(long, short = 'o', value_name = "FILE")]
    pub output: Option<PathBuf>,
    /// `layer fwd ig wg update` lines; `*` sets the default.
    #[arg(long, value_name = "FILE")]
    pub compute_table: Option<PathBuf>,
    /// `layer bytes` lines, required by model and hybrid strategies.
    #[arg(long, value_name = "FILE")]
    pub activation_table: Option<PathBuf>,
    /// `layer DATA|MODEL` lines, required by the hybrid strategy.
    #[arg(long, value_name = "FILE")]
    pub hybrid_map: Option<PathBuf>,
    #[command(flatten)]
    pub filter: FilterArgs,
    /// Print decode+extract+emit wall time in milliseconds to stderr.
    #[arg(long)]
    pub time: bool,
    /// Run the translation N times and report the median.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    pub repeat: u32,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub filter: FilterArgs,
    #[arg(long, value_enum, default_value = "table")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct DiffArgs {
    /// ONNX model or workload file.
    pub left: PathBuf,
    /// ONNX model or workload file.
    pub right: PathBuf,
    #[arg(long, value_enum, default_value = "ordered")]
    pub mode: ModeArg,
    #[arg(long, value_enum, default_value = "table")]
    pub format: Format,
    #[command(flatten)]
    pub filter: FilterArgs,
}

#[derive(Debug, Args)]
pub struct FetchArgs {
    #[arg(required = true)]
    pub names: Vec<String>,
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run_from<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli, out, err),
        Err(e) => {
            let code = e.exit_code();
            let rendered = e.render();
            if code == 0 {
                let _ = write!(out, "{rendered}");
            } else {
                let _ = write!(err, "{}", rendered.ansi());
            }
            code
        }
    }
}

pub fn run(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    match dispatch(&cli, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn manifest(cli: &Cli) -> Result<ZooManifest, Error> {
    match &cli.manifest {
        Some(path) => Ok(ZooManifest::load(path)?),
        None => Ok(ZooManifest::bundled()),
    }
}

fn zoo_context(cli: &Cli) -> Result<ZooContext, Error> {
    Ok(ZooContext {
        manifest: manifest(cli)?,
        cache: ModelCache::from_env()?,
        offline: cli.offline,
    })
}

fn load(cli: &Cli, source: &ModelSource) -> Result<Vec<u8>, Error> {
    match source {
        ModelSource::File(_) => pipeline::load_model(source, None),
        ModelSource::Zoo(_) => pipeline::load_model(source, Some(&zoo_context(cli)?)),
    }
}

fn io_out(e: std::io::Error) -> Error {
    Error::Io {
        path: "<stdout>".into(),
        source: e,
    }
}

fn dispatch(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, Error> {
    match &cli.command {
        Command::Translate(args) => translate(cli, args, out, err),
        Command::Inspect(args) => {
            let source = args.source.source();
            let opts = args.filter.options(&source)?;
            let bytes = load(cli, &source)?;
            let layers = pipeline::extract(&bytes, &source.display(), &opts)?;
            let text = match args.format {
                Format::Table => pipeline::render_layer_table(&layers),
                Format::Json => pipeline::render_layers_json(&layers),
            };
            out.write_all(text.as_bytes()).map_err(io_out)?;
            Ok(0)
        }
        Command::Diff(args) => {
            let side = |path: &PathBuf| -> Result<Vec<u64>, Error> {
                let source = ModelSource::File(path.clone());
                let opts = args.filter.options(&source)?;
                let bytes = pipeline::read_file(path)?;
                pipeline::operand_sizes(&bytes, &source.display(), &opts)
            };
            let left = side(&args.left)?;
            let right = side(&args.right)?;
            let report = pipeline::diff_operands(&left, &right, args.mode.into());
            let text = match args.format {
                Format::Table => pipeline::render_diff(
                    &report,
                    &args.left.display().to_string(),
                    &args.right.display().to_string(),
                ),
                Format::Json => pipeline::render_diff_json(&report),
            };
            out.write_all(text.as_bytes()).map_err(io_out)?;
            Ok(if report.is_match { 0 } else { 1 })
        }
        Command::Fetch(args) => {
            let zoo = zoo_context(cli)?;
            let http = HttpTransport::default();
            let transport: Option<&dyn Transport> = if zoo.offline { None } else { Some(&http) };
            for name in &args.names {
                let fetched = fetch_model(name, &zoo.manifest, &zoo.cache, transport)?;
                let how = match fetched.source {
                    FetchSource::Cache => "cache hit",
                    FetchSource::Network => "downloaded",
                };
                if fetched.trusted_on_first_use {
                    let _ = writeln!(
                        err,
                        "warning: {name}: manifest pins no sha256; recorded {} for future checks",
                        fetched.entry.sha256
                    );
                }
                writeln!(
                    out,
                    "{name}: {how} ({} bytes, sha256 {}) {}",
                    fetched.bytes.len(),
                    fetched.entry.sha256,
                    fetched.entry.path.display()
                )
                .map_err(io_out)?;
            }
            Ok(0)
        }
        Command::List => {
            let m = manifest(cli)?;
            for name in m.list_models() {
                let entry = m.get(name).expect("listed name exists");
                writeln!(out, "{name}\t{}", entry.url).map_err(io_out)?;
            }
            Ok(0)
        }
    }
}

fn translate(
    cli: &Cli,
    args: &TranslateArgs,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<i32, Error> {
    let source = args.source.source();
    let extract_opts = args.filter.options(&source)?;
    let mut gen = GenerateOptions::new(args.strategy.into());
    if let Some(p) = &args.compute_table {
        gen.load_compute_times(p)?;
    }
    if let Some(p) = &args.activation_table {
        gen.load_activation_sizes(p)?;
    }
    if let Some(p) = &args.hybrid_map {
        gen.load_hybrid_tags(p)?;
    }

    // Fetching and file reads happen before the clock starts.
    let bytes = load(cli, &source)?;
    let (t, elapsed) = pipeline::translate_timed(
        &bytes,
        &source.display(),
        &extract_opts,
        &gen,
        args.repeat as usize,
    )?;

    for name in &t.unused_entries {
        let _ = writeln!(
            err,
            "warning: compute table entry {name:?} matches no layer"
        );
    }
    match &args.output {
        Some(path) => fs::write(path, &t.text).map_err(Error::io(path))?,
        None => out.write_all(t.text.as_bytes()).map_err(io_out)?,
    }
    if args.time {
        let _ = writeln!(
            err,
            "translate_ms: {:.3} ({} layers, median of {})",
            elapsed.as_secs_f64() * 1e3,
            t.layers.len(),
            args.repeat
        );
    }
    Ok(0)
}
