//! File-level pipeline: load a model, decode, extract, generate, emit.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use modtrans_core::{
    diff_sizes, emit_workload, extract_layers, generate_workload, parse_model, parse_workload,
    ActivationSizes, CommInputs, ComputeTimeTable, DiffMode, DiffReport, FilterPolicy, HybridTags,
    LayerNaming, LayerRecord, ParallelismStrategy, RenameMap, WorkloadFile,
};

use crate::error::Error;
use crate::zoo::{fetch_model, FetchSource, HttpTransport, ModelCache, ZooManifest};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelSource {
    File(PathBuf),
    Zoo(String),
}

impl ModelSource {
    /// File stem or zoo name; replaces the exporter prefix in layer names.
    pub fn default_label(&self) -> String {
        match self {
            ModelSource::File(p) => p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "model".into()),
            ModelSource::Zoo(name) => name.clone(),
        }
    }

    pub fn display(&self) -> String {
        match self {
            ModelSource::File(p) => p.display().to_string(),
            ModelSource::Zoo(name) => format!("zoo:{name}"),
        }
    }
}

/// Manifest, cache and network policy for zoo lookups.
pub struct ZooContext {
    pub manifest: ZooManifest,
    pub cache: ModelCache,
    pub offline: bool,
}

impl ZooContext {
    pub fn fetch(&self, name: &str) -> Result<(Vec<u8>, FetchSource), Error> {
        let http = HttpTransport::default();
        let transport: Option<&dyn crate::zoo::Transport> =
            if self.offline { None } else { Some(&http) };
        let fetched = fetch_model(name, &self.manifest, &self.cache, transport)?;
        Ok((fetched.bytes, fetched.source))
    }
}

pub fn read_file(path: &Path) -> Result<Vec<u8>, Error> {
    fs::read(path).map_err(Error::io(path))
}

pub fn read_text(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path).map_err(Error::io(path))
}

/// Model bytes for `source`. Zoo models go through the cache.
pub fn load_model(source: &ModelSource, zoo: Option<&ZooContext>) -> Result<Vec<u8>, Error> {
    match source {
        ModelSource::File(path) => read_file(path),
        ModelSource::Zoo(name) => {
            let zoo = zoo.expect("zoo context required for zoo sources");
            Ok(zoo.fetch(name)?.0)
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ExtractOptions {
    pub policy: FilterPolicy,
    pub naming: LayerNaming,
}

impl ExtractOptions {
    pub fn new(label: impl Into<String>) -> Self {
        ExtractOptions {
            policy: FilterPolicy::default(),
            naming: LayerNaming::new(label),
        }
    }

    pub fn load_rename_map(&mut self, path: &Path) -> Result<(), Error> {
        let text = read_text(path)?;
        self.naming.renames = RenameMap::parse(&text).map_err(|source| Error::RenameMap {
            path: path.into(),
            source,
        })?;
        Ok(())
    }
}

/// Decodes `bytes` and extracts its layer records. An empty result is an
/// error: there is nothing to translate.
pub fn extract(
    bytes: &[u8],
    display: &str,
    opts: &ExtractOptions,
) -> Result<Vec<LayerRecord>, Error> {
    let model = parse_model(bytes).map_err(|source| Error::Decode {
        path: display.into(),
        source,
    })?;
    let layers = extract_layers(&model.graph, &opts.policy, &opts.naming).map_err(|source| {
        Error::Extract {
            model: display.into(),
            source,
        }
    })?;
    if layers.is_empty() {
        return Err(Error::NoLayers {
            model: display.into(),
        });
    }
    Ok(layers)
}

#[derive(Debug, Clone, Default)]
pub struct GenerateOptions {
    pub strategy: ParallelismStrategy,
    pub activation_sizes: Option<ActivationSizes>,
    pub hybrid_tags: Option<HybridTags>,
    pub compute_times: ComputeTimeTable,
}

impl GenerateOptions {
    pub fn new(strategy: ParallelismStrategy) -> Self {
        GenerateOptions {
            strategy,
            ..Default::default()
        }
    }

    pub fn load_activation_sizes(&mut self, path: &Path) -> Result<(), Error> {
        let text = read_text(path)?;
        self.activation_sizes =
            Some(
                ActivationSizes::parse(&text).map_err(|source| Error::Table {
                    what: "activation table",
                    path: path.into(),
                    source,
                })?,
            );
        Ok(())
    }

    pub fn load_hybrid_tags(&mut self, path: &Path) -> Result<(), Error> {
        let text = read_text(path)?;
        self.hybrid_tags = Some(HybridTags::parse(&text).map_err(|source| Error::Table {
            what: "hybrid map",
            path: path.into(),
            source,
        })?);
        Ok(())
    }

    pub fn load_compute_times(&mut self, path: &Path) -> Result<(), Error> {
        let text = read_text(path)?;
        self.compute_times = ComputeTimeTable::parse(&text).map_err(|source| Error::Table {
            what: "compute table",
            path: path.into(),
            source,
        })?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Translation {
    pub layers: Vec<LayerRecord>,
    pub workload: WorkloadFile,
    pub text: String,
    /// Compute-table entries that matched no layer.
    pub unused_entries: Vec<String>,
}

/// decode + extract + generate + emit, all in memory.
pub fn translate(
    bytes: &[u8],
    display: &str,
    extract_opts: &ExtractOptions,
    gen: &GenerateOptions,
) -> Result<Translation, Error> {
    let layers = extract(bytes, display, extract_opts)?;
    let inputs = CommInputs {
        activation_sizes: gen.activation_sizes.as_ref(),
        hybrid_tags: gen.hybrid_tags.as_ref(),
    };
    let (workload, unused_entries) =
        generate_workload(&layers, gen.strategy, &inputs, &gen.compute_times)?;
    let text = emit_workload(&workload);
    Ok(Translation {
        layers,
        workload,
        text,
        unused_entries,
    })
}

/// Runs [`translate`] `repeat` times (at least once) and returns the last
/// result with the median wall-clock duration.
pub fn translate_timed(
    bytes: &[u8],
    display: &str,
    extract_opts: &ExtractOptions,
    gen: &GenerateOptions,
    repeat: usize,
) -> Result<(Translation, Duration), Error> {
    let mut samples = Vec::with_capacity(repeat.max(1));
    let mut last = None;
    for _ in 0..repeat.max(1) {
        let start = Instant::now();
        let t = translate(bytes, display, extract_opts, gen)?;
        samples.push(start.elapsed());
        last = Some(t);
    }
    Ok((last.expect("at least one run"), median(&mut samples)))
}

/// Upper median for even counts.
pub fn median(samples: &mut [Duration]) -> Duration {
    samples.sort_unstable();
    samples[samples.len() / 2]
}

pub fn render_layer_table(layers: &[LayerRecord]) -> String {
    let headers = ["Name", "Variables", "DataType", "ModelSize"];
    let rows: Vec<[String; 4]> = layers
        .iter()
        .map(|l| {
            [
                l.name.clone(),
                l.variables.to_string(),
                l.dtype.to_string(),
                l.model_size_bytes.to_string(),
            ]
        })
        .collect();
    let mut widths = headers.map(str::len);
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let mut line = |cells: [&str; 4]| {
        let _ = writeln!(
            out,
            "{:<w0$}  {:>w1$}  {:<w2$}  {:>w3$}",
            cells[0],
            cells[1],
            cells[2],
            cells[3],
            w0 = widths[0],
            w1 = widths[1],
            w2 = widths[2],
            w3 = widths[3],
        );
    };
    line(headers);
    for row in &rows {
        line([&row[0], &row[1], &row[2], &row[3]]);
    }
    let total: u64 = layers.iter().map(|l| l.model_size_bytes).sum();
    let _ = writeln!(out, "{} layers, {} bytes", layers.len(), total);
    out
}

pub fn render_layers_json(layers: &[LayerRecord]) -> String {
    serde_json::to_string_pretty(layers).expect("layer records serialize") + "\n"
}

/// A workload file is recognized by its first content line being a
/// strategy token; anything else is decoded as ONNX.
pub fn looks_like_workload(bytes: &[u8]) -> bool {
    let Ok(text) = std::str::from_utf8(bytes) else {
        return false;
    };
    text.lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .and_then(ParallelismStrategy::from_token)
        .is_some()
}

/// Per-layer sizes of a diff operand: weight-gradient communication sizes
/// for a workload file, extracted model sizes for an ONNX model.
pub fn operand_sizes(
    bytes: &[u8],
    display: &str,
    opts: &ExtractOptions,
) -> Result<Vec<u64>, Error> {
    if looks_like_workload(bytes) {
        let text = std::str::from_utf8(bytes).expect("checked above");
        let w = parse_workload(text).map_err(|source| Error::WorkloadParse {
            path: display.into(),
            source,
        })?;
        Ok(w.wg_sizes())
    } else {
        Ok(extract(bytes, display, opts)?
            .iter()
            .map(|l| l.model_size_bytes)
            .collect())
    }
}

pub fn diff_operands(left: &[u64], right: &[u64], mode: DiffMode) -> DiffReport {
    diff_sizes(left, right, mode)
}

pub fn render_diff(report: &DiffReport, left: &str, right: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "left:  {left} ({} layers)", report.left_len);
    let _ = writeln!(out, "right: {right} ({} layers)", report.right_len);
    let _ = writeln!(out, "mode:  {}", report.mode);
    match report.mode {
        DiffMode::Ordered => {
            for m in &report.mismatches {
                let _ = writeln!(out, "  position {:>4}: {} != {}", m.key, m.left, m.right);
            }
        }
        DiffMode::Multiset => {
            for m in &report.mismatches {
                let _ = writeln!(
                    out,
                    "  size {}: {} vs {} occurrences",
                    m.key, m.left, m.right
                );
            }
        }
    }
    if !report.left_only.is_empty() {
        let _ = writeln!(out, "  only left:  {:?}", report.left_only);
    }
    if !report.right_only.is_empty() {
        let _ = writeln!(out, "  only right: {:?}", report.right_only);
    }
    if report.is_match {
        let _ = writeln!(out, "match");
    } else {
        let _ = writeln!(out, "{} mismatches", report.mismatches.len());
    }
    out
}

pub fn render_diff_json(report: &DiffReport) -> String {
    serde_json::to_string_pretty(report).expect("diff report serializes") + "\n"
}
