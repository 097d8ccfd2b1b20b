//! Simulator workload description: per-layer compute times and collective
//! communication under a parallelism strategy.
//!
//! Text format, LF-terminated, single spaces:
//!
//! ```text
//! DATA
//! 2
//! conv0 -1 1 NONE 0 1 NONE 0 1 ALLREDUCE 6912 1
//! dense0 -1 1 NONE 0 1 NONE 0 1 ALLREDUCE 16384000 1
//! ```
//!
//! Layer lines are `name -1 fwd_compute fwd_comm_type fwd_comm_size
//! ig_compute ig_comm_type ig_comm_size wg_compute wg_comm_type wg_comm_size
//! wg_update_time`. The `-1` column is reserved. Communication sizes are bytes;
//! compute times are opaque cycle counts.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::{self, Write as _};

use thiserror::Error;

use crate::layers::LayerRecord;
use crate::text::{content_lines, parse_u64, TableError};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub enum ParallelismStrategy {
    #[default]
    Data,
    Model,
    HybridDataModel,
}

impl ParallelismStrategy {
    pub const ALL: [ParallelismStrategy; 3] = [Self::Data, Self::Model, Self::HybridDataModel];

    pub fn token(self) -> &'static str {
        match self {
            Self::Data => "DATA",
            Self::Model => "MODEL",
            Self::HybridDataModel => "HYBRID_DATA_MODEL",
        }
    }

    pub fn from_token(token: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.token() == token)
    }
}

impl fmt::Display for ParallelismStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub enum CommType {
    None,
    AllReduce,
    AllGather,
    AllToAll,
    ReduceScatter,
}

impl CommType {
    pub const ALL: [CommType; 5] = [
        Self::None,
        Self::AllReduce,
        Self::AllGather,
        Self::AllToAll,
        Self::ReduceScatter,
    ];

    pub fn token(self) -> &'static str {
        match self {
            Self::None => "NONE",
            Self::AllReduce => "ALLREDUCE",
            Self::AllGather => "ALLGATHER",
            Self::AllToAll => "ALLTOALL",
            Self::ReduceScatter => "REDUCESCATTER",
        }
    }

    pub fn from_token(token: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.token() == token)
    }
}

impl fmt::Display for CommType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("communication {comm_type} with size {size_bytes} (NONE iff size is 0)")]
pub struct InvalidComm {
    pub comm_type: CommType,
    pub size_bytes: u64,
}

/// A collective and its payload. `NONE` carries exactly zero bytes and every
/// other collective carries at least one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct CommDescriptor {
    comm_type: CommType,
    size_bytes: u64,
}

impl CommDescriptor {
    pub const NONE: CommDescriptor = CommDescriptor {
        comm_type: CommType::None,
        size_bytes: 0,
    };

    pub fn new(comm_type: CommType, size_bytes: u64) -> Result<Self, InvalidComm> {
        if (comm_type == CommType::None) != (size_bytes == 0) {
            return Err(InvalidComm {
                comm_type,
                size_bytes,
            });
        }
        Ok(CommDescriptor {
            comm_type,
            size_bytes,
        })
    }

    pub fn comm_type(&self) -> CommType {
        self.comm_type
    }

    pub fn size_bytes(&self) -> u64 {
        self.size_bytes
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkloadLayerLine {
    pub name: String,
    pub fwd_compute: u64,
    pub fwd_comm: CommDescriptor,
    pub ig_compute: u64,
    pub ig_comm: CommDescriptor,
    pub wg_compute: u64,
    pub wg_comm: CommDescriptor,
    pub wg_update_time: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InvalidWorkload {
    #[error("a workload needs at least one layer")]
    NoLayers,
    #[error("layer name {0:?} is empty or contains whitespace")]
    BadLayerName(String),
}

/// A validated workload: at least one layer, every name a single token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkloadFile {
    strategy: ParallelismStrategy,
    layers: Vec<WorkloadLayerLine>,
}

fn valid_layer_name(name: &str) -> bool {
    !name.is_empty() && !name.chars().any(char::is_whitespace)
}

impl WorkloadFile {
    pub fn new(
        strategy: ParallelismStrategy,
        layers: Vec<WorkloadLayerLine>,
    ) -> Result<Self, InvalidWorkload> {
        if layers.is_empty() {
            return Err(InvalidWorkload::NoLayers);
        }
        if let Some(bad) = layers.iter().find(|l| !valid_layer_name(&l.name)) {
            return Err(InvalidWorkload::BadLayerName(bad.name.clone()));
        }
        Ok(WorkloadFile { strategy, layers })
    }

    pub fn strategy(&self) -> ParallelismStrategy {
        self.strategy
    }

    pub fn layers(&self) -> &[WorkloadLayerLine] {
        &self.layers
    }

    /// Weight-gradient communication sizes in layer order.
    pub fn wg_sizes(&self) -> Vec<u64> {
        self.layers.iter().map(|l| l.wg_comm.size_bytes()).collect()
    }
}

/// Serializes `w` in the canonical text form. Output depends only on `w`.
pub fn emit_workload(w: &WorkloadFile) -> String {
    let mut out = String::new();
    // Writing into a String cannot fail.
    let _ = writeln!(out, "{}", w.strategy.token());
    let _ = writeln!(out, "{}", w.layers.len());
    for l in &w.layers {
        let _ = writeln!(
            out,
            "{} -1 {} {} {} {} {} {} {} {} {} {}",
            l.name,
            l.fwd_compute,
            l.fwd_comm.comm_type,
            l.fwd_comm.size_bytes,
            l.ig_compute,
            l.ig_comm.comm_type,
            l.ig_comm.size_bytes,
            l.wg_compute,
            l.wg_comm.comm_type,
            l.wg_comm.size_bytes,
            l.wg_update_time,
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WorkloadParseError {
    #[error("workload text is empty")]
    Empty,
    #[error("line {line}: unknown parallelism strategy {token:?}")]
    UnknownStrategy { line: usize, token: String },
    #[error("missing layer count line")]
    MissingCount,
    #[error("line {line}: layer count {token:?} is not a non-negative integer")]
    BadCount { line: usize, token: String },
    #[error("header declares {declared} layers, found {found}")]
    CountMismatch { declared: u64, found: usize },
    #[error("line {line}: expected 12 fields, found {found}")]
    FieldCount { line: usize, found: usize },
    #[error("line {line}: field {field} value {token:?} is not an integer")]
    BadNumber {
        line: usize,
        field: &'static str,
        token: String,
    },
    #[error("line {line}: unknown communication type {token:?}")]
    UnknownCommType { line: usize, token: String },
    #[error("line {line}: {source}")]
    InvalidComm { line: usize, source: InvalidComm },
    #[error(transparent)]
    Invalid(#[from] InvalidWorkload),
}

/// Parses workload text.
///
/// Accepts the canonical output of [`emit_workload`] and tolerates foreign
/// formatting: runs of spaces or tabs, CRLF line ends, blank lines and a
/// missing final newline. The reserved column may hold any integer.
pub fn parse_workload(text: &str) -> Result<WorkloadFile, WorkloadParseError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());

    let (line, token) = lines.next().ok_or(WorkloadParseError::Empty)?;
    let strategy = ParallelismStrategy::from_token(token).ok_or_else(|| {
        WorkloadParseError::UnknownStrategy {
            line,
            token: token.into(),
        }
    })?;

    let (line, token) = lines.next().ok_or(WorkloadParseError::MissingCount)?;
    let declared = parse_u64(token).ok_or_else(|| WorkloadParseError::BadCount {
        line,
        token: token.into(),
    })?;

    let layers = lines
        .map(|(line, text)| parse_layer_line(line, text))
        .collect::<Result<Vec<_>, _>>()?;
    if declared != layers.len() as u64 {
        return Err(WorkloadParseError::CountMismatch {
            declared,
            found: layers.len(),
        });
    }
    Ok(WorkloadFile::new(strategy, layers)?)
}

fn parse_layer_line(line: usize, text: &str) -> Result<WorkloadLayerLine, WorkloadParseError> {
    let fields: Vec<&str> = text.split_whitespace().collect();
    if fields.len() != 12 {
        return Err(WorkloadParseError::FieldCount {
            line,
            found: fields.len(),
        });
    }
    let num = |idx: usize, field: &'static str| {
        parse_u64(fields[idx]).ok_or_else(|| WorkloadParseError::BadNumber {
            line,
            field,
            token: fields[idx].into(),
        })
    };
    let comm = |idx: usize, field: &'static str| -> Result<CommDescriptor, WorkloadParseError> {
        let comm_type = CommType::from_token(fields[idx]).ok_or_else(|| {
            WorkloadParseError::UnknownCommType {
                line,
                token: fields[idx].into(),
            }
        })?;
        let size = num(idx + 1, field)?;
        CommDescriptor::new(comm_type, size)
            .map_err(|source| WorkloadParseError::InvalidComm { line, source })
    };
    if fields[1].parse::<i64>().is_err() {
        return Err(WorkloadParseError::BadNumber {
            line,
            field: "reserved",
            token: fields[1].into(),
        });
    }
    Ok(WorkloadLayerLine {
        name: fields[0].into(),
        fwd_compute: num(2, "fwd_compute")?,
        fwd_comm: comm(3, "fwd_comm_size")?,
        ig_compute: num(5, "ig_compute")?,
        ig_comm: comm(6, "ig_comm_size")?,
        wg_compute: num(8, "wg_compute")?,
        wg_comm: comm(9, "wg_comm_size")?,
        wg_update_time: num(11, "wg_update_time")?,
    })
}

/// Per-layer activation sizes in bytes, needed for model parallelism.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ActivationSizes {
    entries: BTreeMap<String, u64>,
}

impl ActivationSizes {
    /// Parses `name size` lines.
    pub fn parse(text: &str) -> Result<Self, TableError> {
        let mut entries = BTreeMap::new();
        for (line, content) in content_lines(text) {
            let mut it = content.split_whitespace();
            let (Some(name), Some(size), None) = (it.next(), it.next(), it.next()) else {
                return Err(TableError::Malformed {
                    line,
                    reason: "expected `name size_bytes`",
                });
            };
            let size = parse_u64(size).ok_or(TableError::Malformed {
                line,
                reason: "size is not an unsigned integer",
            })?;
            if entries.insert(name.to_string(), size).is_some() {
                return Err(TableError::Duplicate {
                    line,
                    key: name.into(),
                });
            }
        }
        Ok(ActivationSizes { entries })
    }

    pub fn insert(&mut self, name: impl Into<String>, size_bytes: u64) {
        self.entries.insert(name.into(), size_bytes);
    }

    pub fn get(&self, name: &str) -> Option<u64> {
        self.entries.get(name).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerTag {
    Data,
    Model,
}

/// Per-layer DATA/MODEL choice for hybrid parallelism.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HybridTags {
    entries: BTreeMap<String, LayerTag>,
}

impl HybridTags {
    /// Parses `name DATA|MODEL` lines.
    pub fn parse(text: &str) -> Result<Self, TableError> {
        let mut entries = BTreeMap::new();
        for (line, content) in content_lines(text) {
            let mut it = content.split_whitespace();
            let (Some(name), Some(tag), None) = (it.next(), it.next(), it.next()) else {
                return Err(TableError::Malformed {
                    line,
                    reason: "expected `name DATA|MODEL`",
                });
            };
            let tag = match tag {
                "DATA" => LayerTag::Data,
                "MODEL" => LayerTag::Model,
                _ => {
                    return Err(TableError::Malformed {
                        line,
                        reason: "tag must be DATA or MODEL",
                    })
                }
            };
            if entries.insert(name.to_string(), tag).is_some() {
                return Err(TableError::Duplicate {
                    line,
                    key: name.into(),
                });
            }
        }
        Ok(HybridTags { entries })
    }

    pub fn insert(&mut self, name: impl Into<String>, tag: LayerTag) {
        self.entries.insert(name.into(), tag);
    }

    pub fn get(&self, name: &str) -> Option<LayerTag> {
        self.entries.get(name).copied()
    }
}

/// Optional side tables consulted by [`assign_communication`].
#[derive(Debug, Clone, Copy, Default)]
pub struct CommInputs<'a> {
    pub activation_sizes: Option<&'a ActivationSizes>,
    pub hybrid_tags: Option<&'a HybridTags>,
}

/// The three communication phases of one layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerComm {
    pub name: String,
    pub fwd: CommDescriptor,
    pub ig: CommDescriptor,
    pub wg: CommDescriptor,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GenerateError {
    #[error("no layers to generate a workload from")]
    NoLayers,
    #[error("{strategy} parallelism needs an activation-size table (layer {layer:?})")]
    MissingActivationTable {
        strategy: ParallelismStrategy,
        layer: String,
    },
    #[error("activation-size table has no entry for layer {0:?}")]
    MissingActivationSize(String),
    #[error("activation size of layer {0:?} is zero")]
    ZeroActivationSize(String),
    #[error("hybrid parallelism needs a DATA/MODEL tag map")]
    MissingHybridTags,
    #[error("hybrid tag map has no entry for layer {0:?}")]
    MissingHybridTag(String),
    #[error(transparent)]
    Invalid(#[from] InvalidWorkload),
}

fn data_rule(layer: &LayerRecord) -> LayerComm {
    LayerComm {
        name: layer.name.clone(),
        fwd: CommDescriptor::NONE,
        ig: CommDescriptor::NONE,
        // Extracted layers are never empty, so the size is non-zero.
        wg: CommDescriptor {
            comm_type: CommType::AllReduce,
            size_bytes: layer.model_size_bytes,
        },
    }
}

fn model_rule(
    layer: &LayerRecord,
    strategy: ParallelismStrategy,
    sizes: Option<&ActivationSizes>,
) -> Result<LayerComm, GenerateError> {
    let sizes = sizes.ok_or_else(|| GenerateError::MissingActivationTable {
        strategy,
        layer: layer.name.clone(),
    })?;
    let size = sizes
        .get(&layer.name)
        .ok_or_else(|| GenerateError::MissingActivationSize(layer.name.clone()))?;
    let gather = CommDescriptor::new(CommType::AllGather, size)
        .map_err(|_| GenerateError::ZeroActivationSize(layer.name.clone()))?;
    Ok(LayerComm {
        name: layer.name.clone(),
        fwd: gather,
        ig: gather,
        wg: CommDescriptor::NONE,
    })
}

/// Chooses the collectives of every layer.
///
/// * DATA: gradients are all-reduced, `wg = ALLREDUCE(model_size_bytes)`.
/// * MODEL: activations are all-gathered forward and backward,
///   `fwd = ig = ALLGATHER(activation size)`.
/// * HYBRID_DATA_MODEL: each layer follows its DATA or MODEL tag.
pub fn assign_communication(
    layers: &[LayerRecord],
    strategy: ParallelismStrategy,
    inputs: &CommInputs<'_>,
) -> Result<Vec<LayerComm>, GenerateError> {
    if layers.is_empty() {
        return Err(GenerateError::NoLayers);
    }
    layers
        .iter()
        .map(|layer| match strategy {
            ParallelismStrategy::Data => Ok(data_rule(layer)),
            ParallelismStrategy::Model => model_rule(layer, strategy, inputs.activation_sizes),
            ParallelismStrategy::HybridDataModel => {
                let tags = inputs.hybrid_tags.ok_or(GenerateError::MissingHybridTags)?;
                match tags.get(&layer.name) {
                    Some(LayerTag::Data) => Ok(data_rule(layer)),
                    Some(LayerTag::Model) => model_rule(layer, strategy, inputs.activation_sizes),
                    None => Err(GenerateError::MissingHybridTag(layer.name.clone())),
                }
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ComputeTimes {
    pub fwd: u64,
    pub ig: u64,
    pub wg: u64,
    pub update: u64,
}

impl ComputeTimes {
    /// Placeholder used when no compute-time table is supplied.
    pub const PLACEHOLDER: ComputeTimes = ComputeTimes {
        fwd: 1,
        ig: 1,
        wg: 1,
        update: 1,
    };
}

/// Externally measured compute times keyed by layer name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComputeTimeTable {
    entries: BTreeMap<String, ComputeTimes>,
    pub default_entry: ComputeTimes,
}

impl Default for ComputeTimeTable {
    fn default() -> Self {
        ComputeTimeTable {
            entries: BTreeMap::new(),
            default_entry: ComputeTimes::PLACEHOLDER,
        }
    }
}

impl ComputeTimeTable {
    pub fn with_default(default_entry: ComputeTimes) -> Self {
        ComputeTimeTable {
            entries: BTreeMap::new(),
            default_entry,
        }
    }

    /// Parses `name fwd ig wg update` lines. A line named `*` replaces the
    /// default entry.
    pub fn parse(text: &str) -> Result<Self, TableError> {
        let mut table = ComputeTimeTable::default();
        let mut default_seen = false;
        for (line, content) in content_lines(text) {
            let fields: Vec<&str> = content.split_whitespace().collect();
            if fields.len() != 5 {
                return Err(TableError::Malformed {
                    line,
                    reason: "expected `name fwd ig wg update`",
                });
            }
            let mut nums = [0u64; 4];
            for (slot, token) in nums.iter_mut().zip(&fields[1..]) {
                *slot = parse_u64(token).ok_or(TableError::Malformed {
                    line,
                    reason: "compute times must be unsigned integers",
                })?;
            }
            let times = ComputeTimes {
                fwd: nums[0],
                ig: nums[1],
                wg: nums[2],
                update: nums[3],
            };
            let name = fields[0];
            let duplicate = if name == "*" {
                table.default_entry = times;
                core::mem::replace(&mut default_seen, true)
            } else {
                table.entries.insert(name.into(), times).is_some()
            };
            if duplicate {
                return Err(TableError::Duplicate {
                    line,
                    key: name.into(),
                });
            }
        }
        Ok(table)
    }

    pub fn insert(&mut self, name: impl Into<String>, times: ComputeTimes) {
        self.entries.insert(name.into(), times);
    }

    pub fn lookup(&self, name: &str) -> ComputeTimes {
        self.entries
            .get(name)
            .copied()
            .unwrap_or(self.default_entry)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttachedTimes {
    pub lines: Vec<WorkloadLayerLine>,
    /// Table entries that matched no layer, sorted. Callers should warn.
    pub unused_entries: Vec<String>,
}

pub fn attach_compute_times(layers: &[LayerComm], table: &ComputeTimeTable) -> AttachedTimes {
    let lines = layers
        .iter()
        .map(|l| {
            let t = table.lookup(&l.name);
            WorkloadLayerLine {
                name: l.name.clone(),
                fwd_compute: t.fwd,
                fwd_comm: l.fwd,
                ig_compute: t.ig,
                ig_comm: l.ig,
                wg_compute: t.wg,
                wg_comm: l.wg,
                wg_update_time: t.update,
            }
        })
        .collect();
    let names: BTreeSet<&str> = layers.iter().map(|l| l.name.as_str()).collect();
    let unused_entries = table
        .entries
        .keys()
        .filter(|k| !names.contains(k.as_str()))
        .cloned()
        .collect();
    AttachedTimes {
        lines,
        unused_entries,
    }
}

/// Runs communication assignment and compute-time attachment and validates
/// the result.
pub fn generate_workload(
    layers: &[LayerRecord],
    strategy: ParallelismStrategy,
    inputs: &CommInputs<'_>,
    times: &ComputeTimeTable,
) -> Result<(WorkloadFile, Vec<String>), GenerateError> {
    let comm = assign_communication(layers, strategy, inputs)?;
    let attached = attach_compute_times(&comm, times);
    let file = WorkloadFile::new(strategy, attached.lines)?;
    Ok((file, attached.unused_entries))
}
