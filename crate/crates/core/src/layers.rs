//! Turns decoded initializers into per-layer parameter records.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::onnx::{element_count, DataType, OnnxGraph, TensorSpec};
use crate::text::{content_lines, TableError};

/// One trainable layer: its parameter count and footprint in bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct LayerRecord {
    pub name: String,
    pub variables: u64,
    pub dtype: DataType,
    pub model_size_bytes: u64,
}

/// Which initializers count as layers.
///
/// The default keeps tensors of rank two or more, i.e. conv kernels and dense
/// weight matrices, and drops biases and normalization vectors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilterPolicy {
    pub min_rank: usize,
    /// Substrings matched against both the raw and the normalized name.
    pub name_excludes: Vec<String>,
    /// Keep every initializer regardless of rank or excludes.
    pub include_all: bool,
}

impl Default for FilterPolicy {
    fn default() -> Self {
        FilterPolicy {
            min_rank: 2,
            name_excludes: Vec::new(),
            include_all: false,
        }
    }
}

impl FilterPolicy {
    pub fn keeps(&self, tensor: &TensorSpec, normalized: &str) -> bool {
        if self.include_all {
            return true;
        }
        tensor.rank() >= self.min_rank
            && !self
                .name_excludes
                .iter()
                .any(|ex| tensor.name.contains(ex.as_str()) || normalized.contains(ex.as_str()))
    }
}

/// Explicit `raw name -> layer name` overrides.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RenameMap {
    entries: BTreeMap<String, String>,
}

impl RenameMap {
    /// Parses `raw<TAB>normalized` lines; `#` starts a comment line.
    pub fn parse(text: &str) -> Result<Self, TableError> {
        let mut entries = BTreeMap::new();
        for (line, content) in content_lines(text) {
            let (raw, renamed) = content.split_once('\t').ok_or(TableError::Malformed {
                line,
                reason: "expected raw_name<TAB>normalized_name",
            })?;
            let (raw, renamed) = (raw.trim(), renamed.trim());
            if raw.is_empty() || renamed.is_empty() || renamed.contains('\t') {
                return Err(TableError::Malformed {
                    line,
                    reason: "expected exactly two non-empty tab-separated fields",
                });
            }
            if entries.insert(raw.into(), renamed.into()).is_some() {
                return Err(TableError::Duplicate {
                    line,
                    key: raw.into(),
                });
            }
        }
        Ok(RenameMap { entries })
    }

    pub fn insert(&mut self, raw: impl Into<String>, renamed: impl Into<String>) {
        self.entries.insert(raw.into(), renamed.into());
    }

    pub fn get(&self, raw: &str) -> Option<&str> {
        self.entries.get(raw).map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// How raw initializer names become layer names.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LayerNaming {
    /// Replaces the exporter's model prefix, e.g. `vgg16` for `vgg0`.
    pub label: String,
    pub renames: RenameMap,
}

impl LayerNaming {
    pub fn new(label: impl Into<String>) -> Self {
        LayerNaming {
            label: label.into(),
            renames: RenameMap::default(),
        }
    }

    pub fn name_for(&self, raw: &str) -> String {
        match self.renames.get(raw) {
            Some(renamed) => renamed.into(),
            None => normalize_name(raw, &self.label),
        }
    }
}

fn lower_hyphenated(s: &str) -> String {
    s.to_lowercase().replace('_', "-")
}

/// Framework exporters prefix every parameter with a scope like `vgg0` or
/// `resnetv24`: ASCII letters followed by ASCII digits.
fn is_export_prefix(token: &str) -> bool {
    let digits_at = match token.find(|c: char| c.is_ascii_digit()) {
        Some(i) if i > 0 => i,
        _ => return false,
    };
    let (letters, digits) = token.split_at(digits_at);
    letters.bytes().all(|b| b.is_ascii_lowercase()) && digits.bytes().all(|b| b.is_ascii_digit())
}

/// Lowercases, turns `_` into `-` and swaps an exporter scope prefix for
/// `model_label`.
///
/// The prefix is only replaced when at least two more tokens follow it, so
/// short names such as `conv0_weight` or `l0` keep their first token.
pub fn normalize_name(raw: &str, model_label: &str) -> String {
    let label = lower_hyphenated(model_label);
    let name = lower_hyphenated(raw);
    if name == label
        || name
            .strip_prefix(label.as_str())
            .is_some_and(|r| r.starts_with('-'))
    {
        return name;
    }
    let mut tokens = name.splitn(2, '-');
    let first = tokens.next().unwrap_or_default();
    let rest = tokens.next().unwrap_or_default();
    if rest.contains('-') && is_export_prefix(first) {
        let mut out = String::with_capacity(label.len() + 1 + rest.len());
        out.push_str(&label);
        out.push('-');
        out.push_str(rest);
        out
    } else {
        name
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExtractError {
    #[error("layer {name:?}: data type {dtype} has no fixed element width")]
    UnsupportedDataType { name: String, dtype: DataType },
    #[error("layer {name:?} has zero elements")]
    EmptyTensor { name: String },
    #[error("layer {name:?}: element count or byte size overflows 64 bits")]
    Overflow { name: String },
}

/// One record per initializer kept by `policy`, in graph order.
pub fn extract_layers(
    graph: &OnnxGraph,
    policy: &FilterPolicy,
    naming: &LayerNaming,
) -> Result<Vec<LayerRecord>, ExtractError> {
    let mut out = Vec::new();
    for tensor in &graph.initializers {
        let name = naming.name_for(&tensor.name);
        if !policy.keeps(tensor, &name) {
            continue;
        }
        let variables = element_count(&tensor.dims)
            .ok_or_else(|| ExtractError::Overflow { name: name.clone() })?;
        if variables == 0 {
            return Err(ExtractError::EmptyTensor { name });
        }
        let width = tensor
            .dtype
            .byte_width()
            .map_err(|_| ExtractError::UnsupportedDataType {
                name: name.clone(),
                dtype: tensor.dtype,
            })?;
        let model_size_bytes = variables
            .checked_mul(width)
            .ok_or_else(|| ExtractError::Overflow { name: name.clone() })?;
        out.push(LayerRecord {
            name,
            variables,
            dtype: tensor.dtype,
            model_size_bytes,
        });
    }
    Ok(out)
}
