//! Minimal ONNX model decoder.
//!
//! Walks `ModelProto -> GraphProto -> {TensorProto, NodeProto, ValueInfoProto}`
//! and keeps only the metadata needed to size layers: initializer names, dims
//! and element types, plus node op types and graph input/output names. Every
//! other field, including all tensor payloads, is skipped by wire type.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

use crate::wire::{
    decode_varint, rebase, sub_offset, FieldReader, FieldValue, WireError, WireType,
};

// Field numbers from onnx.proto.
mod tag {
    pub const MODEL_IR_VERSION: u32 = 1;
    pub const MODEL_GRAPH: u32 = 7;

    pub const GRAPH_NODE: u32 = 1;
    pub const GRAPH_NAME: u32 = 2;
    pub const GRAPH_INITIALIZER: u32 = 5;
    pub const GRAPH_INPUT: u32 = 11;
    pub const GRAPH_OUTPUT: u32 = 12;

    pub const TENSOR_DIMS: u32 = 1;
    pub const TENSOR_DATA_TYPE: u32 = 2;
    pub const TENSOR_NAME: u32 = 8;

    pub const NODE_NAME: u32 = 3;
    pub const NODE_OP_TYPE: u32 = 4;

    pub const VALUE_INFO_NAME: u32 = 1;
}

/// Largest dimension accepted before a tensor is considered implausible.
pub const MAX_DIM: u64 = 1 << 32;

/// ONNX `TensorProto.DataType` code.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DataType(pub i32);

impl DataType {
    pub const UNDEFINED: DataType = DataType(0);
    pub const FLOAT: DataType = DataType(1);
    pub const UINT8: DataType = DataType(2);
    pub const INT8: DataType = DataType(3);
    pub const UINT16: DataType = DataType(4);
    pub const INT16: DataType = DataType(5);
    pub const INT32: DataType = DataType(6);
    pub const INT64: DataType = DataType(7);
    pub const STRING: DataType = DataType(8);
    pub const BOOL: DataType = DataType(9);
    pub const FLOAT16: DataType = DataType(10);
    pub const DOUBLE: DataType = DataType(11);
    pub const UINT32: DataType = DataType(12);
    pub const UINT64: DataType = DataType(13);
    pub const COMPLEX64: DataType = DataType(14);
    pub const COMPLEX128: DataType = DataType(15);
    pub const BFLOAT16: DataType = DataType(16);
    pub const FLOAT8E4M3FN: DataType = DataType(17);
    pub const FLOAT8E4M3FNUZ: DataType = DataType(18);
    pub const FLOAT8E5M2: DataType = DataType(19);
    pub const FLOAT8E5M2FNUZ: DataType = DataType(20);
    pub const UINT4: DataType = DataType(21);
    pub const INT4: DataType = DataType(22);

    const TABLE: &'static [(DataType, &'static str, Option<u64>)] = &[
        (Self::UNDEFINED, "UNDEFINED", None),
        (Self::FLOAT, "FLOAT", Some(4)),
        (Self::UINT8, "UINT8", Some(1)),
        (Self::INT8, "INT8", Some(1)),
        (Self::UINT16, "UINT16", Some(2)),
        (Self::INT16, "INT16", Some(2)),
        (Self::INT32, "INT32", Some(4)),
        (Self::INT64, "INT64", Some(8)),
        (Self::STRING, "STRING", None),
        (Self::BOOL, "BOOL", Some(1)),
        (Self::FLOAT16, "FLOAT16", Some(2)),
        (Self::DOUBLE, "DOUBLE", Some(8)),
        (Self::UINT32, "UINT32", Some(4)),
        (Self::UINT64, "UINT64", Some(8)),
        (Self::COMPLEX64, "COMPLEX64", Some(8)),
        (Self::COMPLEX128, "COMPLEX128", Some(16)),
        (Self::BFLOAT16, "BFLOAT16", Some(2)),
        (Self::FLOAT8E4M3FN, "FLOAT8E4M3FN", Some(1)),
        (Self::FLOAT8E4M3FNUZ, "FLOAT8E4M3FNUZ", Some(1)),
        (Self::FLOAT8E5M2, "FLOAT8E5M2", Some(1)),
        (Self::FLOAT8E5M2FNUZ, "FLOAT8E5M2FNUZ", Some(1)),
        // Sub-byte packed types have no whole-byte element width.
        (Self::UINT4, "UINT4", None),
        (Self::INT4, "INT4", None),
    ];

    fn entry(self) -> Option<&'static (DataType, &'static str, Option<u64>)> {
        Self::TABLE.iter().find(|(dt, _, _)| *dt == self)
    }

    pub fn code(self) -> i32 {
        self.0
    }

    /// Canonical token, e.g. `FLOAT`. `None` for codes outside the table.
    pub fn name(self) -> Option<&'static str> {
        self.entry().map(|(_, name, _)| *name)
    }

    /// Bytes per element, if the type has a fixed whole-byte width.
    pub fn width(self) -> Option<u64> {
        self.entry().and_then(|(_, _, width)| *width)
    }

    pub fn byte_width(self) -> Result<u64, UnsupportedDataType> {
        self.width().ok_or(UnsupportedDataType(self))
    }

    pub fn from_name(name: &str) -> Option<DataType> {
        Self::TABLE
            .iter()
            .find(|(_, n, _)| *n == name)
            .map(|(dt, _, _)| *dt)
    }
}

impl fmt::Display for DataType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.name() {
            Some(name) => f.write_str(name),
            None => write!(f, "UNKNOWN({})", self.0),
        }
    }
}

impl fmt::Debug for DataType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DataType({self})")
    }
}

#[cfg(feature = "serde")]
impl serde::Serialize for DataType {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("data type {0} has no fixed element width")]
pub struct UnsupportedDataType(pub DataType);

/// Product of `dims`, or `None` on 64-bit overflow. An empty list is a
/// scalar and counts one element.
pub fn element_count(dims: &[u64]) -> Option<u64> {
    dims.iter().try_fold(1u64, |acc, &d| acc.checked_mul(d))
}

/// Metadata of one initializer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub dims: Vec<u64>,
    pub dtype: DataType,
}

impl TensorSpec {
    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn element_count(&self) -> Option<u64> {
        element_count(&self.dims)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct NodeInfo {
    pub name: String,
    pub op_type: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct OnnxGraph {
    pub name: String,
    /// In file order.
    pub initializers: Vec<TensorSpec>,
    pub nodes: Vec<NodeInfo>,
    pub input_names: Vec<String>,
    pub output_names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OnnxModel {
    pub ir_version: i64,
    pub graph: OnnxGraph,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("empty input")]
    Empty,
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(
        "{message}.{field} at byte {offset}: expected wire type {expected:?}, found {found:?}"
    )]
    UnexpectedWireType {
        message: &'static str,
        field: u32,
        offset: usize,
        expected: WireType,
        found: WireType,
    },
    #[error("model has no graph")]
    MissingGraph,
    #[error("{what} at byte {offset} is not valid UTF-8")]
    InvalidUtf8 { what: &'static str, offset: usize },
    #[error("initializer {name:?} has negative dimension {dim}")]
    NegativeDim { name: String, dim: i64 },
    #[error("initializer {name:?} has implausible dimension {dim} (limit 2^32)")]
    DimTooLarge { name: String, dim: u64 },
    #[error("initializer #{index} has no name")]
    UnnamedInitializer { index: usize },
    #[error("duplicate initializer name {0:?}")]
    DuplicateInitializer(String),
}

/// A sub-message slice plus its absolute position in the file.
#[derive(Clone, Copy)]
struct Msg<'a> {
    bytes: &'a [u8],
    base: usize,
}

impl<'a> Msg<'a> {
    fn fields(self) -> FieldReader<'a> {
        FieldReader::with_base(self.bytes, self.base)
    }

    fn child(self, inner: &'a [u8]) -> Msg<'a> {
        Msg {
            bytes: inner,
            base: self.base + sub_offset(self.bytes, inner),
        }
    }
}

fn expect_bytes<'a>(
    message: &'static str,
    number: u32,
    offset: usize,
    value: FieldValue<'a>,
) -> Result<&'a [u8], DecodeError> {
    match value {
        FieldValue::Bytes(b) => Ok(b),
        other => Err(DecodeError::UnexpectedWireType {
            message,
            field: number,
            offset,
            expected: WireType::LengthDelimited,
            found: other.wire_type(),
        }),
    }
}

fn expect_varint(
    message: &'static str,
    number: u32,
    offset: usize,
    value: FieldValue<'_>,
) -> Result<u64, DecodeError> {
    match value {
        FieldValue::Varint(v) => Ok(v),
        other => Err(DecodeError::UnexpectedWireType {
            message,
            field: number,
            offset,
            expected: WireType::Varint,
            found: other.wire_type(),
        }),
    }
}

fn utf8(bytes: &[u8], what: &'static str, offset: usize) -> Result<String, DecodeError> {
    core::str::from_utf8(bytes)
        .map(String::from)
        .map_err(|_| DecodeError::InvalidUtf8 { what, offset })
}

/// Decodes a serialized `ModelProto`.
pub fn parse_model(buf: &[u8]) -> Result<OnnxModel, DecodeError> {
    if buf.is_empty() {
        return Err(DecodeError::Empty);
    }
    let root = Msg {
        bytes: buf,
        base: 0,
    };
    let mut ir_version = 0i64;
    let mut graph = None;
    for field in root.fields() {
        let field = field?;
        match field.number {
            tag::MODEL_IR_VERSION => {
                ir_version =
                    expect_varint("ModelProto", field.number, field.offset, field.value)? as i64;
            }
            tag::MODEL_GRAPH => {
                let bytes = expect_bytes("ModelProto", field.number, field.offset, field.value)?;
                // Singular field: the last occurrence wins.
                graph = Some(root.child(bytes));
            }
            _ => {}
        }
    }
    let graph = parse_graph(graph.ok_or(DecodeError::MissingGraph)?)?;
    Ok(OnnxModel { ir_version, graph })
}

fn parse_graph(msg: Msg<'_>) -> Result<OnnxGraph, DecodeError> {
    const M: &str = "GraphProto";
    let mut graph = OnnxGraph::default();
    for field in msg.fields() {
        let field = field?;
        let (n, at) = (field.number, field.offset);
        match n {
            tag::GRAPH_NODE => {
                let bytes = expect_bytes(M, n, at, field.value)?;
                graph.nodes.push(parse_node(msg.child(bytes))?);
            }
            tag::GRAPH_NAME => {
                graph.name = utf8(expect_bytes(M, n, at, field.value)?, "graph name", at)?;
            }
            tag::GRAPH_INITIALIZER => {
                let bytes = expect_bytes(M, n, at, field.value)?;
                graph.initializers.push(parse_tensor(msg.child(bytes))?);
            }
            tag::GRAPH_INPUT | tag::GRAPH_OUTPUT => {
                let bytes = expect_bytes(M, n, at, field.value)?;
                let name = parse_value_info_name(msg.child(bytes))?;
                if n == tag::GRAPH_INPUT {
                    graph.input_names.push(name);
                } else {
                    graph.output_names.push(name);
                }
            }
            _ => {}
        }
    }

    let mut seen = BTreeSet::new();
    for (index, t) in graph.initializers.iter().enumerate() {
        if t.name.is_empty() {
            return Err(DecodeError::UnnamedInitializer { index });
        }
        if !seen.insert(t.name.as_str()) {
            return Err(DecodeError::DuplicateInitializer(t.name.clone()));
        }
    }
    Ok(graph)
}

fn parse_tensor(msg: Msg<'_>) -> Result<TensorSpec, DecodeError> {
    const M: &str = "TensorProto";
    let mut raw_dims: Vec<u64> = Vec::new();
    let mut dtype = DataType::UNDEFINED;
    let mut name = String::new();
    for field in msg.fields() {
        let field = field?;
        let (n, at) = (field.number, field.offset);
        match n {
            tag::TENSOR_DIMS => match field.value {
                FieldValue::Varint(v) => raw_dims.push(v),
                FieldValue::Bytes(packed) => {
                    let mut pos = 0;
                    while pos < packed.len() {
                        let (v, next) = decode_varint(packed, pos)
                            .map_err(|e| rebase(e, msg.child(packed).base))?;
                        raw_dims.push(v);
                        pos = next;
                    }
                }
                other => {
                    return Err(DecodeError::UnexpectedWireType {
                        message: M,
                        field: n,
                        offset: at,
                        expected: WireType::Varint,
                        found: other.wire_type(),
                    })
                }
            },
            tag::TENSOR_DATA_TYPE => {
                // int32 on the wire: negative values are sign-extended to 64 bits.
                dtype = DataType(expect_varint(M, n, at, field.value)? as i64 as i32);
            }
            tag::TENSOR_NAME => {
                name = utf8(expect_bytes(M, n, at, field.value)?, "tensor name", at)?;
            }
            _ => {}
        }
    }

    let mut dims = Vec::with_capacity(raw_dims.len());
    for raw in raw_dims {
        let signed = raw as i64;
        if signed < 0 {
            return Err(DecodeError::NegativeDim { name, dim: signed });
        }
        if raw > MAX_DIM {
            return Err(DecodeError::DimTooLarge { name, dim: raw });
        }
        dims.push(raw);
    }
    Ok(TensorSpec { name, dims, dtype })
}

fn parse_node(msg: Msg<'_>) -> Result<NodeInfo, DecodeError> {
    const M: &str = "NodeProto";
    let mut node = NodeInfo::default();
    for field in msg.fields() {
        let field = field?;
        let (n, at) = (field.number, field.offset);
        match n {
            tag::NODE_NAME => {
                node.name = utf8(expect_bytes(M, n, at, field.value)?, "node name", at)?
            }
            tag::NODE_OP_TYPE => {
                node.op_type = utf8(expect_bytes(M, n, at, field.value)?, "node op_type", at)?
            }
            _ => {}
        }
    }
    Ok(node)
}

fn parse_value_info_name(msg: Msg<'_>) -> Result<String, DecodeError> {
    let mut name = String::new();
    for field in msg.fields() {
        let field = field?;
        if field.number == tag::VALUE_INFO_NAME {
            let bytes = expect_bytes("ValueInfoProto", field.number, field.offset, field.value)?;
            name = utf8(bytes, "value info name", field.offset)?;
        }
    }
    Ok(name)
}
