//! Translate serialized ONNX models into distributed-training simulator
//! workloads.
//!
//! The pipeline is four pure steps over borrowed bytes:
//!
//! 1. [`onnx::parse_model`] decodes the protobuf wire format far enough to
//!    recover initializer names, dims and element types.
//! 2. [`layers::extract_layers`] keeps the trainable weights and sizes them.
//! 3. [`workload::generate_workload`] assigns collectives for a parallelism
//!    strategy and attaches compute times; [`workload::emit_workload`] and
//!    [`workload::parse_workload`] handle the text format.
//! 4. [`diff::diff_sizes`] compares layer-size sequences.
//!
//! The crate is `no_std` and only needs `alloc`. File, network and CLI code
//! lives in the `modtrans` crate.

#![no_std]

extern crate alloc;

pub mod diff;
pub mod layers;
pub mod onnx;
mod text;
pub mod wire;
pub mod workload;

pub use diff::{diff_sizes, DiffMode, DiffReport, Mismatch};
pub use layers::{
    extract_layers, normalize_name, ExtractError, FilterPolicy, LayerNaming, LayerRecord, RenameMap,
};
pub use onnx::{
    element_count, parse_model, DataType, DecodeError, NodeInfo, OnnxGraph, OnnxModel, TensorSpec,
    UnsupportedDataType,
};
pub use text::TableError;
pub use wire::{decode_varint, WireError};
pub use workload::{
    assign_communication, attach_compute_times, emit_workload, generate_workload, parse_workload,
    ActivationSizes, CommDescriptor, CommInputs, CommType, ComputeTimeTable, ComputeTimes,
    GenerateError, HybridTags, LayerComm, LayerTag, ParallelismStrategy, WorkloadFile,
    WorkloadLayerLine, WorkloadParseError,
};
