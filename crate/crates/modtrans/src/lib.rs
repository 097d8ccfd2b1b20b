//! ONNX to workload-file translation with a cached model zoo client.
//!
//! The format logic lives in `modtrans-core`; this crate adds file and
//! network I/O and the `modtrans` command.

pub mod cli;
pub mod error;
pub mod pipeline;
pub mod zoo;

pub use error::Error;
