//! File formats, reports and the `qtrap` command line on top of
//! [`qtrap_core`].
//!
//! * [`schema`]: the canonical telemetry JSONL format and a CSV importer.
//! * [`input`]: loading files and directories in a deterministic order.
//! * [`scenario`]: simulator scenario files and energy parameter files.
//! * [`report`]: the report bundle and its JSON, markdown and CSV renderers.
//! * [`cli`]: argument parsing and the command implementations.

pub mod cli;
pub mod input;
pub mod report;
pub mod scenario;
pub mod schema;

pub use qtrap_core as core;
