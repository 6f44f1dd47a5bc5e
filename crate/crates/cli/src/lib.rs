//! IO, file formats, experiment harness and command-line pipelines for the
//! low-rank MDP workbench. The algorithmic core lives in `refuel-core`;
//! this crate owns everything that touches the filesystem: versioned
//! canonical-JSON artifacts, NDJSON datasets, CSV traces, reports with
//! content hashes, and the `refuel` binary.

pub mod canon;
pub mod cli;
pub mod config;
pub mod experiments;
pub mod io;
pub mod ioerr;
pub mod pipeline;
pub mod report;
pub mod schema;

pub use cli::dispatch;
pub use ioerr::IoError;
