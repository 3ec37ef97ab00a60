//! Standard-library companion to `efeval-core`: file formats, dataset
//! ingestion, the incremental-learning harness, reporting, benchmarking, and
//! the `efeval` command-line tool built from them.

pub mod bench;
pub mod cli;
pub mod config;
pub mod error;
pub mod formats;
pub mod harness;
pub mod idx;
pub mod manifest;
pub mod report;
pub mod split;

pub use error::{AppError, Result};
