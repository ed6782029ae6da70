//! Ingestion, configuration, orchestration and exports.

pub mod config;
pub mod export;
pub mod ingest;
pub mod pipeline;

pub use config::{RankTargets, RunConfig, Settings};
pub use ingest::{ingest_csv, Ingested};
pub use pipeline::{run_pipeline, Command, Outcome};
