//! Dataset ingestion, file formats and the estimation pipeline around
//! `egoflow-core`.
//!
//! This crate carries everything that touches the filesystem: TUM RGB-D
//! sequence loading with timestamp association, trajectory and flow file
//! formats, run configuration, report writing, flow visualization, the
//! synthetic-sequence writer and the four CLI commands (`estimate`,
//! `evaluate`, `synth`, `project`).

pub mod config;
pub mod dataset;
pub mod flo;
pub mod pipeline;
pub mod report;
pub mod synthdir;
pub mod trajfile;
pub mod viz;

pub use config::RunConfig;
pub use pipeline::{run_estimate, run_evaluate, EstimateOutcome};
