//! Library backing the `mlda` experiment binary. The pipeline has four
//! stages, each a subcommand:
//!
//! 1. `generate-data`: synthesize observations from a known permeability
//!    field and record the ground truth;
//! 2. `sample`: run independent MLDA chains against the data and write one
//!    trace CSV per chain plus a `run.json` sidecar;
//! 3. `diagnose`: compute rank-normalized ESS and split-R̂ per parameter and
//!    summarize per-level cost and acceptance;
//! 4. `plot-data`: export long-format trace/running-mean series for plotting.
//!
//! All defaults reproduce the reference Darcy benchmark, so the whole
//! pipeline runs with no configuration at all.

pub mod commands;
pub mod config;
pub mod error;
pub mod tracefile;

pub use error::{CliError, Result};
