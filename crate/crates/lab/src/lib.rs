//! Files, experiments and the command line around `inpaint-dpo-core`.
//!
//! * [`pack`]: binary scene and pair packs
//! * [`checkpoint`]: model and optimizer checkpoints
//! * [`config`]: run configuration and its `key = value` file form
//! * [`harness`]: the ablation, conflict and ranking experiments
//! * [`report`]: CSV outputs
//! * [`cli`]: the `inpaint-dpo` command

pub mod checkpoint;
pub mod cli;
pub mod config;
mod error;
pub mod harness;
pub mod pack;
pub mod report;

pub use error::{LabError, Result};
