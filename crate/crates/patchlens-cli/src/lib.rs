//! Experiment pipeline behind the `patchlens` command-line tool: simulate
//! measurements, fit kernel banks, reconstruct, evaluate, and sweep patch
//! counts, with a checksummed manifest per run.

pub mod commands;
pub mod manifest;

pub use commands::{
    cmd_evaluate, cmd_fit, cmd_reconstruct, cmd_simulate, cmd_sweep_patches, exit_code_for,
};
