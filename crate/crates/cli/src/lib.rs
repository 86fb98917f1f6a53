//! Command implementations behind the `remix` binary: single training runs,
//! checkpoint evaluation, multi-config seed-sweep comparisons, and static
//! plot emission from metrics CSVs.

pub mod commands;
pub mod plot;
pub mod summary;

pub use remix_core::error::{Error, Result};
