//! File formats, directory pairing, thread pools and the `segfuse` command
//! line on top of `segfuse_core`.

pub mod cli;
mod commands;
pub mod error;
pub mod io;
pub mod pairing;
pub mod parallel;

pub use error::{CliError, Result};
