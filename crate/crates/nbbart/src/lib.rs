//! File formats, configuration, thread-parallel chains and the command
//! implementations behind the `nbbart` binary.

pub mod commands;
pub mod config;
pub mod draws_file;
pub mod error;
pub mod io;
pub mod parallel;

pub use error::{AppError, AppResult};
