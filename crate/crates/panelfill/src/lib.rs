//! Files, Monte Carlo studies and the command-line front end for `panelfill-core`.

pub mod cli;
pub mod config;
pub mod error;
pub mod fixtures;
pub mod io;
pub mod mc;
pub mod report;

pub use error::{AppError, AppResult};
