//! File formats, batch orchestration and the command line around
//! `urbanmap-core`.

pub mod config;
pub mod error;
pub mod fixtures;
pub mod io;
pub mod labels;
pub mod orchestrator;
pub mod report;

pub use config::Config;
pub use error::{Error, Result};
