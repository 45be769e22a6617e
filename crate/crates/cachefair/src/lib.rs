//! Companion crate to `cachefair-core`: JSON file formats, the Monte-Carlo
//! experiment runner, CSV/SVG output and the `cachefair` command line tool.

pub mod emit;
pub mod error;
pub mod experiment;
pub mod format;

pub use error::{Error, Result};
