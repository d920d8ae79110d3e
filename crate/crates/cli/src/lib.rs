//! Command-line front end: file formats, configuration, the dictionary
//! cache and the benchmark harness.

pub mod bench;
pub mod cache;
pub mod commands;
pub mod config;
pub mod error;
pub mod formats;
