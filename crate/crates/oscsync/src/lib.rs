//! Parallel execution, file formats, the reference-grid cache and the
//! command-line front end for `oscsync-core`.

pub mod cache;
pub mod cli;
pub mod config;
pub mod exec;
pub mod formats;
pub mod linewidth;
pub mod manifest;

pub use exec::Rayon;
