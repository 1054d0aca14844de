//! Std companion to `cider-core`: HTTP providers, on-disk formats for the
//! aesthetics database, the redirection cache, run records and reports,
//! TOML configuration and the `cider` command line.

pub mod ablation;
pub mod backend;
pub mod cli;
pub mod config;
pub mod error;
pub mod remote;
pub mod report;
pub mod store;

pub use error::{Error, Result};
