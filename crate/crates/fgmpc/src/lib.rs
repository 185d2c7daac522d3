//! Command-line front end and file formats for `fgmpc-core`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod error;
pub mod jacobians;
pub mod output;

pub use error::CliError;
