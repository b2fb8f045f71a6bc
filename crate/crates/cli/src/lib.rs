//! Configuration-driven runner for `hjweave` experiments.
//!
//! A run reads one JSON [`config::ProblemConfig`], executes a
//! [`run::Command`] and writes CSV and JSON artifacts into an output
//! directory. CSV numbers use the shortest round-trip decimal form, so equal
//! inputs give byte-identical files.

// Negated comparisons reject NaN together with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod run;

pub use config::{parse_config, parse_config_str, ConfigError, ProblemConfig};
pub use run::{run, Command, RunError};
