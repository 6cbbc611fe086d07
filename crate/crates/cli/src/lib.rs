//! Command-line workflow around `switchsel-core`: train a model from a
//! labeled recording, monitor new recordings, synthesize test corpora and
//! score results.
#![allow(clippy::neg_cmp_op_on_partial_ord)]


pub mod app;
pub mod commands;
pub mod config;
pub mod error;
pub mod eval;
pub mod io;
pub mod modelfile;
pub mod pipeline;

pub use config::RunConfig;
pub use error::{CliError, Result};
pub use modelfile::{ModelFile, SCHEMA_VERSION};
