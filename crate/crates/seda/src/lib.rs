//! File formats, run directories, evaluation and the command line around
//! [`seda_core`].

pub mod bundle;
pub mod checkpoint;
pub mod cli;
pub mod codec;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evalkit;
pub mod pipeline;
pub mod report;

pub use error::{Error, Result};
pub use seda_core as core;
