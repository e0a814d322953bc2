//! File formats, configuration and the command-line front end for
//! [`gcfc_core`].

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod corpus_io;
pub mod error;
pub mod report;

pub use error::{Error, Result};
pub use gcfc_core as core;
