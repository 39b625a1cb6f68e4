//! File formats, HTTP transport, configuration and batch drivers around
//! [`hairseg_core`], plus the `hairseg` command line.

pub mod cli;
pub mod client;
pub mod config;
pub mod error;
pub mod io;
pub mod pipeline;
pub mod wire;

pub use error::{Error, ErrorKind, Result};
