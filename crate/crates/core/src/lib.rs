pub mod cli;
pub mod config;
pub mod csv_io;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod impute;
pub mod linear;
pub mod pipeline;
pub mod rng;
pub mod selection;
pub mod synth;
pub mod tree;

pub use error::{Error, Result};
