pub mod audio;
pub mod config;
pub mod dataset;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod rir;
pub mod seed;
pub mod sweep;
pub mod train;

pub use error::{Error, Result};
