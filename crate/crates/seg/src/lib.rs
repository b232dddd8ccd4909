pub mod config;
pub mod cv;
pub mod dataset;
mod error;
pub mod imageio;
pub mod losses;
pub mod model;
pub mod service;
pub mod train;

pub use error::{Error, Result};
pub use octa_core;
