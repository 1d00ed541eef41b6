pub mod augment;
pub mod cli;
pub mod dataio;
pub mod config;
pub mod denoise;
pub mod encoder;
pub mod error;
pub mod model;
pub mod recommend;
pub mod relgraph;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
