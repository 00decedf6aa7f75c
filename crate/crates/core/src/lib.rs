pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod disentangle;
pub mod encoders;
pub mod error;
pub mod gradcheck;
pub mod hypergraph;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod par;
pub mod params;
pub mod report;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
