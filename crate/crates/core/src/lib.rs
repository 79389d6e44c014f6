pub mod config;
pub mod energy;
pub mod error;
pub mod loss;
pub mod model;
pub mod neuron;
pub mod pipeline;
pub mod preprocess;
pub mod rng;
pub mod sim;
pub mod tensor;
pub mod train;

mod binio;

pub use error::{Error, Result};
