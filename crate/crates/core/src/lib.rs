pub mod autodiff;
pub mod checkpoint;
pub mod encoder;
pub mod error;
pub mod graph;
pub mod kv;
pub mod metrics;
pub mod rng;
pub mod sampler;
pub mod spectral;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
