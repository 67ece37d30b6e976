pub mod adaptation;
pub mod analysis;
pub mod checkpoint;
pub mod config;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod manifest;
pub mod model;
pub mod params;
pub mod pipeline;
pub mod report;
pub mod synth;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{Precision, Real, Tape, Tensor, Var};
