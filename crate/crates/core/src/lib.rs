pub mod analysis;
pub mod audio;
pub mod dataset;
pub mod differ;
pub mod encoder;
pub mod error;
pub mod manifest;
pub mod metric;
pub mod model;
pub mod nn;
pub mod scorer;
pub mod synth;

pub use error::{Error, Result};
