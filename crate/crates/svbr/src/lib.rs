pub mod data;
pub mod diagnostics;
pub mod error;
pub mod exposure;
pub mod ks;
pub mod manifest;
pub mod normal;
pub mod pg;
pub mod samples;
pub mod simulation;
pub mod sampler;
pub mod spatial;

pub use error::{Result, SvbrError};
