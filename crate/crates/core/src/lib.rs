pub mod error;
pub mod fragment;
pub mod harness;
pub mod iqa;
pub mod losses;
pub mod media;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod vqa;

pub use error::{Error, Result};
