pub mod augment;
pub mod cli;
pub mod encoder;
pub mod error;
pub mod heads;
pub mod hin;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod tgd;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
