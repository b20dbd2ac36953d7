pub mod attention;
pub mod data;
pub mod error;
pub mod experiment;
pub mod flow;
pub mod geometry;
pub mod image;
pub mod math;
pub mod metrics;
pub mod tensor;

pub use error::{Error, Result};
