pub mod baseline;
pub mod compute;
pub mod config;
pub mod corpus;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod linguistic;
pub mod model;
pub mod parallel;
pub mod training;
pub mod variational;

pub use error::{Error, Result};
