pub mod dataset;
pub mod error;
pub mod metrics;
pub mod models;
pub mod rewards;
pub mod tensor;
pub mod text;
pub mod training;

pub use error::{Error, Result};
