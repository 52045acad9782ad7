pub mod analysis;
pub mod autodiff;
pub mod commands;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod objectives;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
