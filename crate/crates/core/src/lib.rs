pub mod data;
pub mod error;
pub mod gradcheck;
pub mod instance;
pub mod model;
pub mod nn;
pub mod tasks;
pub mod trainer;

pub use error::{Error, Result};
