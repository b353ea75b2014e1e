pub mod curves;
pub mod error;
pub mod harness;
pub mod interference;
pub mod landscape;
pub mod numeric;
pub mod trainer;

pub use error::{Error, Result};
