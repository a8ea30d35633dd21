pub mod data;
pub mod engine;
pub mod error;
pub mod losses;
pub mod nn;
pub mod space;
pub mod teacher;
pub mod tensor;

pub use error::{Error, ErrorCategory, Result};
