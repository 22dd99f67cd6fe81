pub mod data;
pub mod engine;
pub mod error;
pub mod evaluation;
pub mod explain;
pub mod harness;
pub mod models;
pub mod training;

pub use error::{Result, SddsError};
