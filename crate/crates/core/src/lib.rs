pub mod classifier;
pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod landmark_io;
pub mod numerics;
pub mod relativity;
pub mod synthetic;
pub mod training;
pub mod trajectory;

pub use error::{Error, Result};
