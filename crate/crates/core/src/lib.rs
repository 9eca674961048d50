pub mod config;
pub mod equilibrium;
pub mod error;
pub mod evolution;
pub mod linalg;
pub mod memory;
pub mod model;
pub mod run;

pub use error::{Error, Result};
