pub mod dist;
pub mod error;
pub mod federation;
pub mod glm;
pub mod harness;
pub mod inference;
pub mod pipeline;
pub mod simgen;
pub mod solvers;
pub mod tuning;

pub use error::{Error, Result};
