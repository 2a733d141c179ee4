pub mod cli;
pub mod codec;
pub mod error;
pub mod eval;
pub mod model;
pub mod sampler;
pub mod scenecam;
pub mod synthenv;
pub mod temporal;

pub use error::{Error, Result};
