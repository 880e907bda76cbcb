pub mod error;
pub mod gmm;
pub mod model;
pub mod particles;
pub mod seed;
pub mod cli;
pub mod eval;
pub mod synthdata;

pub use error::{Error, Result};
