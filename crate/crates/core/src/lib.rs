pub mod bench;
pub mod cli;
pub mod error;
pub mod features;
pub mod flow;
pub mod image;
pub mod losses;
pub mod pipeline;
pub mod solver;

pub use error::{Error, Result};
