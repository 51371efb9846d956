pub mod classifier;
pub mod data;
pub mod dimred;
pub mod error;
pub mod gmm;
pub mod linalg;
pub mod pipeline;
pub mod seed;
pub mod viz;

pub use error::{Error, Result};
