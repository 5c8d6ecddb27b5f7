pub mod detect;
pub mod error;
pub mod eval;
pub mod kernel;
pub mod linalg;
pub mod pca;
pub mod synth;

pub use error::{Error, Result};
