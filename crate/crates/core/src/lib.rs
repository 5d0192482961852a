pub mod error;
pub mod spectral;
pub mod state;
pub mod checkpoint;
pub mod functionals;
pub mod minimizer;
pub mod eigensolver;
pub mod experiments;

pub use error::{Error, Result};
