pub mod constants;
pub mod error;
pub mod experiment;
pub mod functionals;
pub mod noise;
pub mod sewing;
pub mod solver;
pub mod spectral;
pub mod stats;

pub use error::{Error, Result};
