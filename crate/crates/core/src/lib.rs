//! Numerical toolkit for smoothed local times of self-similar Gaussian
//! processes and their first- and second-order limit theorems.

pub mod error;
pub mod exec;
pub mod harness;
pub mod heatkernel;
pub mod limits;
pub mod loctime;
pub mod oracles;
pub mod process;
pub mod quadrature;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
