//! Spectral solver and verification harness for the compressible
//! Navier-Stokes-Korteweg system with mass, force and energy sources.

pub mod error;
pub mod evolution;
pub mod field;
pub mod forcing;
pub mod grid;
pub mod model;
pub mod norms;
mod par;
pub mod random;
pub mod snapshot;
pub mod spectral;
pub mod stationary;
pub mod verification;

pub use error::{NskError, Result};
pub use grid::Grid;
