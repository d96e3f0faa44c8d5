//! Lorenz-attractor diagnostics for the Shimizu-Morioka family.

pub mod chartscan;
pub mod dynsys;
pub mod error;
pub mod integrate;
pub mod kneading;
pub mod lyap;
pub mod modelmap;
pub mod poincare;
pub mod pseudohyp;

pub use error::{Error, Result};
