//! Distributionally robust CuSum change detection with Wasserstein
//! uncertainty sets.

pub mod baselines;
pub mod detector;
pub mod distributions;
pub mod error;
pub mod io;
pub mod lfd;
pub mod quad;
pub mod radius;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
