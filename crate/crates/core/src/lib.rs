//! Quasi-Monte Carlo estimation of the volumes and boundary hyperareas of
//! the space of complex density matrices under monotone Riemannian metrics,
//! split into separable and entangled parts by the positive-partial-transpose
//! test.
//!
//! The pipeline is: [`lds`] points → [`sampling`] (Haar frame plus spectrum
//! with importance weight from [`measures`]) → [`separability`] flags →
//! [`estimator`] banks → [`runner`] reports and tables.

pub mod error;
pub mod estimator;
pub mod lds;
pub mod linalg;
pub mod measures;
pub mod runner;
pub mod sampling;
pub mod separability;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
