//! Phase steering of frozen oscillatory surrogates.
//!
//! The pipeline maps frozen node embeddings into a representation space,
//! finds near-quadrature oscillatory feature pairs by Hilbert analysis,
//! compresses each paired feature into a few spatial modes, and optimizes a
//! smooth time-varying rotation of the paired mode coefficients so that the
//! decoded states match a phase-shifted target.

pub mod datamodel;
pub mod dataset;
pub mod error;
pub mod evaluation;
mod fsutil;
pub mod linalg;
pub mod modes;
pub mod objective;
pub mod oscillation;
pub mod representation;
pub mod steering;
pub mod surrogate;
pub mod synthgen;

pub use error::{Error, Result};
