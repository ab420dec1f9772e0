//! Filter pruning for convolutional networks by agglomerative clustering of
//! similar filters.
//!
//! The pipeline: read a [`bundle`], flatten each conv kernel into a filter
//! matrix ([`featurize`]), cluster its columns at a cosine threshold
//! ([`cluster`]), turn clusterings into a keep/drop [`plan`] with the edits it
//! implies downstream, apply it, and account for the savings ([`cost`]).

pub mod bundle;
pub mod cluster;
pub mod cost;
pub mod error;
pub mod featurize;
pub mod plan;
pub mod refexec;
pub mod synth;
pub mod zoo;

pub use error::{Error, Result};
