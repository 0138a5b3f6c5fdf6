//! Quality-diversity search for synthesised sounds.
//!
//! Genomes pair a CPPN with a DSP graph and render to audio. Sounds are
//! described by a 96-dimensional MFCC summary, projected to a 2D behaviour
//! space (manual, PCA or autoencoder, optionally retrained during the run)
//! and kept in a MAP-Elites grid under one of three quality regimes.

pub mod analysis;
pub mod archive;
pub mod corpus;
pub mod engine;
pub mod error;
pub mod features;
pub mod fitness;
pub mod genome;
pub mod projection;
pub mod refdb;
pub mod render;

pub use error::{Error, Result};
