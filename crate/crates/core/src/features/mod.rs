//! Audio features: the 96-dimensional extended MFCC vector used for
//! behaviour projection and quality, low-level spectral descriptors used
//! for manual behaviour spaces, and z-score normalisation.

pub mod mfcc;
pub mod norm;
pub mod spectral;
pub mod store;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use mfcc::{MfccConfig, MfccExtractor};
pub use norm::NormStats;
pub use spectral::{SpectralConfig, SpectralExtractor, SpectralFeatureSet, SPECTRAL_FEATURE_NAMES};
pub use store::FeatureRecord;

pub const FEATURE_DIM: usize = 96;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    /// Checked constructor for extractor output: 96 finite values.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() != FEATURE_DIM {
            return Err(Error::Dimension {
                expected: FEATURE_DIM,
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("feature vector contains non-finite values".into()));
        }
        Ok(FeatureVector(values))
    }

    /// Any dimension; used for normalised vectors and synthetic data.
    pub fn from_raw(values: Vec<f64>) -> Self {
        FeatureVector(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl AsRef<[f64]> for FeatureVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// `1 - a·b / (|a||b|)`, in [0, 2].
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((1.0 - dot / (na.sqrt() * nb.sqrt())).clamp(0.0, 2.0))
}
