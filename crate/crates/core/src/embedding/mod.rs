//! Feature extraction behind a backend trait, plus signed square-root
//! normalization and PCA of feature vectors.

use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::depthmap::DepthMapError;

mod backend;
mod fvec;
mod pca;

pub use backend::{
    baseline_train, external_backend, BaselineBackend, EmbeddingBackend, ExternalBackend,
};
pub use fvec::{content_hash, decode_fvec, encode_fvec, read_fvec, write_fvec, FVEC_MAGIC};
pub use pca::{components_for_variance, pca_fit, pca_fit_variance, pca_transform, PcaModel};

/// Default dimension of the baseline backend.
pub const DEFAULT_BASELINE_DIM: usize = 256;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("feature vector contains a non-finite value at index {0}")]
    NonFinite(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { got: usize, need: usize },
    #[error("{k} components requested but at most {max} are available")]
    TooManyComponents { k: usize, max: usize },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("no feature file for map hash {hash} (looked for {path})")]
    MissingFeature { hash: String, path: PathBuf },
    #[error("feature file {path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    DepthMap(#[from] DepthMapError),
}

/// A finite feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    values: Vec<f64>,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbeddingError> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite(i));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Element-wise signed square root `sign(x)·√|x|`.
pub fn sqrt_normalize(v: &FeatureVector) -> FeatureVector {
    FeatureVector {
        values: v
            .values
            .iter()
            .map(|&x| x.signum() * x.abs().sqrt())
            .collect(),
    }
}
