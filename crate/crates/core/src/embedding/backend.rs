use std::fs;
use std::path::{Path, PathBuf};

use super::{content_hash, pca_fit, read_fvec, EmbeddingError, FeatureVector, PcaModel};
use crate::depthmap::{encode_pgm, DepthMap};

/// A deterministic map from a normalized depth map to a feature vector.
pub trait EmbeddingBackend: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, map: &DepthMap) -> Result<FeatureVector, EmbeddingError>;
}

/// Projection of flattened depth maps onto their leading principal
/// components. Invalid pixels contribute 0.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineBackend {
    pca: PcaModel,
    width: usize,
    height: usize,
}

impl BaselineBackend {
    pub fn pca(&self) -> &PcaModel {
        &self.pca
    }
}

fn flatten(map: &DepthMap) -> Vec<f64> {
    map.depth().to_vec()
}

/// Fits a `d`-component eigen-depth-map basis. All maps must share one size.
pub fn baseline_train(maps: &[DepthMap], d: usize) -> Result<BaselineBackend, EmbeddingError> {
    if maps.len() < d + 1 {
        return Err(EmbeddingError::TooFewSamples {
            got: maps.len(),
            need: d + 1,
        });
    }
    let (width, height) = (maps[0].width(), maps[0].height());
    let features = maps
        .iter()
        .map(|m| {
            if (m.width(), m.height()) != (width, height) {
                return Err(EmbeddingError::Dimension {
                    expected: width * height,
                    got: m.width() * m.height(),
                });
            }
            FeatureVector::new(flatten(m))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let pca = pca_fit(&features, d)?;
    Ok(BaselineBackend { pca, width, height })
}

impl EmbeddingBackend for BaselineBackend {
    fn dimension(&self) -> usize {
        self.pca.output_dim()
    }

    fn embed(&self, map: &DepthMap) -> Result<FeatureVector, EmbeddingError> {
        if (map.width(), map.height()) != (self.width, self.height) {
            return Err(EmbeddingError::Dimension {
                expected: self.width * self.height,
                got: map.width() * map.height(),
            });
        }
        FeatureVector::new(self.pca.project(&flatten(map))?)
    }
}

/// Features computed elsewhere, stored as `<sha256 of PGM bytes>.fvec`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalBackend {
    dir: PathBuf,
    dim: usize,
}

impl ExternalBackend {
    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn feature_path(&self, hash: &str) -> PathBuf {
        self.dir.join(format!("{hash}.fvec"))
    }
}

/// Opens a feature directory; the dimension is taken from the first
/// `.fvec` file in name order.
pub fn external_backend(dir: impl AsRef<Path>) -> Result<ExternalBackend, EmbeddingError> {
    let dir = dir.as_ref();
    let io_err = |source| EmbeddingError::Io {
        path: dir.to_owned(),
        source,
    };
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "fvec"))
        .collect();
    files.sort();
    let first = files.first().ok_or_else(|| EmbeddingError::Format {
        path: dir.to_owned(),
        message: "directory holds no .fvec files".into(),
    })?;
    let dim = read_fvec(first)?.dim();
    Ok(ExternalBackend {
        dir: dir.to_owned(),
        dim,
    })
}

impl EmbeddingBackend for ExternalBackend {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed(&self, map: &DepthMap) -> Result<FeatureVector, EmbeddingError> {
        let hash = content_hash(&encode_pgm(map)?);
        let path = self.feature_path(&hash);
        if !path.is_file() {
            return Err(EmbeddingError::MissingFeature { hash, path });
        }
        let v = read_fvec(&path)?;
        if v.dim() != self.dim {
            return Err(EmbeddingError::Dimension {
                expected: self.dim,
                got: v.dim(),
            });
        }
        Ok(v)
    }
}
