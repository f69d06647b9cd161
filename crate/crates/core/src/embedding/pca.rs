use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::{EmbeddingError, FeatureVector};

/// Principal components of a feature set.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    mean: DVector<f64>,
    /// k × D, orthonormal rows.
    components: DMatrix<f64>,
    /// Sample variance along each component, non-increasing.
    explained_variance: Vec<f64>,
}

impl PcaModel {
    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn components(&self) -> &DMatrix<f64> {
        &self.components
    }

    pub fn explained_variance(&self) -> &[f64] {
        &self.explained_variance
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.components.nrows()
    }

    /// Keeps the leading `k` components.
    pub fn truncate(&self, k: usize) -> Self {
        let k = k.min(self.output_dim());
        Self {
            mean: self.mean.clone(),
            components: self.components.rows(0, k).into_owned(),
            explained_variance: self.explained_variance[..k].to_vec(),
        }
    }

    /// `components · (v − mean)` on a raw slice.
    pub(crate) fn project(&self, v: &[f64]) -> Result<Vec<f64>, EmbeddingError> {
        if v.len() != self.input_dim() {
            return Err(EmbeddingError::Dimension {
                expected: self.input_dim(),
                got: v.len(),
            });
        }
        let centered = DVector::from_column_slice(v) - &self.mean;
        Ok((&self.components * centered).as_slice().to_vec())
    }
}

/// Eigenvalues below this fraction of the largest count as zero.
const RANK_TOL: f64 = 1e-10;

fn check_inputs(features: &[FeatureVector]) -> Result<usize, EmbeddingError> {
    if features.len() < 2 {
        return Err(EmbeddingError::TooFewSamples {
            got: features.len(),
            need: 2,
        });
    }
    let d = features[0].dim();
    if d == 0 {
        return Err(EmbeddingError::Degenerate(
            "zero-dimensional features".into(),
        ));
    }
    for f in features {
        if f.dim() != d {
            return Err(EmbeddingError::Dimension {
                expected: d,
                got: f.dim(),
            });
        }
    }
    Ok(d)
}

/// Eigendecomposition of the sample covariance, keeping at most `max_k`
/// components of nonzero variance.
fn fit_leading(features: &[FeatureVector], max_k: usize) -> Result<PcaModel, EmbeddingError> {
    let d = check_inputs(features)?;
    let n = features.len();
    let mut x = DMatrix::<f64>::zeros(n, d);
    for (i, f) in features.iter().enumerate() {
        x.row_mut(i).copy_from_slice(f.values());
    }
    let scale: f64 = x.iter().map(|v| v * v).sum();
    let mean = x.row_mean().transpose();
    for mut row in x.row_iter_mut() {
        row -= mean.transpose();
    }

    let gram = n <= d;
    let small = if gram {
        &x * x.transpose()
    } else {
        x.transpose() * &x
    };
    let eig = SymmetricEigen::new(small);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let top = eig.eigenvalues[order[0]];
    if !(top > 1e-20 * scale) || top <= 0.0 {
        return Err(EmbeddingError::Degenerate(
            "all samples are identical".into(),
        ));
    }
    let rank = order
        .iter()
        .take_while(|&&i| eig.eigenvalues[i] > RANK_TOL * top)
        .count()
        .min(n - 1);
    let k = rank.min(max_k);

    let mut components = DMatrix::<f64>::zeros(k, d);
    let mut explained_variance = Vec::with_capacity(k);
    for (row, &i) in order.iter().take(k).enumerate() {
        let lambda = eig.eigenvalues[i];
        let u = eig.eigenvectors.column(i);
        let mut v: DVector<f64> = if gram {
            x.tr_mul(&u) / lambda.sqrt()
        } else {
            u.into_owned()
        };
        let (mut best, mut best_abs) = (0, -1.0);
        for (j, c) in v.iter().enumerate() {
            if c.abs() > best_abs {
                best = j;
                best_abs = c.abs();
            }
        }
        if v[best] < 0.0 {
            v.neg_mut();
        }
        components.row_mut(row).copy_from(&v.transpose());
        explained_variance.push(lambda / (n - 1) as f64);
    }
    Ok(PcaModel {
        mean,
        components,
        explained_variance,
    })
}

/// Top-`k` principal components of the mean-centered sample covariance.
///
/// The largest-magnitude entry of every component is made positive.
pub fn pca_fit(features: &[FeatureVector], k: usize) -> Result<PcaModel, EmbeddingError> {
    let d = check_inputs(features)?;
    let max = d.min(features.len() - 1);
    if k == 0 || k > max {
        return Err(EmbeddingError::TooManyComponents { k, max });
    }
    let model = fit_leading(features, k)?;
    if model.output_dim() < k {
        return Err(EmbeddingError::Degenerate(format!(
            "samples span only {} dimensions, {k} components requested",
            model.output_dim()
        )));
    }
    Ok(model)
}

/// Smallest `k ≥ 1` whose leading variances reach `target` of the total,
/// capped at `cap`.
pub fn components_for_variance(explained: &[f64], target: f64, cap: usize) -> usize {
    let total: f64 = explained.iter().sum();
    let mut acc = 0.0;
    let mut k = explained.len();
    for (i, v) in explained.iter().enumerate() {
        acc += v;
        if acc >= target * total {
            k = i + 1;
            break;
        }
    }
    k.clamp(1, cap.max(1))
}

/// PCA keeping enough components to explain `target` of the variance, at most `cap`.
pub fn pca_fit_variance(
    features: &[FeatureVector],
    target: f64,
    cap: usize,
) -> Result<PcaModel, EmbeddingError> {
    let full = fit_leading(features, usize::MAX)?;
    let k = components_for_variance(full.explained_variance(), target, cap);
    Ok(full.truncate(k))
}

pub fn pca_transform(model: &PcaModel, v: &FeatureVector) -> Result<FeatureVector, EmbeddingError> {
    FeatureVector::new(model.project(v.values())?)
}
