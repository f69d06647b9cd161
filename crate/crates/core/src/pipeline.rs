//! Test-side feature chain: signed square root, PCA, cosine identification
//! and CMC / ROC evaluation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{
    pca_fit_variance, pca_transform, sqrt_normalize, EmbeddingError, FeatureVector,
};
use crate::matching::{
    cmc, identify, roc, score_split, EvaluationSummary, Gallery, MatchingError, RankedMatches,
    RocPoint, DEFAULT_ROC_THRESHOLDS,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Matching(#[from] MatchingError),
}

/// Which features the PCA is fitted on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PcaMode {
    /// Gallery and probe features together.
    #[default]
    Union,
    Gallery,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchSettings {
    pub pca_mode: PcaMode,
    /// Fraction of variance the retained components must explain.
    pub pca_variance_target: f64,
    /// Skip the PCA step entirely.
    pub disable_pca: bool,
}

impl Default for MatchSettings {
    fn default() -> Self {
        Self {
            pca_mode: PcaMode::Union,
            pca_variance_target: 0.95,
            disable_pca: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// `(true subject, ranking)` per probe, in probe order.
    pub results: Vec<(String, RankedMatches)>,
    pub cmc: Vec<f64>,
    pub roc: Vec<RocPoint>,
    pub summary: EvaluationSummary,
    /// Dimension after PCA.
    pub feature_dim: usize,
}

/// Square-root normalizes, projects with PCA (at most `gallery − 1`
/// components), identifies every probe and computes the curves.
pub fn evaluate_features(
    gallery: Vec<(String, FeatureVector)>,
    probes: Vec<(String, FeatureVector)>,
    settings: &MatchSettings,
) -> Result<Evaluation, PipelineError> {
    if gallery.is_empty() {
        return Err(MatchingError::EmptyGallery.into());
    }
    if probes.is_empty() {
        return Err(MatchingError::NoResults.into());
    }
    let norm = |v: Vec<(String, FeatureVector)>| -> Vec<(String, FeatureVector)> {
        v.into_iter()
            .map(|(id, f)| (id, sqrt_normalize(&f)))
            .collect()
    };
    let (mut gallery, mut probes) = (norm(gallery), norm(probes));
    let gallery_size = gallery.len();
    for (probe, (id, _)) in probes.iter().enumerate() {
        if !gallery.iter().any(|(g, _)| g == id) {
            return Err(MatchingError::Accounting {
                probe,
                subject: id.clone(),
            }
            .into());
        }
    }

    if !settings.disable_pca {
        let mut fit_set: Vec<FeatureVector> = gallery.iter().map(|(_, f)| f.clone()).collect();
        if settings.pca_mode == PcaMode::Union {
            fit_set.extend(probes.iter().map(|(_, f)| f.clone()));
        }
        let cap = gallery_size.saturating_sub(1).max(1);
        let pca = pca_fit_variance(&fit_set, settings.pca_variance_target, cap)?;
        let project = |v: &mut Vec<(String, FeatureVector)>| -> Result<(), EmbeddingError> {
            for (_, f) in v.iter_mut() {
                *f = pca_transform(&pca, f)?;
            }
            Ok(())
        };
        project(&mut gallery)?;
        project(&mut probes)?;
    }
    let feature_dim = gallery[0].1.dim();
    let gallery = Gallery::new(gallery)?;
    let results = probes
        .into_iter()
        .map(|(id, f)| Ok((id, identify(&f, &gallery)?)))
        .collect::<Result<Vec<_>, MatchingError>>()?;
    let curve = cmc(&results, gallery_size)?;
    let (genuine, impostor) = score_split(&results);
    let roc = roc(&genuine, &impostor, DEFAULT_ROC_THRESHOLDS);
    let summary = EvaluationSummary::from_cmc(&curve, results.len(), gallery_size);
    Ok(Evaluation {
        results,
        cmc: curve,
        roc,
        summary,
        feature_dim,
    })
}
