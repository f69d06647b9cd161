//! Synthetic identities and scans drawn from the toy face, and the
//! end-to-end identification benchmark built on them.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augmentation::{random_rigid, AugmentError};
use crate::depthmap::{render_face, DepthMap, DepthMapError, RenderParams};
use crate::embedding::{baseline_train, EmbeddingBackend, EmbeddingError, FeatureVector};
use crate::morphable::{
    displacement_field, fit, inside_face, random_expression, transfer_expression, FitConfig,
    ModelParams, MorphableError, ToyFace, FACE_HALF_HEIGHT, FACE_HALF_WIDTH,
};
use crate::pipeline::{evaluate_features, MatchSettings, PipelineError};
use crate::pointcloud::{apply_transform, PointCloud};
use crate::registration::{preprocess, IcpParams, PreprocessError, Reference};

#[derive(Debug, Error)]
pub enum SyntheticError {
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Morphable(#[from] MorphableError),
    #[error(transparent)]
    DepthMap(#[from] DepthMapError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

/// Jittered grid over the face ellipse: spacing in mm, jitter as a fraction
/// of the spacing (uniform, per axis).
pub fn scan_positions<R: Rng + ?Sized>(rng: &mut R, spacing: f64, jitter: f64) -> Vec<(f64, f64)> {
    let nx = (FACE_HALF_WIDTH / spacing).ceil() as i64;
    let ny = (FACE_HALF_HEIGHT / spacing).ceil() as i64;
    let mut out = Vec::new();
    for j in -ny..=ny {
        for i in -nx..=nx {
            let dx = rng.random_range(-jitter..=jitter) * spacing;
            let dy = rng.random_range(-jitter..=jitter) * spacing;
            let (x, y) = (i as f64 * spacing + dx, j as f64 * spacing + dy);
            if inside_face(x, y) {
                out.push((x, y));
            }
        }
    }
    out
}

/// Shape coefficients with independent standard normal entries.
pub fn random_identity<R: Rng + ?Sized>(rng: &mut R, ks: usize) -> Vec<f64> {
    (0..ks).map(|_| rng.sample(StandardNormal)).collect()
}

/// Dense scan of the toy face for `params` at freshly jittered positions.
pub fn sample_scan<R: Rng + ?Sized>(
    face: &ToyFace,
    params: &ModelParams,
    spacing: f64,
    rng: &mut R,
) -> PointCloud {
    let xy = scan_positions(rng, spacing, 0.15);
    PointCloud::new(face.sample(params, &xy)).expect("toy samples are finite")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub identities: usize,
    pub probes_per_identity: usize,
    /// Expression variants per identity in the embedder training set.
    pub train_expressions: usize,
    /// Pose variants per identity in the embedder training set.
    pub train_poses: usize,
    pub model_vertices: usize,
    pub shape_components: usize,
    pub expression_components: usize,
    /// Scan sample spacing in mm.
    pub spacing: f64,
    pub embed_dim: usize,
    /// Rigid jitter bounds for probes (degrees, mm).
    pub angle_bound: f64,
    pub translation_bound: f64,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            identities: 20,
            probes_per_identity: 5,
            train_expressions: 4,
            train_poses: 4,
            model_vertices: 2000,
            shape_components: 10,
            expression_components: 29,
            spacing: 0.75,
            embed_dim: 64,
            angle_bound: 10.0,
            translation_bound: 10.0,
            seed: 20_240_917,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub rank1_unperturbed: f64,
    pub rank1_perturbed: f64,
    pub cmc_unperturbed: Vec<f64>,
    pub cmc_perturbed: Vec<f64>,
    pub training_maps: usize,
    pub feature_dim: usize,
    /// Largest ICP rmse over all registered scans (mm).
    pub worst_icp_rmse: f64,
    pub seconds: f64,
}

fn identity_seed(seed: u64, identity: usize) -> u64 {
    seed ^ (identity as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

struct Subject {
    gallery: DepthMap,
    unperturbed: DepthMap,
    perturbed: Vec<DepthMap>,
    training: Vec<DepthMap>,
    worst_rmse: f64,
}

fn build_subject(
    face: &ToyFace,
    reference: &Reference,
    cfg: &BenchmarkConfig,
    identity: usize,
) -> Result<Subject, SyntheticError> {
    let model = face.model();
    let render = RenderParams::default();
    let icp = IcpParams::default();
    let fit_cfg = FitConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(identity_seed(cfg.seed, identity));
    let neutral = ModelParams {
        alpha: random_identity(&mut rng, model.shape_components()),
        beta: vec![0.0; model.expression_components()],
    };
    let mut worst_rmse: f64 = 0.0;
    let mut register = |cloud: &PointCloud| -> Result<PointCloud, SyntheticError> {
        let p = preprocess(cloud, reference, &icp, render.crop_radius)?;
        worst_rmse = worst_rmse.max(p.icp.rmse);
        Ok(p.cloud)
    };

    let enrolled = register(&sample_scan(face, &neutral, cfg.spacing, &mut rng))?;
    let gallery = render_face(&enrolled, &render)?;
    let unperturbed = render_face(
        &register(&sample_scan(face, &neutral, cfg.spacing, &mut rng))?,
        &render,
    )?;

    let mut training = vec![gallery.clone()];
    let fitted = fit(model, &enrolled, &fit_cfg)?;
    for _ in 0..cfg.train_expressions {
        let beta = random_expression(&mut rng, model.expression_components());
        let field = displacement_field(&fitted, &beta, model)?;
        training.push(render_face(
            &transfer_expression(&enrolled, &fitted, &field)?,
            &render,
        )?);
    }
    for _ in 0..cfg.train_poses {
        let t = random_rigid(&mut rng, cfg.angle_bound, cfg.translation_bound);
        training.push(render_face(&apply_transform(&enrolled, &t), &render)?);
    }

    let source = sample_scan(face, &neutral, cfg.spacing, &mut rng);
    let source_fit = fit(model, &source, &fit_cfg)?;
    let mut perturbed = Vec::with_capacity(cfg.probes_per_identity);
    for _ in 0..cfg.probes_per_identity {
        let beta = random_expression(&mut rng, model.expression_components());
        let field = displacement_field(&source_fit, &beta, model)?;
        let expressed = transfer_expression(&source, &source_fit, &field)?;
        let t = random_rigid(&mut rng, cfg.angle_bound, cfg.translation_bound);
        let aligned = register(&apply_transform(&expressed, &t))?;
        perturbed.push(render_face(&aligned, &render)?);
    }
    Ok(Subject {
        gallery,
        unperturbed,
        perturbed,
        training,
        worst_rmse,
    })
}

/// Gallery of neutral renders; probes are fresh neutral scans (unperturbed)
/// and expression-transferred, rigidly jittered, re-registered scans
/// (perturbed). The baseline embedder is trained on the gallery renders and
/// their expression and pose variants.
pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<BenchmarkReport, SyntheticError> {
    let start = Instant::now();
    let face = ToyFace::new(
        cfg.model_vertices,
        cfg.shape_components,
        cfg.expression_components,
        cfg.seed,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mean = face.model().zero_params();
    let reference = Reference::new(sample_scan(&face, &mean, cfg.spacing, &mut rng))?;

    let subjects = (0..cfg.identities)
        .map(|i| build_subject(&face, &reference, cfg, i))
        .collect::<Result<Vec<_>, _>>()?;
    let training: Vec<DepthMap> = subjects
        .iter()
        .flat_map(|s| s.training.iter().cloned())
        .collect();
    let dim = cfg.embed_dim.min(training.len() - 1);
    let backend = baseline_train(&training, dim)?;

    let id = |i: usize| format!("id{i:03}");
    let embed = |m: &DepthMap| -> Result<FeatureVector, EmbeddingError> { backend.embed(m) };
    let mut gallery = Vec::new();
    let mut unperturbed = Vec::new();
    let mut perturbed = Vec::new();
    for (i, s) in subjects.iter().enumerate() {
        gallery.push((id(i), embed(&s.gallery)?));
        unperturbed.push((id(i), embed(&s.unperturbed)?));
        for p in &s.perturbed {
            perturbed.push((id(i), embed(p)?));
        }
    }
    let settings = MatchSettings::default();
    let clean = evaluate_features(gallery.clone(), unperturbed, &settings)?;
    let noisy = evaluate_features(gallery, perturbed, &settings)?;
    Ok(BenchmarkReport {
        rank1_unperturbed: clean.summary.rank1,
        rank1_perturbed: noisy.summary.rank1,
        cmc_unperturbed: clean.cmc,
        cmc_perturbed: noisy.cmc,
        training_maps: training.len(),
        feature_dim: noisy.feature_dim,
        worst_icp_rmse: subjects.iter().map(|s| s.worst_rmse).fold(0.0, f64::max),
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn positions_cover_face_and_are_deterministic() {
        let a = scan_positions(&mut ChaCha8Rng::seed_from_u64(1), 2.0, 0.15);
        let b = scan_positions(&mut ChaCha8Rng::seed_from_u64(1), 2.0, 0.15);
        assert_eq!(a, b);
        assert!(a.iter().all(|&(x, y)| inside_face(x, y)));
        // ellipse area / cell area
        let expected = std::f64::consts::PI * 70.0 * 90.0 * 0.95 * 0.95 / 4.0;
        assert!((a.len() as f64 - expected).abs() < 0.05 * expected);
    }

    #[test]
    fn identities_differ() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert_ne!(random_identity(&mut rng, 5), random_identity(&mut rng, 5));
    }
}
