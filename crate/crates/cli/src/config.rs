use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use facepipe_core::augmentation::AugmentPlan;
use facepipe_core::morphable::{load_model, FitConfig, MorphableModel, ToyFace};
use facepipe_core::pipeline::{MatchSettings, PcaMode};
use facepipe_core::pointcloud::{load_ply, PointCloud};
use facepipe_core::registration::{IcpParams, Reference};
use facepipe_core::synthetic::sample_scan;
use facepipe_core::{embedding::DEFAULT_BASELINE_DIM, RenderParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// File name of the resolved configuration written next to every output.
pub const RESOLVED_CONFIG: &str = "facepipe-config.json";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Reference face for ICP; the toy mean face when absent.
    pub reference_model_path: Option<PathBuf>,
    /// Morphable model file; the toy model when absent.
    pub morphable_model_path: Option<PathBuf>,
    pub toy_model: ToyModelConfig,
    pub icp: IcpParams,
    pub fit: FitConfig,
    pub render: RenderParams,
    pub augment: AugmentPlan,
    pub embedding: EmbeddingConfig,
    pub matching: MatchingConfig,
    /// Master seed; every per-item seed is derived from it.
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyModelConfig {
    pub vertices: usize,
    pub shape_components: usize,
    pub expression_components: usize,
    pub seed: u64,
    /// Sample spacing (mm) of the default reference face.
    pub reference_spacing: f64,
}

impl Default for ToyModelConfig {
    fn default() -> Self {
        Self {
            vertices: 2000,
            shape_components: 10,
            expression_components: 29,
            seed: 20_240_917,
            reference_spacing: 0.75,
        }
    }
}

impl ToyModelConfig {
    pub fn face(&self) -> ToyFace {
        ToyFace::new(
            self.vertices,
            self.shape_components,
            self.expression_components,
            self.seed,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    /// Eigen-depth-map projection trained on the fly.
    #[default]
    Baseline,
    /// Precomputed `.fvec` files keyed by PGM content hash.
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub backend: Backend,
    /// Baseline output dimension (capped at training maps − 1).
    pub dimension: usize,
    /// Directory of `.fvec` files for the external backend.
    pub features_dir: Option<PathBuf>,
    /// Rendered maps the baseline is trained on; the gallery when absent.
    pub train_dir: Option<PathBuf>,
    pub pca_variance_target: f64,
    pub disable_pca: bool,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            backend: Backend::Baseline,
            dimension: DEFAULT_BASELINE_DIM,
            features_dir: None,
            train_dir: None,
            pca_variance_target: 0.95,
            disable_pca: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchingConfig {
    pub pca_mode: PcaMode,
}

impl PipelineConfig {
    /// Reads a JSON config; relative paths inside it are resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: PipelineConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.reference_model_path,
            &mut cfg.morphable_model_path,
            &mut cfg.embedding.features_dir,
            &mut cfg.embedding.train_dir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Checks values and that every configured path exists.
    pub fn validate(&self) -> Result<()> {
        self.icp.validate()?;
        self.augment.validate()?;
        self.render.validate()?;
        let target = self.embedding.pca_variance_target;
        if !(target > 0.0 && target <= 1.0) {
            bail!("embedding.pca_variance_target must lie in (0, 1], got {target}");
        }
        if self.embedding.dimension == 0 {
            bail!("embedding.dimension must be positive");
        }
        if !(self.toy_model.reference_spacing > 0.0) {
            bail!("toy_model.reference_spacing must be positive");
        }
        if self.embedding.backend == Backend::External && self.embedding.features_dir.is_none() {
            bail!("the external backend needs embedding.features_dir");
        }
        let files = [&self.reference_model_path, &self.morphable_model_path];
        for p in files.into_iter().flatten() {
            if !p.is_file() {
                bail!("configured file {} does not exist", p.display());
            }
        }
        let dirs = [&self.embedding.features_dir, &self.embedding.train_dir];
        for p in dirs.into_iter().flatten() {
            if !p.is_dir() {
                bail!("configured directory {} does not exist", p.display());
            }
        }
        Ok(())
    }

    pub fn match_settings(&self) -> MatchSettings {
        MatchSettings {
            pca_mode: self.matching.pca_mode,
            pca_variance_target: self.embedding.pca_variance_target,
            disable_pca: self.embedding.disable_pca,
        }
    }

    pub fn morphable_model(&self) -> Result<MorphableModel> {
        match &self.morphable_model_path {
            Some(p) => load_model(p).with_context(|| format!("loading model {}", p.display())),
            None => Ok(self.toy_model.face().into_model()),
        }
    }

    pub fn reference_cloud(&self) -> Result<PointCloud> {
        match &self.reference_model_path {
            Some(p) => load_ply(p).with_context(|| format!("loading reference {}", p.display())),
            None => Ok(toy_reference(&self.toy_model)),
        }
    }

    pub fn reference(&self) -> Result<Reference> {
        Reference::new(self.reference_cloud()?).context("preparing the reference face")
    }

    /// Writes this config as pretty JSON into `dir`.
    pub fn write_resolved(&self, dir: &Path) -> Result<()> {
        let path = dir.join(RESOLVED_CONFIG);
        let text = serde_json::to_string_pretty(self)? + "\n";
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}

/// The toy mean face sampled on a jittered grid.
pub fn toy_reference(toy: &ToyModelConfig) -> PointCloud {
    let face = toy.face();
    let mut rng = ChaCha8Rng::seed_from_u64(toy.seed);
    sample_scan(
        &face,
        &face.model().zero_params(),
        toy.reference_spacing,
        &mut rng,
    )
}
