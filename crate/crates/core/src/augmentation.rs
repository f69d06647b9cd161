//! Training-set enlargement: transferred random expressions, random rigid
//! perturbations and random occlusion patches.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::depthmap::DepthMap;
use crate::morphable::{
    displacement_field, fit, random_expression, transfer_expression, FitConfig, MorphableError,
    MorphableModel,
};
use crate::pointcloud::{apply_transform, PointCloud, RigidTransform};

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("invalid augmentation plan: {0}")]
    InvalidPlan(String),
    #[error("patch of {size}×{size} does not fit a {width}×{height} map")]
    PatchTooLarge {
        size: usize,
        width: usize,
        height: usize,
    },
    #[error(transparent)]
    Morphable(#[from] MorphableError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentPlan {
    pub expressions_per_subject: usize,
    pub poses_per_scan: usize,
    pub patch_variants_per_scan: usize,
    /// Degrees.
    pub angle_bound: f64,
    /// Millimeters.
    pub translation_bound: f64,
    pub patch_count: usize,
    /// Pixels.
    pub patch_size: usize,
    /// Patch variants are rendered for augmented clouds too, not only originals.
    pub patch_augmented: bool,
    pub seed: u64,
}

impl Default for AugmentPlan {
    fn default() -> Self {
        Self {
            expressions_per_subject: 25,
            poses_per_scan: 10,
            patch_variants_per_scan: 10,
            angle_bound: 10.0,
            translation_bound: 10.0,
            patch_count: 8,
            patch_size: 18,
            patch_augmented: true,
            seed: 0,
        }
    }
}

impl AugmentPlan {
    /// A plan that generates nothing.
    pub fn none(seed: u64) -> Self {
        Self {
            expressions_per_subject: 0,
            poses_per_scan: 0,
            patch_variants_per_scan: 0,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.angle_bound) || !positive(self.translation_bound) {
            return Err(AugmentError::InvalidPlan(format!(
                "bounds must be positive, got angle {} and translation {}",
                self.angle_bound, self.translation_bound
            )));
        }
        if self.patch_size == 0 {
            return Err(AugmentError::InvalidPlan(
                "patch_size must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Angles (radians, about x, y, z) and translation of one random rigid draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidDraw {
    pub angles: [f64; 3],
    pub translation: [f64; 3],
}

impl RigidDraw {
    pub fn transform(&self) -> RigidTransform {
        let [rx, ry, rz] = self.angles;
        RigidTransform::from_euler(rx, ry, rz, Vector3::from(self.translation))
    }
}

/// Uniform draw from the open interval `(−bound, bound)`.
fn open_uniform<R: Rng + ?Sized>(rng: &mut R, bound: f64) -> f64 {
    loop {
        let v = rng.random_range(-bound..bound);
        if v != -bound {
            return v;
        }
    }
}

/// Draws θ₁, θ₂, θ₃ and t uniformly inside the bounds (degrees and mm).
pub fn random_rigid_draw<R: Rng + ?Sized>(
    rng: &mut R,
    angle_bound: f64,
    translation_bound: f64,
) -> RigidDraw {
    let bound = angle_bound.to_radians();
    let angles = [(); 3].map(|_| open_uniform(rng, bound));
    let translation = [(); 3].map(|_| open_uniform(rng, translation_bound));
    RigidDraw {
        angles,
        translation,
    }
}

/// `R = R_z(θ₃)·R_y(θ₂)·R_x(θ₁)` with every |θᵢ| below `angle_bound` degrees
/// and every |tᵢ| below `translation_bound` mm.
pub fn random_rigid<R: Rng + ?Sized>(
    rng: &mut R,
    angle_bound: f64,
    translation_bound: f64,
) -> RigidTransform {
    random_rigid_draw(rng, angle_bound, translation_bound).transform()
}

/// Top-left corners of `count` random `size × size` patches fully inside a
/// `width × height` canvas.
pub fn patch_positions<R: Rng + ?Sized>(
    rng: &mut R,
    width: usize,
    height: usize,
    count: usize,
    size: usize,
) -> Result<Vec<(usize, usize)>, AugmentError> {
    if size == 0 || size > width || size > height {
        return Err(AugmentError::PatchTooLarge {
            size,
            width,
            height,
        });
    }
    Ok((0..count)
        .map(|_| {
            (
                rng.random_range(0..=width - size),
                rng.random_range(0..=height - size),
            )
        })
        .collect())
}

/// Invalidates `count` random, possibly overlapping `size × size` squares.
pub fn apply_patches<R: Rng + ?Sized>(
    map: &DepthMap,
    rng: &mut R,
    count: usize,
    size: usize,
) -> Result<DepthMap, AugmentError> {
    let corners = patch_positions(rng, map.width(), map.height(), count, size)?;
    let mut out = map.clone();
    for (x0, y0) in corners {
        for y in y0..y0 + size {
            for x in x0..x0 + size {
                out.invalidate(x, y);
            }
        }
    }
    Ok(out)
}

/// What produced an augmented cloud.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AugmentKind {
    Expression { index: usize, beta: Vec<f64> },
    Pose { index: usize, draw: RigidDraw },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Augmented {
    pub cloud: PointCloud,
    pub kind: AugmentKind,
}

/// Fits the model once and transfers `count` random expressions onto `scan`.
pub fn expression_variants<R: Rng + ?Sized>(
    scan: &PointCloud,
    model: &MorphableModel,
    fit_config: &FitConfig,
    count: usize,
    rng: &mut R,
) -> Result<Vec<Augmented>, AugmentError> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let fitted = fit(model, scan, fit_config)?;
    (0..count)
        .map(|index| {
            let beta = random_expression(rng, model.expression_components());
            let field = displacement_field(&fitted, &beta, model)?;
            let cloud = transfer_expression(scan, &fitted, &field)?;
            Ok(Augmented {
                cloud,
                kind: AugmentKind::Expression { index, beta },
            })
        })
        .collect()
}

/// `count` randomly rigidly perturbed copies of `scan`.
pub fn pose_variants<R: Rng + ?Sized>(
    scan: &PointCloud,
    count: usize,
    angle_bound: f64,
    translation_bound: f64,
    rng: &mut R,
) -> Vec<Augmented> {
    (0..count)
        .map(|index| {
            let draw = random_rigid_draw(rng, angle_bound, translation_bound);
            Augmented {
                cloud: apply_transform(scan, &draw.transform()),
                kind: AugmentKind::Pose { index, draw },
            }
        })
        .collect()
}

/// Expression variants followed by pose variants of one scan, all driven by
/// `plan.seed`.
pub fn augment_subject(
    scan: &PointCloud,
    model: &MorphableModel,
    plan: &AugmentPlan,
    fit_config: &FitConfig,
) -> Result<Vec<Augmented>, AugmentError> {
    plan.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut out = expression_variants(
        scan,
        model,
        fit_config,
        plan.expressions_per_subject,
        &mut rng,
    )?;
    out.extend(pose_variants(
        scan,
        plan.poses_per_scan,
        plan.angle_bound,
        plan.translation_bound,
        &mut rng,
    ));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::morphable::{make_toy_model, synthesize};

    #[test]
    fn rigid_draws_respect_bounds_and_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..2000 {
            let d = random_rigid_draw(&mut rng, 10.0, 10.0);
            let t = d.transform();
            assert!((t.rotation().determinant() - 1.0).abs() < 1e-12);
            let (ax, ay, az) = t.euler_angles();
            let angles = [ax, ay, az];
            for i in 0..3 {
                assert!(d.angles[i].abs() < 10f64.to_radians());
                assert!(d.translation[i].abs() < 10.0);
                assert!((angles[i] - d.angles[i]).abs() < 1e-9);
            }
        }
        let a = random_rigid(&mut ChaCha8Rng::seed_from_u64(4), 10.0, 10.0);
        let b = random_rigid(&mut ChaCha8Rng::seed_from_u64(4), 10.0, 10.0);
        assert_eq!(a, b);
    }

    #[test]
    fn tiny_bounds_approach_identity() {
        let t = random_rigid(&mut ChaCha8Rng::seed_from_u64(1), 1e-12, 1e-12);
        assert!(t.rotation_angle() < 1e-12);
        assert!(t.translation().norm() < 1e-11);
    }

    #[test]
    fn patches_stay_inside_rectangles() {
        let map = DepthMap::from_values(224, 224, vec![5.0; 224 * 224]).unwrap();
        let same = apply_patches(&map, &mut ChaCha8Rng::seed_from_u64(0), 0, 18).unwrap();
        assert_eq!(same, map);
        for seed in 0..50 {
            let corners =
                patch_positions(&mut ChaCha8Rng::seed_from_u64(seed), 224, 224, 8, 18).unwrap();
            let out = apply_patches(&map, &mut ChaCha8Rng::seed_from_u64(seed), 8, 18).unwrap();
            let holes = 224 * 224 - out.valid_count();
            assert!((324..=2592).contains(&holes), "{holes}");
            for y in 0..224 {
                for x in 0..224 {
                    let inside = corners
                        .iter()
                        .any(|&(cx, cy)| (cx..cx + 18).contains(&x) && (cy..cy + 18).contains(&y));
                    assert_eq!(out.is_valid(x, y), !inside);
                    if !inside {
                        assert_eq!(out.get(x, y), 5.0);
                    }
                }
            }
        }
        assert!(apply_patches(&map, &mut ChaCha8Rng::seed_from_u64(0), 1, 225).is_err());
    }

    #[test]
    fn subject_counts_and_determinism() {
        let model = make_toy_model(400, 3, 6, 2);
        let mut p = model.zero_params();
        p.alpha[0] = 0.5;
        let scan = synthesize(&model, &p).unwrap();
        let plan = AugmentPlan {
            expressions_per_subject: 4,
            poses_per_scan: 3,
            seed: 99,
            ..AugmentPlan::default()
        };
        let a = augment_subject(&scan, &model, &plan, &FitConfig::default()).unwrap();
        assert_eq!(a.len(), 7);
        assert!(a.iter().all(|x| x.cloud.len() == scan.len()));
        assert!(matches!(
            a[0].kind,
            AugmentKind::Expression { index: 0, .. }
        ));
        assert!(matches!(a[6].kind, AugmentKind::Pose { index: 2, .. }));
        let b = augment_subject(&scan, &model, &plan, &FitConfig::default()).unwrap();
        assert_eq!(a, b);
        assert!(
            augment_subject(&scan, &model, &AugmentPlan::none(1), &FitConfig::default())
                .unwrap()
                .is_empty()
        );
    }
}
