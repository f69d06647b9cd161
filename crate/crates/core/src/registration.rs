//! Alignment of raw scans to a reference face: nose-tip detection, spherical
//! cropping and point-to-point rigid ICP.

use nalgebra::{
    DVector, Matrix3, Point3, Quaternion, Rotation3, SymmetricEigen, UnitQuaternion, Vector3,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extrapolate::Extrapolator;
use crate::pointcloud::{
    apply_transform, crop_sphere, NeighborIndex, PointCloud, PointCloudError, RigidTransform,
    NOSE_TIP,
};

/// Crop radius around the nose tip, millimeters.
pub const DEFAULT_CROP_RADIUS: f64 = 100.0;

/// Minimum cloud size for the nose-tip heuristic.
pub const MIN_NOSE_POINTS: usize = 100;

/// Half-width of the horizontal band searched for the nose, as a fraction of
/// the horizontal extent (40% band in total).
const NOSE_BAND_HALF_WIDTH: f64 = 0.2;

#[derive(Debug, Error, PartialEq)]
pub enum RegistrationError {
    #[error("invalid ICP parameters: {0}")]
    InvalidParams(String),
    #[error("empty point cloud")]
    EmptyCloud,
    #[error("nose-tip heuristic needs at least {MIN_NOSE_POINTS} points, got {0}; supply a '{NOSE_TIP}' landmark")]
    TooFewPoints(usize),
    #[error(
        "nose-tip heuristic failed on a degenerate cloud ({0}); supply a '{NOSE_TIP}' landmark"
    )]
    DegenerateCloud(String),
    #[error("ICP diverged: {accepted} correspondences accepted at iteration {iteration}")]
    Diverged { iteration: usize, accepted: usize },
}

/// Error from [`preprocess`], tagged with the stage that failed.
#[derive(Debug, Error, PartialEq)]
pub enum PreprocessError {
    #[error("nose-tip detection: {0}")]
    NoseTip(RegistrationError),
    #[error("crop: {0}")]
    Crop(PointCloudError),
    #[error("rigid ICP: {0}")]
    Icp(RegistrationError),
}

impl PreprocessError {
    pub fn stage(&self) -> &'static str {
        match self {
            PreprocessError::NoseTip(_) => "nose-tip detection",
            PreprocessError::Crop(_) => "crop",
            PreprocessError::Icp(_) => "rigid ICP",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IcpParams {
    pub max_iterations: usize,
    /// Stop once the mean correspondence distance changes by less than this (mm).
    pub convergence_eps: f64,
    /// Correspondences farther than this multiple of the median distance are dropped.
    pub rejection_multiplier: f64,
    /// Extrapolate along consistent update directions (Besl and McKay).
    pub accelerate: bool,
    /// preprocess registers an evenly strided subset of at most this many
    /// scan points and applies the result to the whole scan.
    pub max_points: Option<usize>,
}

impl Default for IcpParams {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            convergence_eps: 1e-4,
            rejection_multiplier: 2.5,
            accelerate: true,
            max_points: Some(8000),
        }
    }
}

impl IcpParams {
    pub fn validate(&self) -> Result<(), RegistrationError> {
        if self.max_iterations < 1 {
            return Err(RegistrationError::InvalidParams(
                "max_iterations must be ≥ 1".into(),
            ));
        }
        if !(self.convergence_eps > 0.0) {
            return Err(RegistrationError::InvalidParams(
                "convergence_eps must be > 0".into(),
            ));
        }
        if !(self.rejection_multiplier > 1.0) {
            return Err(RegistrationError::InvalidParams(
                "rejection_multiplier must be > 1".into(),
            ));
        }
        if self.max_points.is_some_and(|n| n < 3) {
            return Err(RegistrationError::InvalidParams(
                "max_points must be ≥ 3".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcpResult {
    /// Maps the source onto the reference.
    pub transform: RigidTransform,
    /// RMS distance over accepted correspondences at exit (mm).
    pub rmse: f64,
    /// Number of rigid updates applied.
    pub iterations_used: usize,
    pub converged: bool,
    /// Mean accepted correspondence distance before each update and at exit.
    pub mean_distances: Vec<f64>,
}

/// Returns the `nose_tip` landmark when present, otherwise a geometric estimate.
///
/// The estimate rotates the cloud into its principal frame (largest-variance
/// axis vertical, smallest-variance axis as depth, oriented toward +z) and takes
/// the point of greatest depth inside the central 40% horizontal band. The
/// returned point is a cloud member.
pub fn detect_nose_tip(cloud: &PointCloud) -> Result<Point3<f64>, RegistrationError> {
    if let Some(p) = cloud.landmark(NOSE_TIP) {
        return Ok(p);
    }
    if cloud.len() < MIN_NOSE_POINTS {
        return Err(RegistrationError::TooFewPoints(cloud.len()));
    }
    let centroid = cloud.centroid().ok_or(RegistrationError::EmptyCloud)?;
    let mut cov = Matrix3::zeros();
    for p in cloud.points() {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    cov /= cloud.len() as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let largest = eig.eigenvalues[order[0]];
    let smallest = eig.eigenvalues[order[2]];
    if !(largest > 0.0) || smallest <= 1e-9 * largest {
        return Err(RegistrationError::DegenerateCloud(format!(
            "covariance eigenvalues {largest:.3e} / {smallest:.3e}"
        )));
    }
    let horizontal: Vector3<f64> = eig.eigenvectors.column(order[1]).into();
    let mut depth: Vector3<f64> = eig.eigenvectors.column(order[2]).into();
    if depth.z < 0.0 {
        depth = -depth;
    }

    let h: Vec<f64> = cloud
        .points()
        .iter()
        .map(|p| (p - centroid).dot(&horizontal))
        .collect();
    let (lo, hi) = h
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let mid = 0.5 * (lo + hi);
    let half = NOSE_BAND_HALF_WIDTH * (hi - lo);
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in cloud.points().iter().enumerate() {
        if (h[i] - mid).abs() > half {
            continue;
        }
        let d = (p - centroid).dot(&depth);
        if best.is_none_or(|(_, bd)| d > bd) {
            best = Some((i, d));
        }
    }
    let (i, _) =
        best.ok_or_else(|| RegistrationError::DegenerateCloud("empty central band".into()))?;
    Ok(cloud.points()[i])
}

/// Point-to-point rigid ICP of `source` onto `reference`.
pub fn rigid_icp(
    source: &PointCloud,
    reference: &PointCloud,
    init: &RigidTransform,
    params: &IcpParams,
) -> Result<IcpResult, RegistrationError> {
    let index = NeighborIndex::build(reference.points()).ok_or(RegistrationError::EmptyCloud)?;
    rigid_icp_indexed(source, &index, init, params)
}

/// [`rigid_icp`] against a prebuilt reference index.
pub fn rigid_icp_indexed(
    source: &PointCloud,
    reference: &NeighborIndex,
    init: &RigidTransform,
    params: &IcpParams,
) -> Result<IcpResult, RegistrationError> {
    params.validate()?;
    if source.is_empty() || reference.is_empty() {
        return Err(RegistrationError::EmptyCloud);
    }
    let mut current = *init;
    let mut mean_distances = Vec::new();
    let mut moved = Vec::with_capacity(source.len());
    let mut matches = Vec::with_capacity(source.len());
    let mut src_acc = Vec::with_capacity(source.len());
    let mut dst_acc = Vec::with_capacity(source.len());
    let mut updates = 0;
    let mut accel = Accelerator::default();
    let mut accelerate = params.accelerate;
    // pose and mean distance before the last extrapolation jump, and the
    // mean distance seen at the jumped pose once measured
    let mut jump_check: Option<(RigidTransform, f64, Option<f64>)> = None;
    loop {
        moved.clear();
        moved.extend(source.points().iter().map(|p| current.apply(p)));
        matches.clear();
        matches.extend(moved.iter().map(|p| {
            let (j, d2) = reference.nearest_with_distance(p);
            (j, d2.sqrt())
        }));
        let threshold = params.rejection_multiplier * median(matches.iter().map(|m| m.1));
        src_acc.clear();
        dst_acc.clear();
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for (p, &(j, d)) in moved.iter().zip(&matches) {
            if d <= threshold {
                src_acc.push(*p);
                dst_acc.push(reference.points()[j]);
                sum += d;
                sum_sq += d * d;
            }
        }
        let accepted = src_acc.len();
        if accepted < 3 || !sum.is_finite() {
            return Err(RegistrationError::Diverged {
                iteration: updates + 1,
                accepted,
            });
        }
        let mean = sum / accepted as f64;
        let rmse = (sum_sq / accepted as f64).sqrt();
        // a jump is kept only if it lowers the mean distance and the next
        // ICP update does not start walking back
        if let Some((pose, prev, at_jump)) = jump_check.take() {
            let worse = match at_jump {
                None => mean > prev,
                Some(m) => mean > m,
            };
            if worse {
                current = pose;
                accelerate = false;
                continue;
            }
            if at_jump.is_none() {
                jump_check = Some((pose, prev, Some(mean)));
            }
        }
        let converged = mean_distances
            .last()
            .is_some_and(|prev: &f64| (prev - mean).abs() < params.convergence_eps);
        mean_distances.push(mean);
        if converged || updates == params.max_iterations {
            return Ok(IcpResult {
                transform: current,
                rmse,
                iterations_used: updates,
                converged,
                mean_distances,
            });
        }
        let delta =
            RigidTransform::best_fit(&src_acc, &dst_acc).ok_or(RegistrationError::Diverged {
                iteration: updates + 1,
                accepted,
            })?;
        current = delta.compose(&current);
        updates += 1;
        if accelerate {
            let fit_mse = src_acc
                .iter()
                .zip(&dst_acc)
                .map(|(p, q)| (delta.apply(p) - q).norm_squared())
                .sum::<f64>()
                / accepted as f64;
            if let Some(jump) = accel.push(&current, fit_mse) {
                jump_check = Some((current, mean, None));
                current = jump;
            }
        }
    }
}

/// Extrapolates the registration state `[q_w, q_x, q_y, q_z, t_x, t_y, t_z]`.
#[derive(Default)]
struct Accelerator(Extrapolator);

impl Accelerator {
    fn push(&mut self, t: &RigidTransform, error: f64) -> Option<RigidTransform> {
        let q =
            UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*t.rotation()));
        let mut s = DVector::from_column_slice(&[
            q.w,
            q.i,
            q.j,
            q.k,
            t.translation().x,
            t.translation().y,
            t.translation().z,
        ]);
        if let Some(last) = self.0.last() {
            if s.rows(0, 4).dot(&last.rows(0, 4)) < 0.0 {
                s.rows_mut(0, 4).neg_mut();
            }
        }
        let jump = self.0.push(s, error)?;
        let quat = Quaternion::new(jump[0], jump[1], jump[2], jump[3]);
        let rotation = UnitQuaternion::new_normalize(quat)
            .to_rotation_matrix()
            .into_inner();
        Some(RigidTransform::from_parts_unchecked(
            rotation,
            Vector3::new(jump[4], jump[5], jump[6]),
        ))
    }
}

fn median(values: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.collect();
    if v.is_empty() {
        return f64::NAN;
    }
    let mid = v.len() / 2;
    let (_, m, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    *m
}

/// A reference face with its nose tip and a prebuilt neighbor index.
#[derive(Debug, Clone)]
pub struct Reference {
    cloud: PointCloud,
    nose: Point3<f64>,
    index: NeighborIndex,
}

impl Reference {
    pub fn new(cloud: PointCloud) -> Result<Self, PreprocessError> {
        let nose = detect_nose_tip(&cloud).map_err(PreprocessError::NoseTip)?;
        let index = NeighborIndex::build(cloud.points())
            .ok_or(PreprocessError::Icp(RegistrationError::EmptyCloud))?;
        Ok(Self { cloud, nose, index })
    }

    pub fn cloud(&self) -> &PointCloud {
        &self.cloud
    }

    pub fn nose(&self) -> Point3<f64> {
        self.nose
    }

    pub fn index(&self) -> &NeighborIndex {
        &self.index
    }
}

#[derive(Debug, Clone)]
pub struct Preprocessed {
    /// Cropped scan in reference coordinates, with a `nose_tip` landmark.
    pub cloud: PointCloud,
    pub icp: IcpResult,
}

/// Nose detection, spherical crop, nose-to-nose translation, then rigid ICP.
pub fn preprocess(
    cloud: &PointCloud,
    reference: &Reference,
    params: &IcpParams,
    crop_radius: f64,
) -> Result<Preprocessed, PreprocessError> {
    let nose = detect_nose_tip(cloud).map_err(PreprocessError::NoseTip)?;
    let cropped = crop_sphere(cloud, &nose, crop_radius)
        .map_err(PreprocessError::Crop)?
        .with_landmark(NOSE_TIP, nose)
        .map_err(PreprocessError::Crop)?;
    let init = RigidTransform::from_translation(reference.nose - nose);
    let icp = match params.max_points {
        Some(limit) if cropped.len() > limit => {
            let stride = cropped.len().div_ceil(limit);
            let subset = cropped.points().iter().step_by(stride).copied().collect();
            let subset = PointCloud::new(subset).map_err(PreprocessError::Crop)?;
            rigid_icp_indexed(&subset, &reference.index, &init, params)
        }
        _ => rigid_icp_indexed(&cropped, &reference.index, &init, params),
    }
    .map_err(PreprocessError::Icp)?;
    Ok(Preprocessed {
        cloud: apply_transform(&cropped, &icp.transform),
        icp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::morphable::make_toy_model;

    fn toy_face() -> PointCloud {
        make_toy_model(1500, 4, 4, 3).mean_cloud()
    }

    #[test]
    fn landmark_passthrough() {
        let c = PointCloud::new(vec![Point3::origin()])
            .unwrap()
            .with_landmark(NOSE_TIP, Point3::new(1.0, 2.0, 3.0))
            .unwrap();
        assert_eq!(detect_nose_tip(&c).unwrap(), Point3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn planar_cloud_is_rejected() {
        let pts = (0..400)
            .map(|i| Point3::new((i % 20) as f64, (i / 20) as f64 * 1.3, 5.0))
            .collect();
        let err = detect_nose_tip(&PointCloud::new(pts).unwrap()).unwrap_err();
        assert!(matches!(err, RegistrationError::DegenerateCloud(_)));
        let few = PointCloud::new(vec![Point3::origin(); 10]).unwrap();
        assert_eq!(
            detect_nose_tip(&few),
            Err(RegistrationError::TooFewPoints(10))
        );
    }

    #[test]
    fn heuristic_finds_toy_nose() {
        let model = make_toy_model(2000, 4, 4, 9);
        let face = model.mean_cloud();
        let truth = face.points()[model.nose_index().unwrap()];
        let est = detect_nose_tip(&face).unwrap();
        assert!((est - truth).norm() < 10.0, "estimate {est} vs {truth}");
        let tilted = apply_transform(
            &face,
            &RigidTransform::from_euler(0.15, -0.12, 0.1, Vector3::new(4.0, -6.0, 2.0)),
        );
        let est = detect_nose_tip(&tilted).unwrap();
        let truth = tilted.points()[model.nose_index().unwrap()];
        assert!(
            (est - truth).norm() < 10.0,
            "tilted estimate {est} vs {truth}"
        );
    }

    #[test]
    fn icp_on_identical_clouds_is_identity() {
        let face = toy_face();
        let r = rigid_icp(
            &face,
            &face,
            &RigidTransform::identity(),
            &IcpParams::default(),
        )
        .unwrap();
        assert!(r.rmse < 1e-9);
        assert!(r.converged);
        assert!((r.transform.rotation() - Matrix3::identity()).amax() < 1e-12);
        assert!(r.transform.translation().norm() < 1e-9);
    }

    #[test]
    fn icp_recovers_small_yaw_and_shift() {
        let face = toy_face();
        let t =
            RigidTransform::from_euler(0.0, 5f64.to_radians(), 0.0, Vector3::new(3.0, 0.0, 0.0));
        let moved = apply_transform(&face, &t);
        let r = rigid_icp(
            &face,
            &moved,
            &RigidTransform::identity(),
            &IcpParams::default(),
        )
        .unwrap();
        // maps the reference-coordinates source onto the moved copy: result ≈ T
        let residual = t.inverse().compose(&r.transform);
        assert!(residual.rotation_angle() < 1e-8);
        assert!(residual.translation().norm() < 1e-6);
        assert!(r.rmse < 1e-6);
        // and the other way round gives T⁻¹
        let back = rigid_icp(
            &moved,
            &face,
            &RigidTransform::identity(),
            &IcpParams::default(),
        )
        .unwrap();
        assert!(back.transform.compose(&t).rotation_angle() < 1e-8);
        assert!(back.rmse < 1e-6);
    }

    #[test]
    fn icp_mean_distance_never_increases() {
        let face = toy_face();
        let t = RigidTransform::from_euler(0.12, -0.1, 0.08, Vector3::new(6.0, -4.0, 5.0));
        let moved = apply_transform(&face, &t);
        let r = rigid_icp(
            &moved,
            &face,
            &RigidTransform::identity(),
            &IcpParams::default(),
        )
        .unwrap();
        for w in r.mean_distances.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{:?}", r.mean_distances);
        }
        assert!(r.iterations_used <= IcpParams::default().max_iterations);
    }

    #[test]
    fn invalid_params_are_rejected() {
        let face = toy_face();
        let bad = IcpParams {
            rejection_multiplier: 1.0,
            ..IcpParams::default()
        };
        assert!(matches!(
            rigid_icp(&face, &face, &RigidTransform::identity(), &bad),
            Err(RegistrationError::InvalidParams(_))
        ));
    }

    #[test]
    fn preprocess_reference_is_fixed_point() {
        let face = toy_face();
        let reference = Reference::new(face.clone()).unwrap();
        let out = preprocess(
            &face,
            &reference,
            &IcpParams::default(),
            DEFAULT_CROP_RADIUS,
        )
        .unwrap();
        let cropped = crop_sphere(&face, &reference.nose(), DEFAULT_CROP_RADIUS).unwrap();
        assert_eq!(out.cloud.len(), cropped.len());
        let rmse = (out
            .cloud
            .points()
            .iter()
            .zip(cropped.points())
            .map(|(a, b)| (a - b).norm_squared())
            .sum::<f64>()
            / cropped.len() as f64)
            .sqrt();
        assert!(rmse < 1e-9, "rmse {rmse}");
    }

    #[test]
    fn preprocess_failure_names_stage() {
        let pts = (0..400)
            .map(|i| Point3::new((i % 20) as f64, (i / 20) as f64, 0.0))
            .collect();
        let reference = Reference::new(toy_face()).unwrap();
        let err = preprocess(
            &PointCloud::new(pts).unwrap(),
            &reference,
            &IcpParams::default(),
            DEFAULT_CROP_RADIUS,
        )
        .unwrap_err();
        assert_eq!(err.stage(), "nose-tip detection");
        assert!(err.to_string().starts_with("nose-tip detection"));
    }
}
