//! Point sets in millimeters and the geometric primitives shared by every
//! other stage.

use std::collections::BTreeMap;

use nalgebra::Point3;
use thiserror::Error;

mod kdtree;
pub mod ply;
mod transform;

pub use kdtree::NeighborIndex;
pub use ply::{load_ply, save_ply, PlyError};
pub use transform::{RigidTransform, TransformError};

/// Landmark name used for the nose tip annotation.
pub const NOSE_TIP: &str = "nose_tip";

#[derive(Debug, Error, PartialEq)]
pub enum PointCloudError {
    #[error("non-finite coordinate at point {index}")]
    NonFinite { index: usize },
    #[error("non-finite coordinate in landmark '{name}'")]
    NonFiniteLandmark { name: String },
    #[error("crop radius must be positive, got {0}")]
    InvalidRadius(f64),
    #[error("no points within {radius} mm of ({x:.3}, {y:.3}, {z:.3})")]
    EmptyCrop { x: f64, y: f64, z: f64, radius: f64 },
}

/// An ordered set of 3D points with optional named landmarks.
///
/// Coordinates are millimeters and always finite.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    points: Vec<Point3<f64>>,
    landmarks: BTreeMap<String, Point3<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3<f64>>) -> Result<Self, PointCloudError> {
        if let Some(index) = points.iter().position(|p| !is_finite(p)) {
            return Err(PointCloudError::NonFinite { index });
        }
        Ok(Self {
            points,
            landmarks: BTreeMap::new(),
        })
    }

    /// Callers guarantee finiteness (outputs of rigid maps on finite input, etc.).
    pub(crate) fn from_points_unchecked(points: Vec<Point3<f64>>) -> Self {
        debug_assert!(points.iter().all(is_finite));
        Self {
            points,
            landmarks: BTreeMap::new(),
        }
    }

    pub fn with_landmark(
        mut self,
        name: impl Into<String>,
        point: Point3<f64>,
    ) -> Result<Self, PointCloudError> {
        let name = name.into();
        if !is_finite(&point) {
            return Err(PointCloudError::NonFiniteLandmark { name });
        }
        self.landmarks.insert(name, point);
        Ok(self)
    }

    pub(crate) fn set_landmarks(&mut self, landmarks: BTreeMap<String, Point3<f64>>) {
        self.landmarks = landmarks;
    }

    pub fn points(&self) -> &[Point3<f64>] {
        &self.points
    }

    pub fn landmarks(&self) -> &BTreeMap<String, Point3<f64>> {
        &self.landmarks
    }

    pub fn landmark(&self, name: &str) -> Option<Point3<f64>> {
        self.landmarks.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Option<Point3<f64>> {
        if self.points.is_empty() {
            return None;
        }
        let sum = self
            .points
            .iter()
            .fold(nalgebra::Vector3::zeros(), |acc, p| acc + p.coords);
        Some(Point3::from(sum / self.points.len() as f64))
    }
}

pub(crate) fn is_finite(p: &Point3<f64>) -> bool {
    p.x.is_finite() && p.y.is_finite() && p.z.is_finite()
}

/// Maps every point and landmark through `transform`.
pub fn apply_transform(cloud: &PointCloud, transform: &RigidTransform) -> PointCloud {
    PointCloud {
        points: cloud.points.iter().map(|p| transform.apply(p)).collect(),
        landmarks: cloud
            .landmarks
            .iter()
            .map(|(k, p)| (k.clone(), transform.apply(p)))
            .collect(),
    }
}

/// Keeps the points with `‖p − center‖ ≤ radius`, in their original order.
///
/// Landmarks are carried over untouched.
pub fn crop_sphere(
    cloud: &PointCloud,
    center: &Point3<f64>,
    radius: f64,
) -> Result<PointCloud, PointCloudError> {
    if !(radius > 0.0) || radius.is_nan() {
        return Err(PointCloudError::InvalidRadius(radius));
    }
    let r2 = radius * radius;
    let points: Vec<_> = cloud
        .points
        .iter()
        .filter(|p| (*p - center).norm_squared() <= r2)
        .copied()
        .collect();
    if points.is_empty() {
        return Err(PointCloudError::EmptyCrop {
            x: center.x,
            y: center.y,
            z: center.z,
            radius,
        });
    }
    Ok(PointCloud {
        points,
        landmarks: cloud.landmarks.clone(),
    })
}
