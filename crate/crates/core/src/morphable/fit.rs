use nalgebra::{DMatrix, DVector, Matrix3, Point3, Rotation3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use super::{synthesize_flat, to_points, ModelParams, MorphableError, MorphableModel};
use crate::pointcloud::{NeighborIndex, PointCloud, RigidTransform};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// Outer pose → α → β iterations.
    pub max_iterations: usize,
    /// Stop once the correspondence rmse changes by less than this (mm).
    pub convergence_eps: f64,
    /// Ridge weight λ on ‖α‖² and ‖β‖², against a unit-weight sum of squared
    /// residuals.
    pub ridge: f64,
    /// Correspondences farther than this multiple of the median are dropped.
    pub rejection_multiplier: f64,
    /// Matches closer than this (mm) are never dropped.
    pub rejection_floor: f64,
    /// Weight of the point-to-point term relative to the point-to-plane term.
    pub point_weight: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iterations: 20,
            convergence_eps: 1e-4,
            ridge: 1e-3,
            rejection_multiplier: 2.5,
            rejection_floor: 0.5,
            point_weight: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: ModelParams,
    /// Maps model coordinates into scan coordinates.
    pub pose: RigidTransform,
    /// The posed model, one point per vertex (Ω).
    pub fitted_points: PointCloud,
    /// RMS model-vertex → scan distance over accepted correspondences (mm).
    pub residual_rmse: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub(crate) fn posed_points(
    model: &MorphableModel,
    params: &ModelParams,
    pose: &RigidTransform,
) -> Result<Vec<Point3<f64>>, MorphableError> {
    let flat = synthesize_flat(model, params)?;
    Ok(to_points(&flat).iter().map(|p| pose.apply(p)).collect())
}

struct Correspondences {
    /// (vertex, scan point) pairs that survived rejection.
    pairs: Vec<(usize, usize)>,
    rmse: f64,
}

fn correspond(
    posed: &[Point3<f64>],
    index: &NeighborIndex,
    multiplier: f64,
    floor: f64,
) -> Correspondences {
    let found: Vec<(usize, f64)> = posed
        .iter()
        .map(|p| {
            let (j, d2) = index.nearest_with_distance(p);
            (j, d2.sqrt())
        })
        .collect();
    let mut dists: Vec<f64> = found.iter().map(|f| f.1).collect();
    let mid = dists.len() / 2;
    let median = *dists.select_nth_unstable_by(mid, f64::total_cmp).1;
    let threshold = (multiplier * median).max(floor);
    let mut pairs = Vec::with_capacity(found.len());
    let mut sum_sq = 0.0;
    for (i, &(j, d)) in found.iter().enumerate() {
        if d <= threshold {
            pairs.push((i, j));
            sum_sq += d * d;
        }
    }
    let rmse = (sum_sq / pairs.len().max(1) as f64).sqrt();
    Correspondences { pairs, rmse }
}

/// Unit normal at each indexed point from the covariance of its 8 nearest
/// neighbours (sign arbitrary).
fn estimate_normals(index: &NeighborIndex) -> Vec<Vector3<f64>> {
    index
        .points()
        .iter()
        .map(|p| {
            let near = index.nearest_k(p, 8);
            let c = near
                .iter()
                .fold(Vector3::zeros(), |a, &(i, _)| a + index.points()[i].coords)
                / near.len() as f64;
            let cov = near.iter().fold(Matrix3::zeros(), |a, &(i, _)| {
                let d = index.points()[i].coords - c;
                a + d * d.transpose()
            });
            let eig = SymmetricEigen::new(cov);
            let k = eig.eigenvalues.imin();
            let n = eig.eigenvectors.column(k).into_owned();
            if n.iter().all(|v| v.is_finite()) && n.norm() > 0.0 {
                n.normalize()
            } else {
                Vector3::z()
            }
        })
        .collect()
}

/// Cholesky solve of `(AᵀA + D)·x = Aᵀr` with a pivot check; `None` when
/// the system is (numerically) singular.
fn ridge_solve(rows: &DMatrix<f64>, r: &DVector<f64>, penalty: &[f64]) -> Option<DVector<f64>> {
    let mut normal = rows.tr_mul(rows);
    for (d, &w) in penalty.iter().enumerate() {
        normal[(d, d)] += w;
    }
    let rhs = rows.tr_mul(r);
    let scale = normal.diagonal().amax();
    let chol = normal.cholesky()?;
    let min_pivot = chol
        .l_dirty()
        .diagonal()
        .iter()
        .fold(f64::INFINITY, |m, &d| m.min(d * d));
    (min_pivot > 1e-12 * scale).then(|| chol.solve(&rhs))
}

/// One linearized least-squares step over a small rigid correction
/// `(ω, τ)` together with α and β. Model points `p = R·s + t` move to
/// `p + ω × p + τ`; the ridge applies to α and β only.
fn joint_step(
    model: &MorphableModel,
    pose: &RigidTransform,
    posed: &[Point3<f64>],
    pairs: &[(usize, usize)],
    scan: &PointCloud,
    normals: &[Vector3<f64>],
    ridge: f64,
    point_weight: f64,
) -> Result<(RigidTransform, ModelParams), &'static str> {
    let wpp = point_weight.sqrt();
    let (ks, ke) = (model.shape_components(), model.expression_components());
    let k = 6 + ks + ke;
    let rot = pose.rotation();
    let mut rows = DMatrix::<f64>::zeros(4 * pairs.len(), k);
    let mut r = DVector::<f64>::zeros(4 * pairs.len());
    for (n, &(i, j)) in pairs.iter().enumerate() {
        let p = posed[i].coords;
        let base = rot * model.mean().fixed_rows::<3>(3 * i) + pose.translation();
        let target = scan.points()[j].coords;
        let mut block = DMatrix::<f64>::zeros(3, k);
        // ω × p = −[p]× ω
        block
            .fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&(-p.cross_matrix()));
        block
            .fixed_view_mut::<3, 3>(0, 3)
            .copy_from(&Matrix3::identity());
        block
            .view_mut((0, 6), (3, ks))
            .copy_from(&(rot * model.shape_basis().rows(3 * i, 3)));
        block
            .view_mut((0, 6 + ks), (3, ke))
            .copy_from(&(rot * model.expr_basis().rows(3 * i, 3)));
        let res = target - base;
        let nj = normals[j];
        rows.view_mut((4 * n, 0), (3, k)).copy_from(&(&block * wpp));
        r.fixed_rows_mut::<3>(4 * n).copy_from(&(res * wpp));
        rows.row_mut(4 * n + 3)
            .copy_from(&(nj.transpose() * &block));
        r[4 * n + 3] = nj.dot(&res);
    }
    let mut penalty = vec![ridge; k];
    penalty[..6].fill(0.0);
    let Some(x) = ridge_solve(&rows, &r, &penalty) else {
        let singular = |cols: std::ops::Range<usize>, w: f64| {
            let sub = rows.columns(cols.start, cols.len()).into_owned();
            ridge_solve(&sub, &r, &vec![w; cols.len()]).is_none()
        };
        return Err(if singular(6..6 + ks, ridge) {
            "alpha"
        } else if singular(6 + ks..k, ridge) {
            "beta"
        } else {
            "pose"
        });
    };
    let omega = x.fixed_rows::<3>(0).into_owned();
    let delta = Rotation3::new(omega).into_inner();
    let tau = x.fixed_rows::<3>(3).into_owned();
    let pose = RigidTransform::from_parts_unchecked(delta * rot, delta * pose.translation() + tau);
    let params = ModelParams {
        alpha: x.rows(6, ks).iter().copied().collect(),
        beta: x.rows(6 + ks, ke).iter().copied().collect(),
    };
    Ok((pose, params))
}

/// Fits shape, expression and pose to a scan, ICP style.
///
/// Each outer iteration pairs every model vertex with its nearest scan point,
/// drops outlying pairs,
/// updates the rigid pose in closed form, then takes one joint linearized
/// step in α, β and a small pose correction that minimizes point-to-plane
/// distances (scan normals) plus a lightly weighted point-to-point term,
/// with the ridge on α and β. Hitting the iteration cap is not an error;
/// check [`FitResult::converged`].
pub fn fit(
    model: &MorphableModel,
    scan: &PointCloud,
    config: &FitConfig,
) -> Result<FitResult, MorphableError> {
    let need = (model.vertex_count() / 10).max(3);
    if scan.len() < need {
        return Err(MorphableError::ScanTooSmall {
            got: scan.len(),
            need,
        });
    }
    let index = NeighborIndex::build(scan.points()).expect("non-empty scan");
    let normals = estimate_normals(&index);
    let mut params = model.zero_params();
    let mut pose = RigidTransform::identity();
    let mut prev_rmse = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    loop {
        let shape = to_points(&synthesize_flat(model, &params)?);
        let posed: Vec<_> = shape.iter().map(|p| pose.apply(p)).collect();
        let corr = correspond(
            &posed,
            &index,
            config.rejection_multiplier,
            config.rejection_floor,
        );
        if corr.pairs.len() < 3 {
            return Err(MorphableError::Pose(iterations + 1));
        }
        if (prev_rmse - corr.rmse).abs() < config.convergence_eps {
            converged = true;
        }
        if converged || iterations == config.max_iterations {
            return Ok(FitResult {
                params,
                pose,
                fitted_points: PointCloud::from_points_unchecked(posed),
                residual_rmse: corr.rmse,
                iterations,
                converged,
            });
        }
        prev_rmse = corr.rmse;
        iterations += 1;

        let src: Vec<_> = corr.pairs.iter().map(|&(i, _)| shape[i]).collect();
        let dst: Vec<_> = corr.pairs.iter().map(|&(_, j)| scan.points()[j]).collect();
        pose = RigidTransform::best_fit(&src, &dst).ok_or(MorphableError::Pose(iterations))?;
        let posed: Vec<_> = shape.iter().map(|p| pose.apply(p)).collect();
        (pose, params) = joint_step(
            model,
            &pose,
            &posed,
            &corr.pairs,
            scan,
            &normals,
            config.ridge,
            config.point_weight,
        )
        .map_err(|which| match which {
            "pose" => MorphableError::Pose(iterations),
            w => MorphableError::Regularization(w),
        })?;
    }
}
