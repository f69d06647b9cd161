//! Linear morphable face model `X = X̄ + P_s·α + P_e·β`, its fitting to scans
//! and displacement-field expression transfer.

use nalgebra::{DMatrix, DVector, Point3, Vector3};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

mod fit;
mod io;
mod toy;

pub use fit::{fit, FitConfig, FitResult};
pub use io::{load_model, read_model, save_model, write_model, MODEL_MAGIC};
pub use toy::{inside_face, make_toy_model, ToyFace, FACE_HALF_HEIGHT, FACE_HALF_WIDTH, FACE_RIM};

use crate::pointcloud::{NeighborIndex, PointCloud};

/// Strict bound on each randomly drawn expression coefficient.
pub const EXPRESSION_BOUND: f64 = 0.05;

/// Default number of expression components.
pub const DEFAULT_EXPRESSION_COMPONENTS: usize = 29;

#[derive(Debug, Error)]
pub enum MorphableError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("scan has {got} points, fitting needs at least {need}")]
    ScanTooSmall { got: usize, need: usize },
    #[error("regularized normal equations are singular ({0})")]
    Regularization(&'static str),
    #[error("pose update failed at iteration {0}")]
    Pose(usize),
    #[error("model file: {0}")]
    Format(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// Mean shape plus shape and expression bases, all in millimeters.
///
/// Vertex `i` occupies rows `3i..3i+3` of the mean vector and of each basis.
#[derive(Debug, Clone, PartialEq)]
pub struct MorphableModel {
    mean: DVector<f64>,
    shape_basis: DMatrix<f64>,
    expr_basis: DMatrix<f64>,
    nose_index: Option<usize>,
}

impl MorphableModel {
    pub fn new(
        mean: DVector<f64>,
        shape_basis: DMatrix<f64>,
        expr_basis: DMatrix<f64>,
        nose_index: Option<usize>,
    ) -> Result<Self, MorphableError> {
        let rows = mean.len();
        if rows == 0 || rows % 3 != 0 {
            return Err(MorphableError::InvalidModel(format!(
                "mean length {rows} is not a positive multiple of 3"
            )));
        }
        for (name, basis) in [("shape", &shape_basis), ("expression", &expr_basis)] {
            if basis.nrows() != rows {
                return Err(MorphableError::InvalidModel(format!(
                    "{name} basis has {} rows, expected {rows}",
                    basis.nrows()
                )));
            }
            for (k, col) in basis.column_iter().enumerate() {
                let norm = col.norm();
                if !norm.is_finite() || norm == 0.0 {
                    return Err(MorphableError::InvalidModel(format!(
                        "{name} basis column {k} has norm {norm}"
                    )));
                }
            }
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(MorphableError::InvalidModel("non-finite mean".into()));
        }
        if let Some(i) = nose_index {
            if i >= rows / 3 {
                return Err(MorphableError::InvalidModel(format!(
                    "nose index {i} out of range"
                )));
            }
        }
        Ok(Self {
            mean,
            shape_basis,
            expr_basis,
            nose_index,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.mean.len() / 3
    }

    pub fn shape_components(&self) -> usize {
        self.shape_basis.ncols()
    }

    pub fn expression_components(&self) -> usize {
        self.expr_basis.ncols()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn shape_basis(&self) -> &DMatrix<f64> {
        &self.shape_basis
    }

    pub fn expr_basis(&self) -> &DMatrix<f64> {
        &self.expr_basis
    }

    pub fn nose_index(&self) -> Option<usize> {
        self.nose_index
    }

    pub fn zero_params(&self) -> ModelParams {
        ModelParams {
            alpha: vec![0.0; self.shape_components()],
            beta: vec![0.0; self.expression_components()],
        }
    }

    /// The mean shape as a cloud, with a `nose_tip` landmark when known.
    pub fn mean_cloud(&self) -> PointCloud {
        let cloud = PointCloud::from_points_unchecked(to_points(&self.mean));
        match self.nose_index {
            Some(i) => {
                let nose = cloud.points()[i];
                cloud
                    .with_landmark(crate::pointcloud::NOSE_TIP, nose)
                    .expect("finite mean")
            }
            None => cloud,
        }
    }

    fn check(&self, params: &ModelParams) -> Result<(), MorphableError> {
        if params.alpha.len() != self.shape_components() {
            return Err(MorphableError::Dimension(format!(
                "alpha has {} entries, model has {} shape components",
                params.alpha.len(),
                self.shape_components()
            )));
        }
        if params.beta.len() != self.expression_components() {
            return Err(MorphableError::Dimension(format!(
                "beta has {} entries, model has {} expression components",
                params.beta.len(),
                self.expression_components()
            )));
        }
        Ok(())
    }
}

/// Shape (`alpha`) and expression (`beta`) coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

pub(crate) fn to_points(flat: &DVector<f64>) -> Vec<Point3<f64>> {
    flat.as_slice()
        .chunks_exact(3)
        .map(|c| Point3::new(c[0], c[1], c[2]))
        .collect()
}

/// `X̄ + P_s·α + P_e·β` as a flat 3N vector.
pub(crate) fn synthesize_flat(
    model: &MorphableModel,
    params: &ModelParams,
) -> Result<DVector<f64>, MorphableError> {
    model.check(params)?;
    let alpha = DVector::from_column_slice(&params.alpha);
    let beta = DVector::from_column_slice(&params.beta);
    Ok(&model.mean + &model.shape_basis * alpha + &model.expr_basis * beta)
}

/// Evaluates the model for the given coefficients, one point per vertex.
pub fn synthesize(
    model: &MorphableModel,
    params: &ModelParams,
) -> Result<PointCloud, MorphableError> {
    let flat = synthesize_flat(model, params)?;
    let points = to_points(&flat);
    PointCloud::new(points).map_err(|e| MorphableError::Dimension(e.to_string()))
}

/// Per-vertex displacement vectors `Δ_i = Ψ_i − Ω_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    vectors: Vec<Vector3<f64>>,
}

impl DisplacementField {
    /// `target[i] − fitted[i]` for every vertex.
    pub fn between(target: &[Point3<f64>], fitted: &[Point3<f64>]) -> Result<Self, MorphableError> {
        if target.len() != fitted.len() {
            return Err(MorphableError::Dimension(format!(
                "{} target vertices vs {} fitted vertices",
                target.len(),
                fitted.len()
            )));
        }
        Ok(Self {
            vectors: target.iter().zip(fitted).map(|(t, f)| t - f).collect(),
        })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            vectors: vec![Vector3::zeros(); n],
        }
    }

    pub fn vectors(&self) -> &[Vector3<f64>] {
        &self.vectors
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

/// Displacement from the fitted model to the same identity posed identically
/// but wearing `target_beta`.
pub fn displacement_field(
    fitted: &FitResult,
    target_beta: &[f64],
    model: &MorphableModel,
) -> Result<DisplacementField, MorphableError> {
    let target = ModelParams {
        alpha: fitted.params.alpha.clone(),
        beta: target_beta.to_vec(),
    };
    let psi = fit::posed_points(model, &target, &fitted.pose)?;
    DisplacementField::between(&psi, fitted.fitted_points.points())
}

/// Moves every scan point by the displacement of its nearest fitted vertex.
///
/// Point count and order are preserved; landmarks move the same way.
pub fn transfer_expression(
    scan: &PointCloud,
    fitted: &FitResult,
    field: &DisplacementField,
) -> Result<PointCloud, MorphableError> {
    if field.len() != fitted.fitted_points.len() {
        return Err(MorphableError::Dimension(format!(
            "field has {} vectors, fitted model has {} vertices",
            field.len(),
            fitted.fitted_points.len()
        )));
    }
    let index = NeighborIndex::build(fitted.fitted_points.points())
        .ok_or_else(|| MorphableError::Dimension("fitted model has no vertices".into()))?;
    let shift = |p: &Point3<f64>| {
        let d = field.vectors[index.nearest(p)];
        // zero displacement must leave the bits alone (−0.0 + 0.0 would not)
        if d == Vector3::zeros() {
            *p
        } else {
            p + d
        }
    };
    let mut out = PointCloud::from_points_unchecked(scan.points().iter().map(shift).collect());
    out.set_landmarks(
        scan.landmarks()
            .iter()
            .map(|(k, p)| (k.clone(), shift(p)))
            .collect(),
    );
    Ok(out)
}

/// Random expression: `k ~ U{1..ke}` components chosen without replacement,
/// each set to a nonzero draw from the open interval `(−0.05, 0.05)`.
pub fn random_expression<R: Rng + ?Sized>(rng: &mut R, ke: usize) -> Vec<f64> {
    let mut beta = vec![0.0; ke];
    if ke == 0 {
        return beta;
    }
    let k = rng.random_range(1..=ke);
    for i in index::sample(rng, ke, k) {
        beta[i] = loop {
            let v = rng.random_range(-EXPRESSION_BOUND..EXPRESSION_BOUND);
            if v != 0.0 && v != -EXPRESSION_BOUND {
                break v;
            }
        };
    }
    beta
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_params(rng: &mut impl Rng, m: &MorphableModel) -> ModelParams {
        ModelParams {
            alpha: (0..m.shape_components())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
            beta: (0..m.expression_components())
                .map(|_| rng.random_range(-0.05..0.05))
                .collect(),
        }
    }

    /// Dense row-by-row evaluation, independent of nalgebra's gemv.
    fn dense_oracle(m: &MorphableModel, p: &ModelParams) -> Vec<f64> {
        (0..m.mean().len())
            .map(|r| {
                let mut v = m.mean()[r];
                for (k, a) in p.alpha.iter().enumerate() {
                    v += m.shape_basis()[(r, k)] * a;
                }
                for (k, b) in p.beta.iter().enumerate() {
                    v += m.expr_basis()[(r, k)] * b;
                }
                v
            })
            .collect()
    }

    #[test]
    fn zero_coefficients_give_mean() {
        let m = make_toy_model(200, 3, 5, 1);
        let c = synthesize(&m, &m.zero_params()).unwrap();
        assert_eq!(c.points(), to_points(m.mean()).as_slice());
    }

    #[test]
    fn unit_alpha_adds_first_column() {
        let m = make_toy_model(200, 3, 5, 1);
        let mut p = m.zero_params();
        p.alpha[0] = 1.0;
        let c = synthesize(&m, &p).unwrap();
        let expect = to_points(&(m.mean() + m.shape_basis().column(0)));
        for (a, b) in c.points().iter().zip(&expect) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn matches_dense_oracle() {
        let m = make_toy_model(300, 6, 29, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let p = random_params(&mut rng, &m);
            let got = synthesize_flat(&m, &p).unwrap();
            let want = dense_oracle(&m, &p);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn synthesis_is_linear() {
        let m = make_toy_model(250, 4, 6, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p1 = random_params(&mut rng, &m);
        let p2 = random_params(&mut rng, &m);
        let sum = ModelParams {
            alpha: p1.alpha.iter().zip(&p2.alpha).map(|(a, b)| a + b).collect(),
            beta: p1.beta.iter().zip(&p2.beta).map(|(a, b)| a + b).collect(),
        };
        let s = |p| synthesize_flat(&m, p).unwrap() - m.mean();
        let lhs = s(&sum);
        let rhs = s(&p1) + s(&p2);
        assert!((lhs - rhs).amax() < 1e-9);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let m = make_toy_model(100, 2, 3, 0);
        let p = ModelParams {
            alpha: vec![0.0; 3],
            beta: vec![0.0; 3],
        };
        assert!(matches!(
            synthesize(&m, &p),
            Err(MorphableError::Dimension(_))
        ));
    }

    #[test]
    fn model_validation() {
        let mean = DVector::from_element(6, 1.0);
        let good = DMatrix::from_element(6, 1, 1.0);
        let zero_col = DMatrix::zeros(6, 1);
        assert!(MorphableModel::new(mean.clone(), good.clone(), good.clone(), Some(1)).is_ok());
        assert!(MorphableModel::new(mean.clone(), zero_col, good.clone(), None).is_err());
        assert!(MorphableModel::new(mean.clone(), good.clone(), good.clone(), Some(2)).is_err());
        assert!(
            MorphableModel::new(DVector::from_element(5, 1.0), good.clone(), good, None).is_err()
        );
    }

    fn fitted_for(m: &MorphableModel, seed: u64) -> (PointCloud, FitResult) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_params(&mut rng, m);
        let scan = synthesize(m, &p).unwrap();
        let f = fit(m, &scan, &FitConfig::default()).unwrap();
        (scan, f)
    }

    #[test]
    fn same_beta_gives_zero_field_and_identity_transfer() {
        let m = make_toy_model(400, 4, 8, 12);
        let (scan, f) = fitted_for(&m, 3);
        let field = displacement_field(&f, &f.params.beta, &m).unwrap();
        assert!(field.vectors().iter().all(|d| *d == Vector3::zeros()));
        let out = transfer_expression(&scan, &f, &field).unwrap();
        assert_eq!(out, scan);
    }

    #[test]
    fn constant_offset_gives_constant_field() {
        let m = make_toy_model(150, 2, 2, 1);
        let omega = to_points(m.mean());
        let c = Vector3::new(1.0, -2.0, 0.5);
        let psi: Vec<_> = omega.iter().map(|p| p + c).collect();
        let field = DisplacementField::between(&psi, &omega).unwrap();
        assert!(field.vectors().iter().all(|d| (d - c).norm() < 1e-12));
        assert!(DisplacementField::between(&psi[1..], &omega).is_err());
    }

    #[test]
    fn field_matches_direct_subtraction() {
        let m = make_toy_model(300, 3, 29, 6);
        let (_, f) = fitted_for(&m, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let target: Vec<f64> = (0..29).map(|_| rng.random_range(-0.05..0.05)).collect();
        let field = displacement_field(&f, &target, &m).unwrap();
        // oracle: evaluate the posed target shape vertex by vertex
        let p = ModelParams {
            alpha: f.params.alpha.clone(),
            beta: target,
        };
        let flat = dense_oracle(&m, &p);
        for (i, d) in field.vectors().iter().enumerate() {
            let psi = f
                .pose
                .apply(&Point3::new(flat[3 * i], flat[3 * i + 1], flat[3 * i + 2]));
            let want = psi - f.fitted_points.points()[i];
            assert!((d - want).norm() < 1e-9);
        }
    }

    #[test]
    fn transfer_matches_linear_scan_oracle() {
        let m = make_toy_model(300, 3, 10, 6);
        let (_, f) = fitted_for(&m, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let target: Vec<f64> = (0..10).map(|_| rng.random_range(-0.05..0.05)).collect();
        let field = displacement_field(&f, &target, &m).unwrap();
        let scan = PointCloud::new(
            (0..500)
                .map(|_| {
                    Point3::new(
                        rng.random_range(-70.0..70.0),
                        rng.random_range(-90.0..90.0),
                        rng.random_range(-40.0..5.0),
                    )
                })
                .collect(),
        )
        .unwrap();
        let out = transfer_expression(&scan, &f, &field).unwrap();
        assert_eq!(out.len(), scan.len());
        let omega = f.fitted_points.points();
        for (x, y) in scan.points().iter().zip(out.points()) {
            let mut best = (0, f64::INFINITY);
            for (j, o) in omega.iter().enumerate() {
                let d = (x - o).norm_squared();
                if d < best.1 {
                    best = (j, d);
                }
            }
            assert_eq!(*y, x + field.vectors()[best.0]);
        }
    }

    #[test]
    fn transfer_on_fitted_vertices_lands_on_target() {
        let m = make_toy_model(300, 3, 6, 7);
        let (_, f) = fitted_for(&m, 9);
        let target = vec![0.03, -0.02, 0.0, 0.01, 0.04, -0.04];
        let field = displacement_field(&f, &target, &m).unwrap();
        let out = transfer_expression(&f.fitted_points, &f, &field).unwrap();
        let psi = fit::posed_points(
            &m,
            &ModelParams {
                alpha: f.params.alpha.clone(),
                beta: target,
            },
            &f.pose,
        )
        .unwrap();
        for (a, b) in out.points().iter().zip(&psi) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn random_expression_bounds_and_coverage() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut seen = [false; 30];
        let mut max_abs: f64 = 0.0;
        for _ in 0..10_000 {
            let b = random_expression(&mut rng, 29);
            let active = b.iter().filter(|&&v| v != 0.0).count();
            assert!(active >= 1);
            seen[active] = true;
            max_abs = b.iter().fold(max_abs, |m, v| m.max(v.abs()));
        }
        assert!(max_abs < EXPRESSION_BOUND);
        assert!(seen[1..].iter().all(|&s| s));
        let a = random_expression(&mut ChaCha8Rng::seed_from_u64(3), 29);
        let b = random_expression(&mut ChaCha8Rng::seed_from_u64(3), 29);
        assert_eq!(a, b);
    }
}
