//! Procedural face-like morphable model used when no real model is available.
//!
//! The mean is an elliptical dome with a nose, eye sockets, brow, mouth and
//! chin. Bases are sums of smooth Gaussian bumps, jointly orthogonalized
//! (shape first, then expression) over the vertex set and rescaled so that a
//! unit shape coefficient moves vertices by a few millimeters RMS. Because the
//! bases are analytic, the same face can be sampled at any density, which is
//! how synthetic scans are produced.

use nalgebra::{DMatrix, DVector, Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ModelParams, MorphableModel};

pub const FACE_HALF_WIDTH: f64 = 70.0;
pub const FACE_HALF_HEIGHT: f64 = 90.0;
/// Samples are taken inside this fraction of the face ellipse.
pub const FACE_RIM: f64 = 0.95;

/// Per-vertex RMS displacement (mm) of the first shape component; later
/// components decay geometrically.
const SHAPE_SCALE: f64 = 3.0;
const SHAPE_DECAY: f64 = 0.85;
/// Per-vertex RMS displacement (mm) of a unit expression coefficient.
const EXPRESSION_SCALE: f64 = 20.0;

const GOLDEN_ANGLE: f64 = 2.399_963_229_728_653;

#[derive(Debug, Clone)]
struct Bump {
    cx: f64,
    cy: f64,
    inv_two_var: f64,
    amp: Vector3<f64>,
}

#[derive(Debug, Clone)]
struct Field(Vec<Bump>);

impl Field {
    fn eval(&self, x: f64, y: f64) -> Vector3<f64> {
        self.0.iter().fold(Vector3::zeros(), |acc, b| {
            let d2 = (x - b.cx).powi(2) + (y - b.cy).powi(2);
            acc + b.amp * (-d2 * b.inv_two_var).exp()
        })
    }
}

fn gaussian(x: f64, y: f64, cx: f64, cy: f64, sx: f64, sy: f64) -> f64 {
    (-((x - cx).powi(2) / (2.0 * sx * sx) + (y - cy).powi(2) / (2.0 * sy * sy))).exp()
}

/// Depth of the neutral mean face before the nose is moved to the origin.
fn mean_depth(x: f64, y: f64) -> f64 {
    let rho2 = (x / FACE_HALF_WIDTH).powi(2) + (y / FACE_HALF_HEIGHT).powi(2);
    let dome = 50.0 * ((1.0 - 0.9 * rho2).max(0.0).sqrt() - 1.0);
    let nose =
        22.0 * gaussian(x, y, 0.0, 0.0, 7.0, 9.0) + 8.0 * gaussian(x, y, 0.0, 18.0, 5.0, 14.0);
    let eyes =
        -14.0 * (gaussian(x, y, -32.0, 28.0, 11.0, 9.0) + gaussian(x, y, 32.0, 28.0, 11.0, 9.0));
    let brow = 6.0 * gaussian(x, y, 0.0, 45.0, 40.0, 7.0);
    let mouth = -6.0 * gaussian(x, y, 0.0, -45.0, 18.0, 5.0);
    let chin = 8.0 * gaussian(x, y, 0.0, -72.0, 15.0, 9.0);
    dome + nose + eyes + brow + mouth + chin
}

/// Whether `(x, y)` lies inside the sampled part of the face ellipse.
pub fn inside_face(x: f64, y: f64) -> bool {
    (x / FACE_HALF_WIDTH).powi(2) + (y / FACE_HALF_HEIGHT).powi(2) <= FACE_RIM * FACE_RIM
}

/// Sunflower layout of `n` positions over the face ellipse, each position
/// except the center (position 0) jittered by up to 0.4 of the mean spacing.
fn vertex_layout(n: usize, rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
    let reach = 0.4 * FACE_RIM * (std::f64::consts::PI / n as f64).sqrt();
    (0..n)
        .map(|k| {
            let r = FACE_RIM * (k as f64 / n as f64).sqrt();
            let t = k as f64 * GOLDEN_ANGLE;
            let (mut u, mut v) = (r * t.cos(), r * t.sin());
            if k > 0 {
                let a = rng.random_range(0.0..std::f64::consts::TAU);
                let d = reach * rng.random::<f64>().sqrt();
                let (ju, jv) = (u + d * a.cos(), v + d * a.sin());
                if ju.hypot(jv) <= FACE_RIM {
                    (u, v) = (ju, jv);
                }
            }
            (FACE_HALF_WIDTH * u, FACE_HALF_HEIGHT * v)
        })
        .collect()
}

fn random_in_ellipse(rng: &mut ChaCha8Rng, rim: f64) -> (f64, f64) {
    loop {
        let x = rng.random_range(-1.0..1.0);
        let y = rng.random_range(-1.0..1.0);
        if x * x + y * y <= rim * rim {
            return (x * FACE_HALF_WIDTH, y * FACE_HALF_HEIGHT);
        }
    }
}

fn shape_field(rng: &mut ChaCha8Rng) -> Field {
    Field(
        (0..3)
            .map(|_| {
                let (cx, cy) = random_in_ellipse(rng, 0.9);
                let w: f64 = rng.random_range(18.0..40.0);
                Bump {
                    cx,
                    cy,
                    inv_two_var: 1.0 / (2.0 * w * w),
                    amp: Vector3::new(
                        rng.random_range(-0.25..0.25),
                        rng.random_range(-0.25..0.25),
                        rng.random_range(-1.0..1.0),
                    ),
                }
            })
            .collect(),
    )
}

fn expression_field(rng: &mut ChaCha8Rng) -> Field {
    Field(
        (0..2)
            .map(|_| {
                let (cx, cy) = if rng.random_bool(0.7) {
                    (
                        rng.random_range(-45.0..45.0),
                        rng.random_range(-70.0..-20.0),
                    )
                } else {
                    (rng.random_range(-50.0..50.0), rng.random_range(20.0..55.0))
                };
                let w: f64 = rng.random_range(10.0..22.0);
                Bump {
                    cx,
                    cy,
                    inv_two_var: 1.0 / (2.0 * w * w),
                    amp: Vector3::new(
                        rng.random_range(-0.6..0.6),
                        rng.random_range(-0.6..0.6),
                        rng.random_range(-1.0..1.0),
                    ),
                }
            })
            .collect(),
    )
}

/// Analytic toy face together with its sampled [`MorphableModel`].
#[derive(Debug, Clone)]
pub struct ToyFace {
    model: MorphableModel,
    fields: Vec<Field>,
    /// Maps stacked `[α; β]` to coefficients of the raw bump fields.
    mix: DMatrix<f64>,
    offset: Vector3<f64>,
    layout: Vec<(f64, f64)>,
}

impl ToyFace {
    /// Deterministic in all arguments. Panics if `n_vertices < 50`, a basis
    /// is empty, or `n_vertices` is too small to hold `ks + ke` independent
    /// fields.
    pub fn new(n_vertices: usize, ks: usize, ke: usize, seed: u64) -> Self {
        assert!(n_vertices >= 50, "toy model needs at least 50 vertices");
        assert!(ks >= 1 && ke >= 1, "toy model needs non-empty bases");
        let k = ks + ke;
        assert!(
            3 * n_vertices > k,
            "too many components for {n_vertices} vertices"
        );

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = vertex_layout(n_vertices, &mut rng);
        let mut fields: Vec<Field> = (0..ks).map(|_| shape_field(&mut rng)).collect();
        fields.extend((0..ke).map(|_| expression_field(&mut rng)));

        let mut raw = DMatrix::<f64>::zeros(3 * n_vertices, k);
        for (i, &(x, y)) in layout.iter().enumerate() {
            for (j, f) in fields.iter().enumerate() {
                raw.fixed_view_mut::<3, 1>(3 * i, j)
                    .copy_from(&f.eval(x, y));
            }
        }
        let scales: Vec<f64> = (0..k)
            .map(|j| {
                let rms = if j < ks {
                    SHAPE_SCALE * SHAPE_DECAY.powi(j as i32)
                } else {
                    EXPRESSION_SCALE
                };
                rms * (n_vertices as f64).sqrt()
            })
            .collect();
        let qr = raw.qr();
        let q = qr.q();
        let r = qr.r();
        let scale = DMatrix::from_diagonal(&DVector::from_vec(scales));
        let r_inv = r
            .solve_upper_triangular(&DMatrix::identity(k, k))
            .expect("toy basis fields are linearly independent");
        let mix = r_inv * &scale;
        let basis = q * scale;

        let mut heights: Vec<Point3<f64>> = layout
            .iter()
            .map(|&(x, y)| Point3::new(x, y, mean_depth(x, y)))
            .collect();
        let nose_index = heights
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.z.total_cmp(&b.1.z).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .expect("non-empty layout");
        let offset = -heights[nose_index].coords;
        for p in &mut heights {
            *p += offset;
        }
        let mean =
            DVector::from_iterator(3 * n_vertices, heights.iter().flat_map(|p| [p.x, p.y, p.z]));
        let model = MorphableModel::new(
            mean,
            basis.columns(0, ks).into_owned(),
            basis.columns(ks, ke).into_owned(),
            Some(nose_index),
        )
        .expect("toy model is valid by construction");
        Self {
            model,
            fields,
            mix,
            offset,
            layout,
        }
    }

    pub fn model(&self) -> &MorphableModel {
        &self.model
    }

    /// Neutral-face `(x, y)` position of every model vertex, before the
    /// nose is moved to the origin.
    pub fn vertex_positions(&self) -> &[(f64, f64)] {
        &self.layout
    }

    pub fn into_model(self) -> MorphableModel {
        self.model
    }

    /// Evaluates the face for `params` at arbitrary `(x, y)` positions of the
    /// neutral mean. Agrees with `synthesize` at the model's vertices.
    pub fn sample(&self, params: &ModelParams, xy: &[(f64, f64)]) -> Vec<Point3<f64>> {
        let stacked = DVector::from_iterator(
            params.alpha.len() + params.beta.len(),
            params.alpha.iter().chain(&params.beta).copied(),
        );
        let coef = &self.mix * stacked;
        xy.iter()
            .map(|&(x, y)| {
                let mut p = Vector3::new(x, y, mean_depth(x, y)) + self.offset;
                for (f, c) in self.fields.iter().zip(coef.iter()) {
                    if *c != 0.0 {
                        p += f.eval(x, y) * *c;
                    }
                }
                Point3::from(p)
            })
            .collect()
    }
}

/// Procedural morphable model; see [`ToyFace`].
pub fn make_toy_model(n_vertices: usize, ks: usize, ke: usize, seed: u64) -> MorphableModel {
    ToyFace::new(n_vertices, ks, ke, seed).into_model()
}
