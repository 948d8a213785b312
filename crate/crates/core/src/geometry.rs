//! Riemannian primitives on Kendall's pre-shape sphere and rotations in SO(3).
//!
//! A configuration of `n` landmarks in R^3 is centered by a Helmert submatrix
//! and scaled to unit Frobenius norm, which places it on the pre-shape sphere
//! `C`, the unit sphere in R^{3(n-1)}. On that sphere the usual closed forms
//! apply:
//!
//! - geodesic distance: `theta = arccos(<x, y>)`
//! - log map:           `log_x(y) = theta/sin(theta) * (y - cos(theta) x)`
//! - exp map:           `exp_x(v) = cos(|v|) x + sin(|v|) v/|v|`
//! - parallel transport along the minimal geodesic:
//!   `PT(u) = u - <log_x(y), u>/theta^2 * (log_y(x) + log_x(y))`
//!
//! Transport divides by `theta^2` (the squared length of the shooting vector),
//! which is what makes the map an isometry between tangent spaces; the
//! `checks` module exercises that property directly.
//!
//! Rotation variability is handled explicitly: configurations are stored
//! rows-as-points and a rotation `R` acts on the right as `X * R^T`.
//! `procrustes_rotation` computes the optimal aligning rotation via SVD with
//! the determinant-sign correction that excludes reflections.

use nalgebra::{Matrix3, Vector3};
use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};

/// Angles below this threshold switch the sphere maps to their series limits,
/// avoiding sin(theta) cancellation in double precision.
pub const SMALL_ANGLE: f64 = 1e-7;

/// Tangency tolerance for validated tangent-vector construction and for the
/// exp-map domain check.
pub const TANGENCY_TOL: f64 = 1e-8;

/// Unit-norm tolerance for validated pre-shape construction.
const UNIT_NORM_TOL: f64 = 1e-10;

/// Inner products this close to -1 are treated as antipodal; the log map and
/// parallel transport are undefined there.
const ANTIPODAL_TOL: f64 = 1e-12;

fn frobenius_norm(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// A raw configuration of `n >= 3` landmarks in R^3, rows as points.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkConfig {
    points: Array2<f64>,
}

impl LandmarkConfig {
    pub fn new(points: Array2<f64>) -> Result<Self> {
        if points.ncols() != 3 || points.nrows() < 3 {
            return Err(Error::InvalidDimension(format!(
                "landmark configuration must be n x 3 with n >= 3, got {} x {}",
                points.nrows(),
                points.ncols()
            )));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDimension(
                "landmark coordinates must be finite".into(),
            ));
        }
        Ok(Self { points })
    }

    pub fn joints(&self) -> usize {
        self.points.nrows()
    }

    pub fn points(&self) -> &Array2<f64> {
        &self.points
    }
}

/// The (n-1) x n submatrix of the full Helmert matrix with the constant first
/// row removed. Rows are orthonormal and orthogonal to the all-ones vector,
/// so left-multiplication removes translation.
#[derive(Debug, Clone)]
pub struct HelmertSubmatrix {
    rows: Array2<f64>,
}

impl HelmertSubmatrix {
    pub fn rows(&self) -> &Array2<f64> {
        &self.rows
    }

    pub fn joints(&self) -> usize {
        self.rows.ncols()
    }

    /// Center a configuration: `H * X`, an (n-1) x 3 array of pseudo-landmarks.
    pub fn center(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.nrows() != self.joints() || x.ncols() != 3 {
            return Err(Error::InvalidDimension(format!(
                "expected {} x 3 configuration, got {} x {}",
                self.joints(),
                x.nrows(),
                x.ncols()
            )));
        }
        Ok(self.rows.dot(x))
    }
}

/// Classical Helmert construction with the constant row removed.
///
/// Row k (0-indexed) of the submatrix has k+1 leading entries equal to
/// `1/sqrt((k+1)(k+2))`, then `-(k+1)/sqrt((k+1)(k+2))`, then zeros.
pub fn helmert_submatrix(n: usize) -> Result<HelmertSubmatrix> {
    if n < 2 {
        return Err(Error::InvalidDimension(format!(
            "Helmert submatrix requires n >= 2 landmarks, got {n}"
        )));
    }
    let mut rows = Array2::zeros((n - 1, n));
    for k in 0..n - 1 {
        let j = (k + 1) as f64;
        let a = 1.0 / (j * (j + 1.0)).sqrt();
        for c in 0..=k {
            rows[[k, c]] = a;
        }
        rows[[k, k + 1]] = -j * a;
    }
    Ok(HelmertSubmatrix { rows })
}

/// A centered, unit-norm configuration: a point on the pre-shape sphere.
///
/// Stored as an (n-1) x 3 array of Helmerted pseudo-landmarks; the flattened
/// row-major view of length 3(n-1) is the ambient coordinate vector used by
/// the sphere maps.
#[derive(Debug, Clone, PartialEq)]
pub struct PreShape {
    coords: Array2<f64>,
}

impl PreShape {
    /// Validated constructor: requires unit Frobenius norm.
    pub fn new(coords: Array2<f64>) -> Result<Self> {
        if coords.ncols() != 3 || coords.nrows() < 1 {
            return Err(Error::InvalidDimension(format!(
                "pre-shape must be (n-1) x 3, got {} x {}",
                coords.nrows(),
                coords.ncols()
            )));
        }
        let norm = frobenius_norm(&coords);
        if (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::InvalidDimension(format!(
                "pre-shape norm is {norm}, expected 1"
            )));
        }
        Ok(Self { coords })
    }

    fn from_coords_unchecked(coords: Array2<f64>) -> Self {
        Self { coords }
    }

    fn from_flat(flat: &Array1<f64>) -> Self {
        let rows = flat.len() / 3;
        Self {
            coords: Array2::from_shape_vec((rows, 3), flat.to_vec())
                .expect("flat pre-shape length is a multiple of 3"),
        }
    }

    pub fn coords(&self) -> &Array2<f64> {
        &self.coords
    }

    /// Number of pseudo-landmarks, n-1.
    pub fn pseudo_joints(&self) -> usize {
        self.coords.nrows()
    }

    /// Ambient dimension 3(n-1).
    pub fn ambient_dim(&self) -> usize {
        self.coords.len()
    }

    /// Row-major flattened view: pseudo-joint j occupies entries 3j..3j+3.
    pub fn flat(&self) -> ArrayView1<'_, f64> {
        ArrayView1::from(self.coords.as_slice().expect("coords are contiguous"))
    }

    pub fn inner(&self, other: &PreShape) -> f64 {
        self.flat().dot(&other.flat())
    }

    /// Apply a rotation to every pseudo-landmark: `coords * R^T`.
    pub fn rotate(&self, r: &Rotation3) -> PreShape {
        let mut out = Array2::zeros(self.coords.raw_dim());
        for (i, row) in self.coords.rows().into_iter().enumerate() {
            let v = r.mat * Vector3::new(row[0], row[1], row[2]);
            out[[i, 0]] = v.x;
            out[[i, 1]] = v.y;
            out[[i, 2]] = v.z;
        }
        PreShape { coords: out }
    }
}

/// An ambient-coordinate vector tangent to the pre-shape sphere at `base`.
#[derive(Debug, Clone)]
pub struct TangentVector {
    base: PreShape,
    vec: Array1<f64>,
}

impl TangentVector {
    /// Validated constructor: length must match the base and the vector must
    /// be orthogonal to it within [`TANGENCY_TOL`].
    pub fn new(base: PreShape, vec: Array1<f64>) -> Result<Self> {
        if vec.len() != base.ambient_dim() {
            return Err(Error::InvalidDimension(format!(
                "tangent vector has length {}, base has ambient dimension {}",
                vec.len(),
                base.ambient_dim()
            )));
        }
        let dot = base.flat().dot(&vec);
        if dot.abs() > TANGENCY_TOL {
            return Err(Error::NotTangent { deviation: dot.abs() });
        }
        Ok(Self { base, vec })
    }

    fn new_unchecked(base: PreShape, vec: Array1<f64>) -> Self {
        Self { base, vec }
    }

    pub fn zero(base: PreShape) -> Self {
        let vec = Array1::zeros(base.ambient_dim());
        Self { base, vec }
    }

    pub fn base(&self) -> &PreShape {
        &self.base
    }

    pub fn vec(&self) -> &Array1<f64> {
        &self.vec
    }

    pub fn norm(&self) -> f64 {
        self.vec.dot(&self.vec).sqrt()
    }
}

/// Center with the Helmert submatrix and scale to unit norm.
///
/// The centered-but-unscaled intermediate `HX` exists only inside this
/// function; a configuration whose landmarks are all identical centers to
/// zero and has no pre-shape.
pub fn to_preshape(x: &LandmarkConfig) -> Result<PreShape> {
    let h = helmert_submatrix(x.joints())?;
    let centered = h.center(x.points())?;
    let norm = frobenius_norm(&centered);
    if norm < 1e-12 {
        return Err(Error::ZeroNorm {
            context: "all landmarks coincide after centering".into(),
        });
    }
    Ok(PreShape::from_coords_unchecked(centered / norm))
}

/// Arc-length distance on the pre-shape sphere, in [0, pi].
///
/// Mathematically `arccos(<x, y>)`, but evaluated through the half-chord
/// identity `theta = 2 asin(|x - y| / 2)` (and its antipodal mirror), which
/// stays accurate where arccos loses half its digits: `arccos(1 - eps)`
/// cannot resolve distances below ~1e-8, while nearly-coincident pre-shapes
/// produced by alignment must measure as essentially zero.
pub fn geodesic_distance(x: &PreShape, y: &PreShape) -> f64 {
    let dot = x.inner(y);
    if dot >= 0.0 {
        let half_chord: f64 = x
            .flat()
            .iter()
            .zip(y.flat().iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
            / 2.0;
        2.0 * half_chord.min(1.0).asin()
    } else {
        let half_chord: f64 = x
            .flat()
            .iter()
            .zip(y.flat().iter())
            .map(|(a, b)| (a + b) * (a + b))
            .sum::<f64>()
            .sqrt()
            / 2.0;
        std::f64::consts::PI - 2.0 * half_chord.min(1.0).asin()
    }
}

/// Logarithmic map `log_x(y)`: the tangent vector at `x` whose norm equals
/// the geodesic distance to `y`. Undefined for antipodal inputs.
pub fn log_map(x: &PreShape, y: &PreShape) -> Result<TangentVector> {
    if x.ambient_dim() != y.ambient_dim() {
        return Err(Error::InvalidDimension(format!(
            "pre-shape dimensions differ: {} vs {}",
            x.ambient_dim(),
            y.ambient_dim()
        )));
    }
    let c = x.inner(y).clamp(-1.0, 1.0);
    if c <= -1.0 + ANTIPODAL_TOL {
        return Err(Error::Antipodal {
            context: "log map".into(),
        });
    }
    let theta = c.acos();
    // theta/sin(theta) -> 1 as theta -> 0.
    let scale = if theta < SMALL_ANGLE {
        1.0
    } else {
        theta / theta.sin()
    };
    let vec = Array1::from_iter(
        y.flat()
            .iter()
            .zip(x.flat().iter())
            .map(|(&yi, &xi)| scale * (yi - c * xi)),
    );
    Ok(TangentVector::new_unchecked(x.clone(), vec))
}

/// Exponential map `exp_x(v)`: follow the geodesic from `x` with initial
/// velocity `v` for arc length `|v|`.
///
/// `v` must be tangent at `x`; a violation beyond [`TANGENCY_TOL`] is a
/// domain error.
pub fn exp_map(x: &PreShape, v: &TangentVector) -> Result<PreShape> {
    if v.vec.len() != x.ambient_dim() {
        return Err(Error::InvalidDimension(format!(
            "tangent vector length {} does not match ambient dimension {}",
            v.vec.len(),
            x.ambient_dim()
        )));
    }
    let dot = x.flat().dot(&v.vec);
    if dot.abs() > TANGENCY_TOL {
        return Err(Error::NotTangent { deviation: dot.abs() });
    }
    let t = v.norm();
    let flat = if t < SMALL_ANGLE {
        // Second-order series: cos t ~ 1 - t^2/2, sin(t)/t ~ 1 - t^2/6.
        let (a, b) = (1.0 - t * t / 2.0, 1.0 - t * t / 6.0);
        Array1::from_iter(
            x.flat()
                .iter()
                .zip(v.vec.iter())
                .map(|(&xi, &vi)| a * xi + b * vi),
        )
    } else {
        let (a, b) = (t.cos(), t.sin() / t);
        Array1::from_iter(
            x.flat()
                .iter()
                .zip(v.vec.iter())
                .map(|(&xi, &vi)| a * xi + b * vi),
        )
    };
    Ok(PreShape::from_flat(&flat))
}

/// Parallel transport of `u` from the tangent space at `x` to the tangent
/// space at `y` along the minimal geodesic. Isometric: norms and inner
/// products are preserved.
///
/// For coincident points the transport is the identity (re-projected at `y`
/// to keep the tangency invariant).
pub fn parallel_transport(x: &PreShape, y: &PreShape, u: &TangentVector) -> Result<TangentVector> {
    if u.vec.len() != x.ambient_dim() || x.ambient_dim() != y.ambient_dim() {
        return Err(Error::InvalidDimension(
            "parallel transport dimension mismatch".into(),
        ));
    }
    let c = x.inner(y).clamp(-1.0, 1.0);
    if c <= -1.0 + ANTIPODAL_TOL {
        return Err(Error::Antipodal {
            context: "parallel transport".into(),
        });
    }
    let theta = c.acos();
    if theta < SMALL_ANGLE {
        let yb = y.flat();
        let dot = yb.dot(&u.vec);
        let vec = Array1::from_iter(
            u.vec
                .iter()
                .zip(yb.iter())
                .map(|(&ui, &yi)| ui - dot * yi),
        );
        return Ok(TangentVector::new_unchecked(y.clone(), vec));
    }
    let log_xy = log_map(x, y)?;
    let log_yx = log_map(y, x)?;
    let coeff = log_xy.vec.dot(&u.vec) / (theta * theta);
    let vec = Array1::from_iter(
        u.vec
            .iter()
            .zip(log_yx.vec.iter().zip(log_xy.vec.iter()))
            .map(|(&ui, (&ai, &bi))| ui - coeff * (ai + bi)),
    );
    Ok(TangentVector::new_unchecked(y.clone(), vec))
}

/// A proper rotation of R^3.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation3 {
    mat: Matrix3<f64>,
}

impl Rotation3 {
    /// Validated constructor: `R^T R = I` and `det R = 1`, both within 1e-10.
    pub fn new(mat: Matrix3<f64>) -> Result<Self> {
        let gram = mat.transpose() * mat;
        let dev = (gram - Matrix3::identity()).abs().max();
        if dev > 1e-10 {
            return Err(Error::InvalidDimension(format!(
                "matrix is not orthonormal (|R^T R - I| = {dev:.3e})"
            )));
        }
        let det = mat.determinant();
        if (det - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidDimension(format!(
                "matrix has determinant {det}, expected +1"
            )));
        }
        Ok(Self { mat })
    }

    fn from_matrix_unchecked(mat: Matrix3<f64>) -> Self {
        Self { mat }
    }

    pub fn identity() -> Self {
        Self {
            mat: Matrix3::identity(),
        }
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.mat
    }

    pub fn inverse(&self) -> Rotation3 {
        Rotation3 {
            mat: self.mat.transpose(),
        }
    }
}

/// Result of a Procrustes alignment. `degenerate` flags a rank-deficient
/// cross-covariance whose optimum is not unique; the returned rotation is
/// still an optimizer.
#[derive(Debug, Clone)]
pub struct ProcrustesAlignment {
    pub rotation: Rotation3,
    pub degenerate: bool,
}

/// Optimal rotation aligning `y` onto `x`: the minimizer of
/// `|x - y R^T|_F` over SO(3), computed from the SVD of `x^T y` with the
/// determinant-sign correction that excludes reflections.
///
/// Applying the result (`y.rotate(&r)`) never increases the geodesic
/// distance to `x`.
pub fn procrustes_rotation(x: &PreShape, y: &PreShape) -> Result<ProcrustesAlignment> {
    if x.pseudo_joints() != y.pseudo_joints() {
        return Err(Error::InvalidDimension(format!(
            "pre-shapes have {} and {} pseudo-landmarks",
            x.pseudo_joints(),
            y.pseudo_joints()
        )));
    }
    // Cross-covariance M = x^T y, a 3x3 matrix.
    let mut m = Matrix3::zeros();
    for (rx, ry) in x.coords.rows().into_iter().zip(y.coords.rows()) {
        for a in 0..3 {
            for b in 0..3 {
                m[(a, b)] += rx[a] * ry[b];
            }
        }
    }
    let svd = m.svd(true, true);
    let u: Matrix3<f64> = svd.u.expect("3x3 SVD always yields U");
    let v_t: Matrix3<f64> = svd.v_t.expect("3x3 SVD always yields V^T");
    let d = (u * v_t).determinant().signum();
    let r = u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * v_t;

    // Singular values are sorted descending. The optimum is non-unique when
    // the rank is <= 1, or when a reflection correction meets a tied pair.
    let s = svd.singular_values;
    let tol = 1e-9 * s[0].max(1e-300);
    let degenerate = s[1] < tol || (d < 0.0 && (s[1] - s[2]).abs() < tol);

    Ok(ProcrustesAlignment {
        rotation: Rotation3::from_matrix_unchecked(r),
        degenerate,
    })
}

/// Rotation angles about the x, y and z axes, in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerAngles {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl EulerAngles {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Self {
        Self { alpha, beta, gamma }
    }

    pub fn zero() -> Self {
        Self {
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.0,
        }
    }
}

fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn rot_y(b: f64) -> Matrix3<f64> {
    let (s, c) = b.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn rot_z(g: f64) -> Matrix3<f64> {
    let (s, c) = g.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn rot_x_deriv(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(0.0, 0.0, 0.0, 0.0, -s, -c, 0.0, c, -s)
}

fn rot_y_deriv(b: f64) -> Matrix3<f64> {
    let (s, c) = b.sin_cos();
    Matrix3::new(-s, 0.0, c, 0.0, 0.0, 0.0, -c, 0.0, -s)
}

fn rot_z_deriv(g: f64) -> Matrix3<f64> {
    let (s, c) = g.sin_cos();
    Matrix3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0)
}

/// Compose `R = Rz(gamma) * Ry(beta) * Rx(alpha)` (intrinsic z-y-x).
pub fn rotation_from_euler(a: &EulerAngles) -> Rotation3 {
    Rotation3::from_matrix_unchecked(rot_z(a.gamma) * rot_y(a.beta) * rot_x(a.alpha))
}

/// Analytic partials of [`rotation_from_euler`] with respect to
/// (alpha, beta, gamma), in that order.
pub fn rotation_euler_jacobian(a: &EulerAngles) -> [Matrix3<f64>; 3] {
    let rx = rot_x(a.alpha);
    let ry = rot_y(a.beta);
    let rz = rot_z(a.gamma);
    [
        rz * ry * rot_x_deriv(a.alpha),
        rz * rot_y_deriv(a.beta) * rx,
        rot_z_deriv(a.gamma) * ry * rx,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_preshape(rng: &mut impl Rng, joints: usize) -> PreShape {
        loop {
            let mut coords = Array2::zeros((joints - 1, 3));
            for v in coords.iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
            let norm = frobenius_norm(&coords);
            if norm > 1e-3 {
                return PreShape::from_coords_unchecked(coords / norm);
            }
        }
    }

    pub(crate) fn random_tangent(rng: &mut impl Rng, base: &PreShape, scale: f64) -> TangentVector {
        let mut vec = Array1::zeros(base.ambient_dim());
        for v in vec.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let dot = base.flat().dot(&vec);
        for (v, b) in vec.iter_mut().zip(base.flat().iter()) {
            *v -= dot * b;
        }
        let norm = vec.dot(&vec).sqrt();
        TangentVector::new(base.clone(), vec * (scale / norm)).unwrap()
    }

    fn random_rotation(rng: &mut impl Rng) -> Rotation3 {
        rotation_from_euler(&EulerAngles::new(
            rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
            rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
            rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
        ))
    }

    #[test]
    fn helmert_n2_matches_closed_form() {
        let h = helmert_submatrix(2).unwrap();
        let expected = array![[1.0 / 2f64.sqrt(), -1.0 / 2f64.sqrt()]];
        for (a, b) in h.rows().iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-15, "entry {a} vs {b}");
        }
    }

    #[test]
    fn helmert_n3_matches_closed_form() {
        let h = helmert_submatrix(3).unwrap();
        let s2 = 2f64.sqrt();
        let s6 = 6f64.sqrt();
        let expected = array![[1.0 / s2, -1.0 / s2, 0.0], [1.0 / s6, 1.0 / s6, -2.0 / s6]];
        for (a, b) in h.rows().iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-15, "entry {a} vs {b}");
        }
    }

    #[test]
    fn helmert_rows_orthonormal_and_sum_to_zero() {
        for n in 2..=40 {
            let h = helmert_submatrix(n).unwrap();
            let rows = h.rows();
            for i in 0..n - 1 {
                let sum: f64 = rows.row(i).sum();
                assert!(sum.abs() < 1e-12, "n={n} row {i} sums to {sum}");
                for j in 0..n - 1 {
                    let dot: f64 = rows.row(i).dot(&rows.row(j));
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!(
                        (dot - want).abs() < 1e-12,
                        "n={n} <row{i}, row{j}> = {dot}"
                    );
                }
            }
        }
    }

    #[test]
    fn helmert_rejects_single_landmark() {
        assert!(matches!(
            helmert_submatrix(1),
            Err(Error::InvalidDimension(_))
        ));
    }

    #[test]
    fn to_preshape_rejects_coincident_landmarks() {
        let x = LandmarkConfig::new(array![[1.0, 2.0, 3.0], [1.0, 2.0, 3.0], [1.0, 2.0, 3.0]])
            .unwrap();
        assert!(matches!(to_preshape(&x), Err(Error::ZeroNorm { .. })));
    }

    #[test]
    fn to_preshape_three_point_oracle() {
        // X = (1,0,0), (-1,0,0), (0,0,0). Building H by hand:
        //   row0 = (1/sqrt2, -1/sqrt2, 0)      -> H X row0 = (sqrt2, 0, 0)
        //   row1 = (1/sqrt6, 1/sqrt6, -2/sqrt6) -> H X row1 = (0, 0, 0)
        // so |HX| = sqrt2 and the pre-shape is ((1,0,0), (0,0,0)).
        let x = LandmarkConfig::new(array![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
            .unwrap();
        let p = to_preshape(&x).unwrap();

        // Independent evaluation straight from the row formulas.
        let s2 = 2f64.sqrt();
        let s6 = 6f64.sqrt();
        let hx = [
            [1.0 / s2 * 1.0 + (-1.0 / s2) * (-1.0), 0.0, 0.0],
            [1.0 / s6 * 1.0 + 1.0 / s6 * (-1.0) + (-2.0 / s6) * 0.0, 0.0, 0.0],
        ];
        let norm = hx.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
        for i in 0..2 {
            for j in 0..3 {
                let want = hx[i][j] / norm;
                assert!(
                    (p.coords()[[i, j]] - want).abs() < 1e-12,
                    "coords[{i},{j}] = {} vs oracle {want}",
                    p.coords()[[i, j]]
                );
            }
        }
        assert!((p.coords()[[0, 0]] - 1.0).abs() < 1e-12);
        assert!(p.coords()[[1, 0]].abs() < 1e-12);
    }

    #[test]
    fn to_preshape_identity_on_unit_norm_centered_input() {
        // Pick a configuration, center+normalize it once, then rebuild a raw
        // configuration whose HX equals those coordinates: H^T (HX) has
        // H (H^T HX) = HX because H H^T = I.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = random_preshape(&mut rng, 6);
        let h = helmert_submatrix(6).unwrap();
        let raw = h.rows().t().dot(p.coords());
        let x = LandmarkConfig::new(raw).unwrap();
        let q = to_preshape(&x).unwrap();
        for (a, b) in q.flat().iter().zip(p.flat().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn to_preshape_translation_and_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let mut pts = Array2::zeros((8, 3));
            for v in pts.iter_mut() {
                *v = rng.gen_range(-2.0..2.0);
            }
            let base = to_preshape(&LandmarkConfig::new(pts.clone()).unwrap()).unwrap();

            let t: [f64; 3] = [
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
            ];
            let c: f64 = rng.gen_range(0.1..10.0);
            let mut moved = pts.clone();
            for mut row in moved.rows_mut() {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = c * *v + t[j];
                }
            }
            // c * (X + t) differs from c*X + t, but both invariances compose;
            // this exercises them jointly.
            let other = to_preshape(&LandmarkConfig::new(moved).unwrap()).unwrap();
            for (a, b) in base.flat().iter().zip(other.flat().iter()) {
                assert!((a - b).abs() < 1e-12, "invariance violated: {a} vs {b}");
            }
        }
    }

    #[test]
    fn geodesic_distance_basics() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_preshape(&mut rng, 9);
        assert_eq!(geodesic_distance(&x, &x), 0.0);

        // Orthogonal pair: supported on disjoint pseudo-landmarks.
        let a = PreShape::new(array![[1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]).unwrap();
        let b = PreShape::new(array![[0.0, 0.0, 0.0], [0.0, 1.0, 0.0]]).unwrap();
        assert!((geodesic_distance(&a, &b) - std::f64::consts::FRAC_PI_2).abs() < 1e-15);

        for _ in 0..100 {
            let x = random_preshape(&mut rng, 9);
            let y = random_preshape(&mut rng, 9);
            let direct = x.flat().dot(&y.flat()).clamp(-1.0, 1.0).acos();
            assert!((geodesic_distance(&x, &y) - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn log_map_of_self_is_zero_and_norm_is_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_preshape(&mut rng, 12);
        let v = log_map(&x, &x).unwrap();
        assert!(v.norm() < 1e-12);

        for _ in 0..200 {
            let x = random_preshape(&mut rng, 12);
            let y = random_preshape(&mut rng, 12);
            let v = log_map(&x, &y).unwrap();
            let theta = geodesic_distance(&x, &y);
            assert!((v.norm() - theta).abs() < 1e-10, "norm {} vs theta {theta}", v.norm());
            let tangency = x.flat().dot(v.vec());
            assert!(tangency.abs() < 1e-10, "tangency {tangency}");
        }
    }

    #[test]
    fn log_map_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let x = random_preshape(&mut rng, 7);
            let y = random_preshape(&mut rng, 7);
            let v = log_map(&x, &y).unwrap();
            // Independent elementwise evaluation of the log-map formula.
            let c: f64 = x.flat().iter().zip(y.flat().iter()).map(|(a, b)| a * b).sum();
            let theta = c.acos();
            let s = theta / theta.sin();
            for ((vi, xi), yi) in v.vec().iter().zip(x.flat().iter()).zip(y.flat().iter()) {
                let want = s * (yi - c * xi);
                assert!((vi - want).abs() < 1e-12, "{vi} vs oracle {want}");
            }
        }
    }

    #[test]
    fn log_map_rejects_antipodal() {
        let x = PreShape::new(array![[1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]).unwrap();
        let y = PreShape::new(array![[-1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]).unwrap();
        assert!(matches!(log_map(&x, &y), Err(Error::Antipodal { .. })));
    }

    #[test]
    fn exp_map_zero_vector_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_preshape(&mut rng, 10);
        let y = exp_map(&x, &TangentVector::zero(x.clone())).unwrap();
        for (a, b) in x.flat().iter().zip(y.flat().iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn exp_map_pi_reaches_antipode() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_preshape(&mut rng, 10);
        let v = random_tangent(&mut rng, &x, std::f64::consts::PI);
        let y = exp_map(&x, &v).unwrap();
        for (a, b) in x.flat().iter().zip(y.flat().iter()) {
            assert!((a + b).abs() < 1e-12, "antipode mismatch {a} vs {b}");
        }
    }

    #[test]
    fn exp_map_rejects_non_tangent() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random_preshape(&mut rng, 10);
        let z = random_preshape(&mut rng, 10);
        // Tangent at z, generically far from tangent at x.
        let v = random_tangent(&mut rng, &z, 0.5);
        assert!(matches!(exp_map(&x, &v), Err(Error::NotTangent { .. })));
    }

    #[test]
    fn exp_log_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut worst = 0.0f64;
        for _ in 0..1000 {
            let x = random_preshape(&mut rng, 25);
            let y = random_preshape(&mut rng, 25);
            let v = log_map(&x, &y).unwrap();
            let back = exp_map(&x, &v).unwrap();
            for (a, b) in back.flat().iter().zip(y.flat().iter()) {
                worst = worst.max((a - b).abs());
            }
        }
        assert!(worst < 1e-10, "exp(log) roundtrip error {worst}");
    }

    #[test]
    fn log_exp_roundtrip_on_tangent_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut worst = 0.0f64;
        for _ in 0..300 {
            let x = random_preshape(&mut rng, 25);
            let scale = rng.gen_range(1e-4..std::f64::consts::PI - 1e-3);
            let v = random_tangent(&mut rng, &x, scale);
            let y = exp_map(&x, &v).unwrap();
            let back = log_map(&x, &y).unwrap();
            for (a, b) in back.vec().iter().zip(v.vec().iter()) {
                worst = worst.max((a - b).abs());
            }
        }
        assert!(worst < 1e-10, "log(exp) roundtrip error {worst}");
    }

    #[test]
    fn transport_identity_when_target_equals_base() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = random_preshape(&mut rng, 8);
        let u = random_tangent(&mut rng, &x, 0.7);
        let t = parallel_transport(&x, &x, &u).unwrap();
        for (a, b) in t.vec().iter().zip(u.vec().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn transport_of_shooting_vector_reverses() {
        // PT of log_x(y) from x to y is -log_y(x); direct substitution into
        // the theta^2 formula: coefficient is <log,log>/theta^2 = 1, so the
        // output is log_x(y) - log_y(x) - log_x(y) = -log_y(x).
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let x = random_preshape(&mut rng, 9);
            let y = random_preshape(&mut rng, 9);
            let u = log_map(&x, &y).unwrap();
            let t = parallel_transport(&x, &y, &u).unwrap();
            let back = log_map(&y, &x).unwrap();
            for (a, b) in t.vec().iter().zip(back.vec().iter()) {
                assert!((a + b).abs() < 1e-10, "{a} vs {}", -b);
            }
        }
    }

    #[test]
    fn transport_is_isometric_and_lands_tangent() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut worst_iso = 0.0f64;
        let mut worst_tan = 0.0f64;
        for _ in 0..1000 {
            let x = random_preshape(&mut rng, 25);
            let y = random_preshape(&mut rng, 25);
            let (su, sw) = (rng.gen_range(0.1..2.0), rng.gen_range(0.1..2.0));
            let u = random_tangent(&mut rng, &x, su);
            let w = random_tangent(&mut rng, &x, sw);
            let tu = parallel_transport(&x, &y, &u).unwrap();
            let tw = parallel_transport(&x, &y, &w).unwrap();
            worst_iso = worst_iso
                .max((tu.vec().dot(tw.vec()) - u.vec().dot(w.vec())).abs())
                .max((tu.norm() - u.norm()).abs());
            worst_tan = worst_tan.max(y.flat().dot(tu.vec()).abs());
        }
        assert!(worst_iso < 1e-9, "isometry violation {worst_iso}");
        assert!(worst_tan < 1e-9, "target tangency violation {worst_tan}");
    }

    #[test]
    fn procrustes_identity_for_equal_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let x = random_preshape(&mut rng, 10);
        let al = procrustes_rotation(&x, &x).unwrap();
        let dev = (al.rotation.matrix() - Matrix3::identity()).abs().max();
        assert!(dev < 1e-10, "identity deviation {dev}");
        assert!(!al.degenerate);
    }

    #[test]
    fn procrustes_recovers_planted_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..200 {
            let x = random_preshape(&mut rng, 10);
            let r = random_rotation(&mut rng);
            // y = x * R, so y R^T = x exactly and the minimizer is R itself.
            let y = x.rotate(&r.inverse());
            let al = procrustes_rotation(&x, &y).unwrap();
            let dev = (al.rotation.matrix() - r.matrix()).abs().max();
            assert!(dev < 1e-8, "recovered rotation off by {dev}");
            let aligned = y.rotate(&al.rotation);
            let d = geodesic_distance(&x, &aligned);
            assert!(d < 1e-9, "post-alignment distance {d}");
        }
    }

    #[test]
    fn procrustes_never_increases_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        for _ in 0..200 {
            let x = random_preshape(&mut rng, 10);
            let y = random_preshape(&mut rng, 10);
            let al = procrustes_rotation(&x, &y).unwrap();
            let aligned = y.rotate(&al.rotation);
            assert!(
                geodesic_distance(&x, &aligned) <= geodesic_distance(&x, &y) + 1e-12,
                "alignment increased distance"
            );
        }
    }

    #[test]
    fn procrustes_reflection_yields_proper_rotation() {
        // Planar configuration reflected in-plane; the SVD sign correction
        // must still return det = +1.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut coords = Array2::zeros((6, 3));
        for i in 0..6 {
            coords[[i, 0]] = rng.gen_range(-1.0..1.0);
            coords[[i, 1]] = rng.gen_range(-1.0..1.0);
        }
        let norm = frobenius_norm(&coords);
        let x = PreShape::from_coords_unchecked(coords / norm);
        let mut reflected = x.coords().clone();
        for mut row in reflected.rows_mut() {
            row[0] = -row[0];
        }
        let y = PreShape::from_coords_unchecked(reflected);
        let al = procrustes_rotation(&x, &y).unwrap();
        let det = al.rotation.matrix().determinant();
        assert!((det - 1.0).abs() < 1e-10, "determinant {det}");
    }

    #[test]
    fn euler_identity_and_quarter_turn() {
        let r = rotation_from_euler(&EulerAngles::zero());
        assert!((r.matrix() - Matrix3::identity()).abs().max() < 1e-15);

        let r = rotation_from_euler(&EulerAngles::new(std::f64::consts::FRAC_PI_2, 0.0, 0.0));
        let expected = Matrix3::new(1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0);
        assert!((r.matrix() - expected).abs().max() < 1e-15);
    }

    #[test]
    fn euler_composition_order_is_zyx() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        for _ in 0..50 {
            let a = EulerAngles::new(
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
            );
            // Build the three factors independently and multiply.
            let (sa, ca) = a.alpha.sin_cos();
            let (sb, cb) = a.beta.sin_cos();
            let (sg, cg) = a.gamma.sin_cos();
            let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, ca, -sa, 0.0, sa, ca);
            let ry = Matrix3::new(cb, 0.0, sb, 0.0, 1.0, 0.0, -sb, 0.0, cb);
            let rz = Matrix3::new(cg, -sg, 0.0, sg, cg, 0.0, 0.0, 0.0, 1.0);
            let want = rz * ry * rx;
            let got = rotation_from_euler(&a);
            assert!((got.matrix() - want).abs().max() < 1e-14);
        }
    }

    #[test]
    fn euler_rotations_stay_in_so3() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..10_000 {
            let r = random_rotation(&mut rng);
            let gram = r.matrix().transpose() * r.matrix();
            assert!((gram - Matrix3::identity()).abs().max() < 1e-12);
            assert!((r.matrix().determinant() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn euler_jacobian_generators_at_zero() {
        let j = rotation_euler_jacobian(&EulerAngles::zero());
        let gen_x = Matrix3::new(0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0);
        let gen_y = Matrix3::new(0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0);
        let gen_z = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        assert!((j[0] - gen_x).abs().max() < 1e-15);
        assert!((j[1] - gen_y).abs().max() < 1e-15);
        assert!((j[2] - gen_z).abs().max() < 1e-15);
    }

    #[test]
    fn euler_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let h = 1e-6;
        let mut worst = 0.0f64;
        for _ in 0..1000 {
            let a = EulerAngles::new(
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
            );
            let jac = rotation_euler_jacobian(&a);
            for (k, j) in jac.iter().enumerate() {
                let mut plus = a;
                let mut minus = a;
                match k {
                    0 => {
                        plus.alpha += h;
                        minus.alpha -= h;
                    }
                    1 => {
                        plus.beta += h;
                        minus.beta -= h;
                    }
                    _ => {
                        plus.gamma += h;
                        minus.gamma -= h;
                    }
                }
                let fd = (rotation_from_euler(&plus).matrix()
                    - rotation_from_euler(&minus).matrix())
                    / (2.0 * h);
                for r in 0..3 {
                    for c in 0..3 {
                        let denom = j[(r, c)].abs().max(fd[(r, c)].abs()).max(1.0);
                        worst = worst.max((j[(r, c)] - fd[(r, c)]).abs() / denom);
                    }
                }
            }
        }
        assert!(worst < 1e-6, "jacobian FD relative error {worst}");
    }
}
