//! From raw skeleton sequences to fixed-length tangent-space feature arrays.
//!
//! A sequence is resampled to `T` frames with natural cubic splines, each
//! frame is centered and normalized onto the pre-shape sphere (optionally
//! Procrustes-aligned to a reference), and the resulting trajectory is
//! encoded as a `T x 3(n-1)` array by one of three strategies:
//!
//! - `CommonReference`: every frame log-mapped at one reference shape,
//! - `FirstFrame`: every frame log-mapped at the trajectory's own first frame,
//! - `ShootingPt`: consecutive-frame shooting vectors parallel-transported
//!   to the reference, with row 0 holding the log of the starting frame so
//!   the origin of the trajectory is retained.
//!
//! A fourth encoding, `PreShape`, skips the tangent projection entirely and
//! flattens the pre-shape coordinates; it is the baseline network input.

use ndarray::{Array1, Array2, Array3, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    exp_map, geodesic_distance, log_map, parallel_transport, procrustes_rotation, to_preshape,
    LandmarkConfig, PreShape,
};

/// One recorded action: `frames` is a `T_raw x n x 3` array.
#[derive(Debug, Clone)]
pub struct SkeletonSequence {
    pub id: String,
    pub label: usize,
    frames: Array3<f64>,
}

impl SkeletonSequence {
    pub fn new(id: String, label: usize, frames: Array3<f64>) -> Result<Self> {
        if frames.shape()[0] < 2 {
            return Err(Error::TooShort {
                frames: frames.shape()[0],
                minimum: 2,
            });
        }
        if frames.shape()[2] != 3 || frames.shape()[1] < 3 {
            return Err(Error::InvalidDimension(format!(
                "expected T x n x 3 frames with n >= 3, got {:?}",
                frames.shape()
            )));
        }
        if frames.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDimension(format!(
                "sequence {id} contains non-finite coordinates"
            )));
        }
        Ok(Self { id, label, frames })
    }

    pub fn num_frames(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn joints(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn frames(&self) -> &Array3<f64> {
        &self.frames
    }

    /// Frame `t` as an `n x 3` landmark configuration.
    pub fn frame(&self, t: usize) -> Array2<f64> {
        self.frames.index_axis(ndarray::Axis(0), t).to_owned()
    }
}

/// Natural cubic spline through `(x_i, y_i)` with zero second derivative at
/// both ends. Knots must be strictly increasing.
struct CubicSpline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    second: Vec<f64>,
}

impl CubicSpline {
    fn new(xs: Vec<f64>, ys: Vec<f64>) -> Self {
        debug_assert_eq!(xs.len(), ys.len());
        debug_assert!(xs.len() >= 2);
        let n = xs.len();
        let mut second = vec![0.0; n];
        let mut aux = vec![0.0; n];
        // Tridiagonal sweep for the interior second derivatives; the natural
        // boundary pins second[0] = second[n-1] = 0.
        for i in 1..n - 1 {
            let sig = (xs[i] - xs[i - 1]) / (xs[i + 1] - xs[i - 1]);
            let p = sig * second[i - 1] + 2.0;
            second[i] = (sig - 1.0) / p;
            let slope_hi = (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i]);
            let slope_lo = (ys[i] - ys[i - 1]) / (xs[i] - xs[i - 1]);
            aux[i] = (6.0 * (slope_hi - slope_lo) / (xs[i + 1] - xs[i - 1]) - sig * aux[i - 1]) / p;
        }
        second[n - 1] = 0.0;
        for i in (1..n - 1).rev() {
            second[i] = second[i] * second[i + 1] + aux[i];
        }
        Self { xs, ys, second }
    }

    fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        // Interval index: largest i with xs[i] <= x, clamped to [0, n-2].
        let mut lo = self.xs.partition_point(|&t| t <= x);
        lo = lo.saturating_sub(1).min(n - 2);
        let hi = lo + 1;
        let h = self.xs[hi] - self.xs[lo];
        let a = (self.xs[hi] - x) / h;
        let b = (x - self.xs[lo]) / h;
        a * self.ys[lo]
            + b * self.ys[hi]
            + ((a * a * a - a) * self.second[lo] + (b * b * b - b) * self.second[hi]) * h * h / 6.0
    }
}

/// Resample every coordinate channel with a natural cubic spline over
/// normalized time [0, 1], evaluated at `target` uniform instants. The first
/// and last frames are knots and are reproduced exactly.
pub fn resample_sequence(seq: &SkeletonSequence, target: usize) -> Result<SkeletonSequence> {
    let t_raw = seq.num_frames();
    if t_raw < 2 {
        return Err(Error::TooShort {
            frames: t_raw,
            minimum: 2,
        });
    }
    if target < 2 {
        return Err(Error::TooShort {
            frames: target,
            minimum: 2,
        });
    }
    let n = seq.joints();
    let knots: Vec<f64> = (0..t_raw).map(|i| i as f64 / (t_raw - 1) as f64).collect();
    let mut out = Array3::zeros((target, n, 3));
    for j in 0..n {
        for c in 0..3 {
            let channel: Vec<f64> = (0..t_raw).map(|t| seq.frames[[t, j, c]]).collect();
            let spline = CubicSpline::new(knots.clone(), channel);
            for (k, slot) in out
                .index_axis_mut(ndarray::Axis(1), j)
                .index_axis_mut(ndarray::Axis(1), c)
                .iter_mut()
                .enumerate()
            {
                *slot = spline.eval(k as f64 / (target - 1) as f64);
            }
        }
    }
    SkeletonSequence::new(seq.id.clone(), seq.label, out)
}

/// A fixed-length sequence of pre-shapes.
#[derive(Debug, Clone)]
pub struct PreShapeTrajectory {
    shapes: Vec<PreShape>,
    aligned: bool,
}

impl PreShapeTrajectory {
    pub fn new(shapes: Vec<PreShape>, aligned: bool) -> Result<Self> {
        if shapes.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(Self { shapes, aligned })
    }

    pub fn len(&self) -> usize {
        self.shapes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shapes.is_empty()
    }

    pub fn aligned(&self) -> bool {
        self.aligned
    }

    pub fn shapes(&self) -> &[PreShape] {
        &self.shapes
    }
}

/// The pre-selected neutral shape anchoring the common tangent space.
#[derive(Debug, Clone)]
pub struct ReferenceShape {
    pub shape: PreShape,
    pub provenance: String,
}

impl ReferenceShape {
    pub fn new(shape: PreShape, provenance: impl Into<String>) -> Self {
        Self {
            shape,
            provenance: provenance.into(),
        }
    }
}

/// How trajectory frames are encoded into network input rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionKind {
    /// Flattened pre-shape coordinates, no tangent projection (baseline).
    PreShape,
    /// Log map at a single shared reference shape.
    CommonReference,
    /// Log map at the trajectory's own first frame.
    FirstFrame,
    /// Consecutive shooting vectors parallel-transported to the reference.
    ShootingPt,
}

impl std::fmt::Display for ProjectionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            ProjectionKind::PreShape => "pre_shape",
            ProjectionKind::CommonReference => "common_reference",
            ProjectionKind::FirstFrame => "first_frame",
            ProjectionKind::ShootingPt => "shooting_pt",
        };
        f.write_str(name)
    }
}

/// A `T x 3(n-1)` encoding of one trajectory. Row layout follows the
/// flattened pre-shape convention: pseudo-joint `j` occupies columns
/// `3j..3j+3`.
#[derive(Debug, Clone)]
pub struct TangentTrajectory {
    pub data: Array2<f64>,
    pub projection: ProjectionKind,
    pub reference: Option<ReferenceShape>,
}

/// Map every frame to the pre-shape sphere; with `align`, rotate each frame
/// onto `reference` by its Procrustes optimum first.
pub fn sequence_to_trajectory(
    seq: &SkeletonSequence,
    reference: &ReferenceShape,
    align: bool,
) -> Result<PreShapeTrajectory> {
    let mut shapes = Vec::with_capacity(seq.num_frames());
    for t in 0..seq.num_frames() {
        let config = LandmarkConfig::new(seq.frame(t))?;
        let pre = to_preshape(&config).map_err(|e| match e {
            Error::ZeroNorm { .. } => Error::ZeroNorm {
                context: format!("sequence {} frame {t}", seq.id),
            },
            other => other,
        })?;
        if align {
            let al = procrustes_rotation(&reference.shape, &pre)?;
            shapes.push(pre.rotate(&al.rotation));
        } else {
            shapes.push(pre);
        }
    }
    PreShapeTrajectory::new(shapes, align)
}

fn antipodal_at(frame: usize, e: Error) -> Error {
    match e {
        Error::Antipodal { context } => Error::Antipodal {
            context: format!("{context}, frame {frame}"),
        },
        other => other,
    }
}

/// Log-map every frame into the tangent space at `reference`.
pub fn project_common(
    traj: &PreShapeTrajectory,
    reference: &ReferenceShape,
) -> Result<TangentTrajectory> {
    let dim = reference.shape.ambient_dim();
    let mut data = Array2::zeros((traj.len(), dim));
    for (i, shape) in traj.shapes().iter().enumerate() {
        let v = log_map(&reference.shape, shape).map_err(|e| antipodal_at(i, e))?;
        data.row_mut(i).assign(v.vec());
    }
    Ok(TangentTrajectory {
        data,
        projection: ProjectionKind::CommonReference,
        reference: Some(reference.clone()),
    })
}

/// Log-map every frame into the tangent space at the trajectory's first
/// frame; row 0 is identically zero.
pub fn project_first_frame(traj: &PreShapeTrajectory) -> Result<TangentTrajectory> {
    let base = traj.shapes()[0].clone();
    let mut data = Array2::zeros((traj.len(), base.ambient_dim()));
    for (i, shape) in traj.shapes().iter().enumerate() {
        let v = log_map(&base, shape).map_err(|e| antipodal_at(i, e))?;
        data.row_mut(i).assign(v.vec());
    }
    Ok(TangentTrajectory {
        data,
        projection: ProjectionKind::FirstFrame,
        reference: Some(ReferenceShape::new(base, "first frame of this trajectory")),
    })
}

/// Encode consecutive-frame shooting vectors, each transported in a single
/// step from its own base directly to `reference`. Row 0 holds
/// `log_ref(traj[0])` so the starting point of the trajectory is retained.
pub fn project_shooting_pt(
    traj: &PreShapeTrajectory,
    reference: &ReferenceShape,
) -> Result<TangentTrajectory> {
    let dim = reference.shape.ambient_dim();
    let mut data = Array2::zeros((traj.len(), dim));
    let origin = log_map(&reference.shape, &traj.shapes()[0]).map_err(|e| antipodal_at(0, e))?;
    data.row_mut(0).assign(origin.vec());
    for i in 1..traj.len() {
        let prev = &traj.shapes()[i - 1];
        let shoot = log_map(prev, &traj.shapes()[i]).map_err(|e| antipodal_at(i, e))?;
        let moved =
            parallel_transport(prev, &reference.shape, &shoot).map_err(|e| antipodal_at(i, e))?;
        data.row_mut(i).assign(moved.vec());
    }
    Ok(TangentTrajectory {
        data,
        projection: ProjectionKind::ShootingPt,
        reference: Some(reference.clone()),
    })
}

/// Flatten pre-shape coordinates with no tangent projection (baseline input).
pub fn encode_preshape(traj: &PreShapeTrajectory) -> TangentTrajectory {
    let dim = traj.shapes()[0].ambient_dim();
    let mut data = Array2::zeros((traj.len(), dim));
    for (i, shape) in traj.shapes().iter().enumerate() {
        data.row_mut(i).assign(&shape.flat());
    }
    TangentTrajectory {
        data,
        projection: ProjectionKind::PreShape,
        reference: None,
    }
}

/// Dispatch on the configured encoding.
pub fn encode_trajectory(
    traj: &PreShapeTrajectory,
    kind: ProjectionKind,
    reference: &ReferenceShape,
) -> Result<TangentTrajectory> {
    match kind {
        ProjectionKind::PreShape => Ok(encode_preshape(traj)),
        ProjectionKind::CommonReference => project_common(traj, reference),
        ProjectionKind::FirstFrame => project_first_frame(traj),
        ProjectionKind::ShootingPt => project_shooting_pt(traj, reference),
    }
}

/// Reshape a flattened row of length 3J into the 3 x J columns-as-joints
/// matrix used by the transformation layer: column j holds pseudo-joint j's
/// (x, y, z).
pub fn row_to_matrix(row: ArrayView1<'_, f64>) -> Result<Array2<f64>> {
    if row.len() % 3 != 0 || row.is_empty() {
        return Err(Error::InvalidDimension(format!(
            "row length {} is not a positive multiple of 3",
            row.len()
        )));
    }
    let joints = row.len() / 3;
    let mut out = Array2::zeros((3, joints));
    for j in 0..joints {
        for c in 0..3 {
            out[[c, j]] = row[3 * j + c];
        }
    }
    Ok(out)
}

/// Inverse of [`row_to_matrix`]; exact roundtrip.
pub fn matrix_to_row(m: &Array2<f64>) -> Result<Array1<f64>> {
    if m.nrows() != 3 {
        return Err(Error::InvalidDimension(format!(
            "expected 3 x J matrix, got {} x {}",
            m.nrows(),
            m.ncols()
        )));
    }
    let joints = m.ncols();
    let mut out = Array1::zeros(3 * joints);
    for j in 0..joints {
        for c in 0..3 {
            out[3 * j + c] = m[[c, j]];
        }
    }
    Ok(out)
}

/// Reconstruct the pre-shape encoded by one `CommonReference` row.
pub fn reconstruct_common_row(reference: &ReferenceShape, row: ArrayView1<'_, f64>) -> Result<PreShape> {
    let v = crate::geometry::TangentVector::new(reference.shape.clone(), row.to_owned())?;
    exp_map(&reference.shape, &v)
}

/// Convenience for tests and invariance checks: geodesic distance between a
/// trajectory frame and a reference.
pub fn frame_distance(traj: &PreShapeTrajectory, i: usize, reference: &ReferenceShape) -> f64 {
    geodesic_distance(&traj.shapes()[i], &reference.shape)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{rotation_from_euler, EulerAngles};
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sequence(rng: &mut impl Rng, id: &str, frames: usize, joints: usize) -> SkeletonSequence {
        let mut data = Array3::zeros((frames, joints, 3));
        for v in data.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        SkeletonSequence::new(id.into(), 0, data).unwrap()
    }

    fn reference_from(seq: &SkeletonSequence) -> ReferenceShape {
        let pre = to_preshape(&LandmarkConfig::new(seq.frame(0)).unwrap()).unwrap();
        ReferenceShape::new(pre, "test")
    }

    #[test]
    fn resample_reproduces_affine_motion() {
        // Every coordinate affine in time; natural cubic splines have zero
        // curvature on affine data and reproduce it.
        let (t_raw, n) = (6, 4);
        let mut data = Array3::zeros((t_raw, n, 3));
        for t in 0..t_raw {
            let time = t as f64 / (t_raw - 1) as f64;
            for j in 0..n {
                for c in 0..3 {
                    data[[t, j, c]] = 0.3 * (j as f64 + 1.0) + (c as f64 - 1.0) * 2.0 * time;
                }
            }
        }
        let seq = SkeletonSequence::new("affine".into(), 0, data).unwrap();
        let out = resample_sequence(&seq, 17).unwrap();
        for k in 0..17 {
            let time = k as f64 / 16.0;
            for j in 0..n {
                for c in 0..3 {
                    let want = 0.3 * (j as f64 + 1.0) + (c as f64 - 1.0) * 2.0 * time;
                    let got = out.frames()[[k, j, c]];
                    assert!((got - want).abs() < 1e-9, "[{k},{j},{c}] {got} vs {want}");
                }
            }
        }
    }

    #[test]
    fn resample_endpoints_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let seq = random_sequence(&mut rng, "s", 9, 5);
        let out = resample_sequence(&seq, 23).unwrap();
        for j in 0..5 {
            for c in 0..3 {
                assert_eq!(out.frames()[[0, j, c]], seq.frames()[[0, j, c]]);
                assert_eq!(out.frames()[[22, j, c]], seq.frames()[[8, j, c]]);
            }
        }
    }

    #[test]
    fn resample_matches_dense_solve_oracle() {
        // One channel follows t^3 over 7 knots; the oracle solves the
        // natural-spline second-derivative system by dense Gaussian
        // elimination and evaluates the same piecewise form.
        let t_raw = 7;
        let knots: Vec<f64> = (0..t_raw).map(|i| i as f64 / (t_raw - 1) as f64).collect();
        let ys: Vec<f64> = knots.iter().map(|t| t * t * t).collect();

        let mut data = Array3::zeros((t_raw, 3, 3));
        for (t, y) in ys.iter().enumerate() {
            data[[t, 0, 0]] = *y;
            // Keep the other joints non-degenerate but simple.
            data[[t, 1, 1]] = 1.0;
            data[[t, 2, 2]] = -1.0;
        }
        let seq = SkeletonSequence::new("cubic".into(), 0, data).unwrap();
        let out = resample_sequence(&seq, 25).unwrap();

        // Dense oracle: unknowns m[1..n-1], natural ends m0 = m6 = 0.
        let n = t_raw;
        let mut a = vec![vec![0.0f64; n]; n];
        let mut b = vec![0.0f64; n];
        a[0][0] = 1.0;
        a[n - 1][n - 1] = 1.0;
        for i in 1..n - 1 {
            let h_lo = knots[i] - knots[i - 1];
            let h_hi = knots[i + 1] - knots[i];
            a[i][i - 1] = h_lo / 6.0;
            a[i][i] = (h_lo + h_hi) / 3.0;
            a[i][i + 1] = h_hi / 6.0;
            b[i] = (ys[i + 1] - ys[i]) / h_hi - (ys[i] - ys[i - 1]) / h_lo;
        }
        // Gaussian elimination with partial pivoting.
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&p, &q| a[p][col].abs().partial_cmp(&a[q][col].abs()).unwrap())
                .unwrap();
            a.swap(col, pivot);
            b.swap(col, pivot);
            for r in col + 1..n {
                let f = a[r][col] / a[col][col];
                for c in col..n {
                    a[r][c] -= f * a[col][c];
                }
                b[r] -= f * b[col];
            }
        }
        let mut m = vec![0.0f64; n];
        for r in (0..n).rev() {
            let mut acc = b[r];
            for c in r + 1..n {
                acc -= a[r][c] * m[c];
            }
            m[r] = acc / a[r][r];
        }
        let eval = |x: f64| {
            let mut lo = 0;
            while lo + 2 < n && knots[lo + 1] <= x {
                lo += 1;
            }
            let h = knots[lo + 1] - knots[lo];
            let aa = (knots[lo + 1] - x) / h;
            let bb = (x - knots[lo]) / h;
            aa * ys[lo]
                + bb * ys[lo + 1]
                + ((aa * aa * aa - aa) * m[lo] + (bb * bb * bb - bb) * m[lo + 1]) * h * h / 6.0
        };
        for k in 0..25 {
            let x = k as f64 / 24.0;
            let got = out.frames()[[k, 0, 0]];
            let want = eval(x);
            assert!((got - want).abs() < 1e-9, "at {x}: {got} vs oracle {want}");
        }
    }

    #[test]
    fn resample_identity_when_counts_match() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let seq = random_sequence(&mut rng, "s", 12, 4);
        let out = resample_sequence(&seq, 12).unwrap();
        for (a, b) in out.frames().iter().zip(seq.frames().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sequence_needs_two_frames() {
        let data = Array3::zeros((1, 4, 3));
        assert!(matches!(
            SkeletonSequence::new("x".into(), 0, data),
            Err(Error::TooShort { .. })
        ));
    }

    #[test]
    fn constant_sequence_gives_constant_trajectory() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let mut data = Array3::zeros((5, 4, 3));
        let frame: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for t in 0..5 {
            for j in 0..4 {
                for c in 0..3 {
                    data[[t, j, c]] = frame[3 * j + c];
                }
            }
        }
        let seq = SkeletonSequence::new("const".into(), 0, data).unwrap();
        let r = reference_from(&seq);
        let traj = sequence_to_trajectory(&seq, &r, false).unwrap();
        for i in 1..traj.len() {
            for (a, b) in traj.shapes()[i].flat().iter().zip(traj.shapes()[0].flat().iter()) {
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn degenerate_frame_reports_index() {
        let mut data = Array3::zeros((3, 4, 3));
        for j in 0..4 {
            for c in 0..3 {
                data[[0, j, c]] = (j * 3 + c) as f64;
                data[[2, j, c]] = (j * 3 + c) as f64 * 0.5 + 1.0;
                data[[1, j, c]] = 7.0; // every landmark identical in frame 1
            }
        }
        let seq = SkeletonSequence::new("degen".into(), 0, data).unwrap();
        let pre = to_preshape(&LandmarkConfig::new(seq.frame(0)).unwrap()).unwrap();
        let r = ReferenceShape::new(pre, "test");
        match sequence_to_trajectory(&seq, &r, false) {
            Err(Error::ZeroNorm { context }) => {
                assert!(context.contains("frame 1"), "context: {context}");
            }
            other => panic!("expected zero-norm error, got {other:?}"),
        }
    }

    #[test]
    fn alignment_never_increases_reference_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let seq = random_sequence(&mut rng, "s", 8, 6);
        let r = reference_from(&seq);
        let plain = sequence_to_trajectory(&seq, &r, false).unwrap();
        let aligned = sequence_to_trajectory(&seq, &r, true).unwrap();
        for i in 0..plain.len() {
            assert!(
                frame_distance(&aligned, i, &r) <= frame_distance(&plain, i, &r) + 1e-12,
                "frame {i}"
            );
        }
    }

    #[test]
    fn alignment_undoes_a_planted_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let seq = random_sequence(&mut rng, "s", 6, 6);
        let q = rotation_from_euler(&EulerAngles::new(0.4, -1.1, 2.0));
        let mut rotated = seq.frames().clone();
        for t in 0..6 {
            for j in 0..6 {
                let v = nalgebra::Vector3::new(
                    rotated[[t, j, 0]],
                    rotated[[t, j, 1]],
                    rotated[[t, j, 2]],
                );
                let w = q.matrix() * v;
                rotated[[t, j, 0]] = w.x;
                rotated[[t, j, 1]] = w.y;
                rotated[[t, j, 2]] = w.z;
            }
        }
        let rot_seq = SkeletonSequence::new("rot".into(), 0, rotated).unwrap();
        let r = reference_from(&seq);

        let plain_a = sequence_to_trajectory(&seq, &r, false).unwrap();
        let plain_b = sequence_to_trajectory(&rot_seq, &r, false).unwrap();
        let mut differ = 0.0f64;
        for i in 0..6 {
            for (a, b) in plain_a.shapes()[i].flat().iter().zip(plain_b.shapes()[i].flat().iter()) {
                differ = differ.max((a - b).abs());
            }
        }
        assert!(differ > 1e-3, "rotation should move unaligned pre-shapes");

        let al_a = sequence_to_trajectory(&seq, &r, true).unwrap();
        let al_b = sequence_to_trajectory(&rot_seq, &r, true).unwrap();
        for i in 0..6 {
            for (a, b) in al_a.shapes()[i].flat().iter().zip(al_b.shapes()[i].flat().iter()) {
                assert!((a - b).abs() < 1e-9, "frame {i}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn common_projection_zero_row_at_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        let seq = random_sequence(&mut rng, "s", 5, 5);
        let r = reference_from(&seq);
        let traj = sequence_to_trajectory(&seq, &r, false).unwrap();
        let tt = project_common(&traj, &r).unwrap();
        // Frame 0 is the reference itself.
        for v in tt.data.row(0) {
            assert!(v.abs() < 1e-12);
        }
        // Row norms equal geodesic distances.
        for i in 0..traj.len() {
            let norm = tt.data.row(i).dot(&tt.data.row(i)).sqrt();
            let d = frame_distance(&traj, i, &r);
            assert!((norm - d).abs() < 1e-10, "row {i}: {norm} vs {d}");
        }
    }

    #[test]
    fn common_projection_matches_per_frame_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let seq = random_sequence(&mut rng, "s", 6, 5);
        let r = reference_from(&seq);
        let traj = sequence_to_trajectory(&seq, &r, true).unwrap();
        let tt = project_common(&traj, &r).unwrap();
        for i in 0..traj.len() {
            let rf = r.shape.flat();
            let sf = traj.shapes()[i].flat();
            let c: f64 = rf.iter().zip(sf.iter()).map(|(a, b)| a * b).sum();
            let theta = c.clamp(-1.0, 1.0).acos();
            let scale = if theta < 1e-7 { 1.0 } else { theta / theta.sin() };
            for (k, got) in tt.data.row(i).iter().enumerate() {
                let want = scale * (sf[k] - c * rf[k]);
                assert!((got - want).abs() < 1e-12, "row {i} col {k}");
            }
        }
    }

    #[test]
    fn common_projection_reconstructs_trajectory() {
        let mut rng = ChaCha8Rng::seed_from_u64(38);
        let seq = random_sequence(&mut rng, "s", 7, 6);
        let r = reference_from(&seq);
        let traj = sequence_to_trajectory(&seq, &r, true).unwrap();
        let tt = project_common(&traj, &r).unwrap();
        for i in 0..traj.len() {
            let back = reconstruct_common_row(&r, tt.data.row(i)).unwrap();
            for (a, b) in back.flat().iter().zip(traj.shapes()[i].flat().iter()) {
                assert!((a - b).abs() < 1e-9, "frame {i}");
            }
        }
    }

    #[test]
    fn first_frame_projection_basics() {
        let mut rng = ChaCha8Rng::seed_from_u64(39);
        let seq = random_sequence(&mut rng, "s", 6, 5);
        let r = reference_from(&seq);
        let traj = sequence_to_trajectory(&seq, &r, false).unwrap();
        let tt = project_first_frame(&traj).unwrap();
        for v in tt.data.row(0) {
            assert!(v.abs() < 1e-12);
        }
        // Oracle at base traj[0].
        let base = &traj.shapes()[0];
        for i in 1..traj.len() {
            let v = log_map(base, &traj.shapes()[i]).unwrap();
            for (a, b) in tt.data.row(i).iter().zip(v.vec().iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shooting_projection_constant_trajectory_is_zero_after_origin() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let mut data = Array3::zeros((5, 5, 3));
        let frame: Vec<f64> = (0..15).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for t in 0..5 {
            for j in 0..5 {
                for c in 0..3 {
                    data[[t, j, c]] = frame[3 * j + c];
                }
            }
        }
        let seq = SkeletonSequence::new("const".into(), 0, data).unwrap();
        // Reference distinct from the constant frame so row 0 is non-zero.
        let other = random_sequence(&mut rng, "o", 2, 5);
        let r = reference_from(&other);
        let traj = sequence_to_trajectory(&seq, &r, false).unwrap();
        let tt = project_shooting_pt(&traj, &r).unwrap();
        let row0_norm = tt.data.row(0).dot(&tt.data.row(0)).sqrt();
        assert!(row0_norm > 1e-3, "origin row should be retained");
        for i in 1..5 {
            for v in tt.data.row(i) {
                assert!(v.abs() < 1e-12, "row {i}");
            }
        }
    }

    #[test]
    fn shooting_projection_preserves_step_norms() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let seq = random_sequence(&mut rng, "s", 8, 6);
        let r = reference_from(&seq);
        let traj = sequence_to_trajectory(&seq, &r, true).unwrap();
        let tt = project_shooting_pt(&traj, &r).unwrap();
        for i in 1..traj.len() {
            let shoot = log_map(&traj.shapes()[i - 1], &traj.shapes()[i]).unwrap();
            let row_norm = tt.data.row(i).dot(&tt.data.row(i)).sqrt();
            assert!(
                (row_norm - shoot.norm()).abs() < 1e-9,
                "row {i}: {row_norm} vs {}",
                shoot.norm()
            );
        }
    }

    #[test]
    fn shooting_projection_two_frame_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let seq = random_sequence(&mut rng, "s", 2, 5);
        let other = random_sequence(&mut rng, "o", 2, 5);
        let r = reference_from(&other);
        let traj = sequence_to_trajectory(&seq, &r, false).unwrap();
        let tt = project_shooting_pt(&traj, &r).unwrap();

        // Independent elementwise evaluation: own log maps, own theta^2
        // transport.
        let flat = |p: &PreShape| p.flat().to_owned();
        let logm = |x: &Array1<f64>, y: &Array1<f64>| {
            let c: f64 = x.dot(y);
            let theta = c.clamp(-1.0, 1.0).acos();
            let s = theta / theta.sin();
            let mut out = Array1::<f64>::zeros(x.len());
            for k in 0..x.len() {
                out[k] = s * (y[k] - c * x[k]);
            }
            (out, theta)
        };
        let a = flat(&traj.shapes()[0]);
        let b = flat(&traj.shapes()[1]);
        let rf = flat(&r.shape);
        let (shoot, _) = logm(&a, &b);
        let (log_ar, theta) = logm(&a, &rf);
        let (log_ra, _) = logm(&rf, &a);
        let coeff = log_ar.dot(&shoot) / (theta * theta);
        for k in 0..a.len() {
            let want = shoot[k] - coeff * (log_ra[k] + log_ar[k]);
            let got = tt.data[[1, k]];
            assert!((got - want).abs() < 1e-10, "col {k}: {got} vs {want}");
        }
    }

    #[test]
    fn row_matrix_layout_and_roundtrip() {
        let row = Array1::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let m = row_to_matrix(row.view()).unwrap();
        let expected = ndarray::array![[1.0, 4.0], [2.0, 5.0], [3.0, 6.0]];
        assert_eq!(m, expected);
        let back = matrix_to_row(&m).unwrap();
        assert_eq!(back, row);

        let zero = Array1::zeros(9);
        let zm = row_to_matrix(zero.view()).unwrap();
        assert!(zm.iter().all(|v| *v == 0.0));

        assert!(row_to_matrix(Array1::zeros(7).view()).is_err());
    }

    #[test]
    fn projections_invariant_to_translation_and_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let seq = random_sequence(&mut rng, "s", 6, 6);
        let mut moved = seq.frames().clone();
        for v in moved.iter_mut() {
            *v *= 3.7;
        }
        for t in 0..6 {
            for j in 0..6 {
                moved[[t, j, 0]] += 11.0;
                moved[[t, j, 1]] -= 4.0;
                moved[[t, j, 2]] += 0.5;
            }
        }
        let moved_seq = SkeletonSequence::new("m".into(), 0, moved).unwrap();
        let r = reference_from(&seq);
        for kind in [
            ProjectionKind::PreShape,
            ProjectionKind::CommonReference,
            ProjectionKind::FirstFrame,
            ProjectionKind::ShootingPt,
        ] {
            let ta = encode_trajectory(
                &sequence_to_trajectory(&seq, &r, true).unwrap(),
                kind,
                &r,
            )
            .unwrap();
            let tb = encode_trajectory(
                &sequence_to_trajectory(&moved_seq, &r, true).unwrap(),
                kind,
                &r,
            )
            .unwrap();
            for (a, b) in ta.data.iter().zip(tb.data.iter()) {
                assert!((a - b).abs() < 1e-9, "{kind}: {a} vs {b}");
            }
        }
    }
}
