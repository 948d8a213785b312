//! The learnable rigid / non-rigid transformation layer.
//!
//! Each input row is a flattened frame, reinterpreted as a 3 x J matrix of
//! pseudo-joint columns. The rigid variants apply one 3x3 kernel per frame
//! position to the whole skeleton; the non-rigid variants apply one kernel
//! per frame position and joint. Kernels are shared across every sequence
//! in a batch.
//!
//! Matrix variants update the kernel entries directly, so after training
//! they may leave SO(3); that is their documented behavior. Angle variants
//! store Euler angles and materialize rotations in every forward pass, so
//! their effective kernels are always proper rotations.

use ndarray::{Array2, Array3, Array4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{rotation_euler_jacobian, rotation_from_euler, EulerAngles};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformVariant {
    RigidMatrix,
    RigidAngle,
    NonRigidMatrix,
    NonRigidAngle,
}

impl TransformVariant {
    pub const ALL: [TransformVariant; 4] = [
        TransformVariant::RigidMatrix,
        TransformVariant::RigidAngle,
        TransformVariant::NonRigidMatrix,
        TransformVariant::NonRigidAngle,
    ];

    pub fn is_angle_based(self) -> bool {
        matches!(self, TransformVariant::RigidAngle | TransformVariant::NonRigidAngle)
    }

    pub fn is_rigid(self) -> bool {
        matches!(self, TransformVariant::RigidMatrix | TransformVariant::RigidAngle)
    }
}

impl std::fmt::Display for TransformVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            TransformVariant::RigidMatrix => "rigid_matrix",
            TransformVariant::RigidAngle => "rigid_angle",
            TransformVariant::NonRigidMatrix => "non_rigid_matrix",
            TransformVariant::NonRigidAngle => "non_rigid_angle",
        };
        f.write_str(name)
    }
}

/// Variant-shaped parameter storage. Also used for the gradients, which
/// mirror the parameter layout exactly.
#[derive(Debug, Clone)]
pub enum TransformParams {
    /// `frames x 3 x 3` free matrices.
    RigidMatrix(Array3<f64>),
    /// `frames x 3` Euler angles.
    RigidAngle(Array2<f64>),
    /// `frames x joints x 3 x 3` free matrices.
    NonRigidMatrix(Array4<f64>),
    /// `frames x joints x 3` Euler angles.
    NonRigidAngle(Array3<f64>),
}

impl TransformParams {
    pub fn flat(&self) -> &[f64] {
        match self {
            TransformParams::RigidMatrix(a) => a.as_slice().expect("contiguous"),
            TransformParams::RigidAngle(a) => a.as_slice().expect("contiguous"),
            TransformParams::NonRigidMatrix(a) => a.as_slice().expect("contiguous"),
            TransformParams::NonRigidAngle(a) => a.as_slice().expect("contiguous"),
        }
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        match self {
            TransformParams::RigidMatrix(a) => a.as_slice_mut().expect("contiguous"),
            TransformParams::RigidAngle(a) => a.as_slice_mut().expect("contiguous"),
            TransformParams::NonRigidMatrix(a) => a.as_slice_mut().expect("contiguous"),
            TransformParams::NonRigidAngle(a) => a.as_slice_mut().expect("contiguous"),
        }
    }

    fn zeros_like(&self) -> TransformParams {
        match self {
            TransformParams::RigidMatrix(a) => TransformParams::RigidMatrix(Array3::zeros(a.raw_dim())),
            TransformParams::RigidAngle(a) => TransformParams::RigidAngle(Array2::zeros(a.raw_dim())),
            TransformParams::NonRigidMatrix(a) => {
                TransformParams::NonRigidMatrix(Array4::zeros(a.raw_dim()))
            }
            TransformParams::NonRigidAngle(a) => {
                TransformParams::NonRigidAngle(Array3::zeros(a.raw_dim()))
            }
        }
    }
}

/// Learnable per-frame (and optionally per-joint) kernels applied to the
/// reshaped tangent rows.
#[derive(Debug, Clone)]
pub struct TransformLayer {
    variant: TransformVariant,
    frames: usize,
    joints: usize,
    params: TransformParams,
}

type Kernel = [[f64; 3]; 3];

fn kernel_from_matrix3(m: &nalgebra::Matrix3<f64>) -> Kernel {
    let mut k = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            k[r][c] = m[(r, c)];
        }
    }
    k
}

impl TransformLayer {
    /// Identity initialization: matrix variants start at exact identity
    /// kernels, angle variants at exact zeros, so a fresh layer is a no-op.
    pub fn identity(variant: TransformVariant, frames: usize, joints: usize) -> Result<Self> {
        if frames == 0 || joints == 0 {
            return Err(Error::InvalidDimension(
                "transform layer needs at least one frame and joint".into(),
            ));
        }
        let params = match variant {
            TransformVariant::RigidMatrix => {
                let mut a = Array3::zeros((frames, 3, 3));
                for i in 0..frames {
                    for d in 0..3 {
                        a[[i, d, d]] = 1.0;
                    }
                }
                TransformParams::RigidMatrix(a)
            }
            TransformVariant::RigidAngle => TransformParams::RigidAngle(Array2::zeros((frames, 3))),
            TransformVariant::NonRigidMatrix => {
                let mut a = Array4::zeros((frames, joints, 3, 3));
                for i in 0..frames {
                    for j in 0..joints {
                        for d in 0..3 {
                            a[[i, j, d, d]] = 1.0;
                        }
                    }
                }
                TransformParams::NonRigidMatrix(a)
            }
            TransformVariant::NonRigidAngle => {
                TransformParams::NonRigidAngle(Array3::zeros((frames, joints, 3)))
            }
        };
        Ok(Self {
            variant,
            frames,
            joints,
            params,
        })
    }

    pub fn from_params(
        variant: TransformVariant,
        frames: usize,
        joints: usize,
        params: TransformParams,
    ) -> Result<Self> {
        let ok = match (&params, variant) {
            (TransformParams::RigidMatrix(a), TransformVariant::RigidMatrix) => {
                a.dim() == (frames, 3, 3)
            }
            (TransformParams::RigidAngle(a), TransformVariant::RigidAngle) => {
                a.dim() == (frames, 3)
            }
            (TransformParams::NonRigidMatrix(a), TransformVariant::NonRigidMatrix) => {
                a.dim() == (frames, joints, 3, 3)
            }
            (TransformParams::NonRigidAngle(a), TransformVariant::NonRigidAngle) => {
                a.dim() == (frames, joints, 3)
            }
            _ => false,
        };
        if !ok {
            return Err(Error::InvalidDimension(
                "transform parameters do not match the declared variant".into(),
            ));
        }
        Ok(Self {
            variant,
            frames,
            joints,
            params,
        })
    }

    pub fn variant(&self) -> TransformVariant {
        self.variant
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn params(&self) -> &TransformParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut TransformParams {
        &mut self.params
    }

    /// The effective 3x3 kernel for frame `i` (rigid) or frame `i`, joint
    /// `j` (non-rigid). Angle variants materialize a rotation from their
    /// Euler angles; matrix variants read the stored entries.
    pub fn kernel(&self, i: usize, j: usize) -> Kernel {
        match &self.params {
            TransformParams::RigidMatrix(a) => {
                let mut k = [[0.0; 3]; 3];
                for r in 0..3 {
                    for c in 0..3 {
                        k[r][c] = a[[i, r, c]];
                    }
                }
                k
            }
            TransformParams::RigidAngle(a) => {
                let rot = rotation_from_euler(&EulerAngles::new(a[[i, 0]], a[[i, 1]], a[[i, 2]]));
                kernel_from_matrix3(rot.matrix())
            }
            TransformParams::NonRigidMatrix(a) => {
                let mut k = [[0.0; 3]; 3];
                for r in 0..3 {
                    for c in 0..3 {
                        k[r][c] = a[[i, j, r, c]];
                    }
                }
                k
            }
            TransformParams::NonRigidAngle(a) => {
                let rot = rotation_from_euler(&EulerAngles::new(
                    a[[i, j, 0]],
                    a[[i, j, 1]],
                    a[[i, j, 2]],
                ));
                kernel_from_matrix3(rot.matrix())
            }
        }
    }

    fn check_shape(&self, x: &Array3<f64>) -> Result<()> {
        let (_, frames, features) = x.dim();
        if frames != self.frames || features != 3 * self.joints {
            return Err(Error::InvalidDimension(format!(
                "transform expected batch x {} x {}, got batch x {frames} x {features}",
                self.frames,
                3 * self.joints
            )));
        }
        Ok(())
    }

    /// Apply the per-frame kernels. Each row is treated as J column vectors
    /// in R^3; rigid variants use one kernel for all columns of a frame.
    pub fn forward(&self, x: &Array3<f64>) -> Result<Array3<f64>> {
        self.check_shape(x)?;
        let (batch, frames, _) = x.dim();
        let mut out = Array3::zeros(x.raw_dim());
        for i in 0..frames {
            for j in 0..self.joints {
                let k = if self.variant.is_rigid() && j > 0 {
                    // Same kernel for every joint of a rigid frame.
                    self.kernel(i, 0)
                } else {
                    self.kernel(i, j)
                };
                for b in 0..batch {
                    let col = [x[[b, i, 3 * j]], x[[b, i, 3 * j + 1]], x[[b, i, 3 * j + 2]]];
                    for r in 0..3 {
                        out[[b, i, 3 * j + r]] =
                            k[r][0] * col[0] + k[r][1] * col[1] + k[r][2] * col[2];
                    }
                }
            }
        }
        Ok(out)
    }

    /// Input gradient is `K^T g` per joint; kernel gradients accumulate the
    /// outer products `g q^T` over the batch (and over joints for the rigid
    /// variants). Angle gradients chain those through the analytic Euler
    /// jacobian.
    pub fn backward(
        &self,
        x: &Array3<f64>,
        upstream: &Array3<f64>,
    ) -> Result<(Array3<f64>, TransformParams)> {
        self.check_shape(x)?;
        if upstream.dim() != x.dim() {
            return Err(Error::InvalidDimension(
                "transform upstream gradient shape mismatch".into(),
            ));
        }
        let (batch, frames, _) = x.dim();
        let mut d_input = Array3::zeros(x.raw_dim());
        let mut grads = self.params.zeros_like();

        for i in 0..frames {
            // dL/dK per joint of this frame (rigid folds all joints in).
            let mut kernel_grads = vec![[[0.0f64; 3]; 3]; self.joints];
            for j in 0..self.joints {
                let k = if self.variant.is_rigid() {
                    self.kernel(i, 0)
                } else {
                    self.kernel(i, j)
                };
                let kg = &mut kernel_grads[j];
                for b in 0..batch {
                    let col = [x[[b, i, 3 * j]], x[[b, i, 3 * j + 1]], x[[b, i, 3 * j + 2]]];
                    let g = [
                        upstream[[b, i, 3 * j]],
                        upstream[[b, i, 3 * j + 1]],
                        upstream[[b, i, 3 * j + 2]],
                    ];
                    for r in 0..3 {
                        for c in 0..3 {
                            kg[r][c] += g[r] * col[c];
                            d_input[[b, i, 3 * j + c]] += k[r][c] * g[r];
                        }
                    }
                }
            }
            match (&mut grads, &self.params) {
                (TransformParams::RigidMatrix(out), _) => {
                    for kg in &kernel_grads {
                        for r in 0..3 {
                            for c in 0..3 {
                                out[[i, r, c]] += kg[r][c];
                            }
                        }
                    }
                }
                (TransformParams::NonRigidMatrix(out), _) => {
                    for (j, kg) in kernel_grads.iter().enumerate() {
                        for r in 0..3 {
                            for c in 0..3 {
                                out[[i, j, r, c]] = kg[r][c];
                            }
                        }
                    }
                }
                (TransformParams::RigidAngle(out), TransformParams::RigidAngle(angles)) => {
                    let jac = rotation_euler_jacobian(&EulerAngles::new(
                        angles[[i, 0]],
                        angles[[i, 1]],
                        angles[[i, 2]],
                    ));
                    let mut total = [[0.0f64; 3]; 3];
                    for kg in &kernel_grads {
                        for r in 0..3 {
                            for c in 0..3 {
                                total[r][c] += kg[r][c];
                            }
                        }
                    }
                    for (axis, dj) in jac.iter().enumerate() {
                        let mut acc = 0.0;
                        for r in 0..3 {
                            for c in 0..3 {
                                acc += total[r][c] * dj[(r, c)];
                            }
                        }
                        out[[i, axis]] = acc;
                    }
                }
                (TransformParams::NonRigidAngle(out), TransformParams::NonRigidAngle(angles)) => {
                    for (j, kg) in kernel_grads.iter().enumerate() {
                        let jac = rotation_euler_jacobian(&EulerAngles::new(
                            angles[[i, j, 0]],
                            angles[[i, j, 1]],
                            angles[[i, j, 2]],
                        ));
                        for (axis, dj) in jac.iter().enumerate() {
                            let mut acc = 0.0;
                            for r in 0..3 {
                                for c in 0..3 {
                                    acc += kg[r][c] * dj[(r, c)];
                                }
                            }
                            out[[i, j, axis]] = acc;
                        }
                    }
                }
                _ => unreachable!("gradient container mirrors parameter variant"),
            }
        }
        Ok((d_input, grads))
    }

    /// Materialized kernels for constraint checks: one per frame for rigid
    /// variants, one per frame and joint otherwise.
    pub fn materialized_kernels(&self) -> Vec<Kernel> {
        let mut out = Vec::new();
        for i in 0..self.frames {
            if self.variant.is_rigid() {
                out.push(self.kernel(i, 0));
            } else {
                for j in 0..self.joints {
                    out.push(self.kernel(i, j));
                }
            }
        }
        out
    }
}
