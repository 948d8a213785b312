//! Self-check property suites and the finite-difference machinery behind
//! the gradient checks.
//!
//! Everything here is runnable from the `check` CLI subcommand; the same
//! helpers back the unit and acceptance tests. The numeric gradient only
//! ever calls forward passes, so it stays independent of every analytic
//! backward path it verifies.

use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::geometry::{
    exp_map, geodesic_distance, helmert_submatrix, log_map, parallel_transport,
    procrustes_rotation, rotation_euler_jacobian, rotation_from_euler, EulerAngles, PreShape,
    TangentVector,
};
use crate::layers::{
    maxpool_forward, softmax_cross_entropy, Conv1DLayer, DenseLayer, LstmLayer, TransformLayer,
    TransformVariant,
};
use crate::model::{build_model, ConvBlockConfig, KShapeNetConfig, TransformChoice};
use crate::trajectory::{
    project_common, reconstruct_common_row, sequence_to_trajectory, ReferenceShape,
    SkeletonSequence,
};

/// Central-difference gradient of a scalar function of a flat parameter
/// vector: `(f(p+h) - f(p-h)) / 2h` per coordinate.
pub fn numeric_gradient(f: &dyn Fn(&[f64]) -> f64, params: &[f64], step: f64) -> Vec<f64> {
    let mut work = params.to_vec();
    let mut grad = vec![0.0; params.len()];
    for k in 0..params.len() {
        let saved = work[k];
        work[k] = saved + step;
        let plus = f(&work);
        work[k] = saved - step;
        let minus = f(&work);
        work[k] = saved;
        grad[k] = (plus - minus) / (2.0 * step);
    }
    grad
}

/// Worst-case elementwise relative error, `|a - n| / max(|a|, |n|, 1)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric.iter())
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1.0))
        .fold(0.0, f64::max)
}

/// Outcome of one named property check.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub max_error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl CheckResult {
    pub fn new(name: impl Into<String>, max_error: f64, tolerance: f64) -> Self {
        let pass = max_error.is_finite() && max_error < tolerance;
        Self {
            name: name.into(),
            max_error,
            tolerance,
            pass,
        }
    }
}

impl std::fmt::Display for CheckResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "[{}] {:<44} max error {:>12.3e}  (tolerance {:.1e})",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.max_error,
            self.tolerance
        )
    }
}

pub fn all_pass(results: &[CheckResult]) -> bool {
    results.iter().all(|r| r.pass)
}

fn random_preshape(rng: &mut impl Rng, joints: usize) -> PreShape {
    loop {
        let mut coords = Array2::zeros((joints - 1, 3));
        for v in coords.iter_mut() {
            *v = rng.gen_range(-1.0_f64..1.0);
        }
        let norm = coords.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-3 {
            return PreShape::new(coords / norm).expect("normalized coordinates");
        }
    }
}

fn random_tangent(rng: &mut impl Rng, base: &PreShape, scale: f64) -> TangentVector {
    let mut vec = Array1::zeros(base.ambient_dim());
    for v in vec.iter_mut() {
        *v = rng.gen_range(-1.0_f64..1.0);
    }
    let dot = base.flat().dot(&vec);
    for (v, b) in vec.iter_mut().zip(base.flat().iter()) {
        *v -= dot * b;
    }
    let norm = vec.dot(&vec).sqrt();
    TangentVector::new(base.clone(), vec * (scale / norm)).expect("projected vector is tangent")
}

fn random_rotation(rng: &mut impl Rng) -> crate::geometry::Rotation3 {
    rotation_from_euler(&EulerAngles::new(
        rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
        rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
        rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
    ))
}

const BENCH_JOINTS: usize = 25;

/// Helmert rows: orthonormality and zero row sums for n = 2..=40.
pub fn check_helmert() -> CheckResult {
    let mut worst = 0.0f64;
    for n in 2..=40 {
        let h = helmert_submatrix(n).expect("n >= 2");
        let rows = h.rows();
        for i in 0..n - 1 {
            worst = worst.max(rows.row(i).sum().abs());
            for j in 0..n - 1 {
                let dot = rows.row(i).dot(&rows.row(j));
                let want = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - want).abs());
            }
        }
    }
    CheckResult::new("helmert orthonormality + zero row sums", worst, 1e-12)
}

/// exp(log) roundtrip over random pre-shape pairs.
pub fn check_exp_log_roundtrip(trials: usize, seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let x = random_preshape(&mut rng, BENCH_JOINTS);
        let y = random_preshape(&mut rng, BENCH_JOINTS);
        let v = log_map(&x, &y).expect("random pairs are not antipodal");
        let back = exp_map(&x, &v).expect("log output is tangent");
        for (a, b) in back.flat().iter().zip(y.flat().iter()) {
            worst = worst.max((a - b).abs());
        }
    }
    CheckResult::new("exp(log) roundtrip", worst, 1e-10)
}

/// Log-map outputs are orthogonal to their base point.
pub fn check_log_tangency(trials: usize, seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let x = random_preshape(&mut rng, BENCH_JOINTS);
        let y = random_preshape(&mut rng, BENCH_JOINTS);
        let v = log_map(&x, &y).expect("random pairs are not antipodal");
        worst = worst.max(x.flat().dot(v.vec()).abs());
    }
    CheckResult::new("log-map tangency", worst, 1e-10)
}

/// Generic transport isometry harness; the production check passes the real
/// transport, tests can inject a broken one to prove the check bites.
pub fn transport_isometry_with<F>(transport: F, trials: usize, seed: u64) -> CheckResult
where
    F: Fn(&PreShape, &PreShape, &TangentVector) -> Result<TangentVector>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let x = random_preshape(&mut rng, BENCH_JOINTS);
        let y = random_preshape(&mut rng, BENCH_JOINTS);
        let (su, sw) = (rng.gen_range(0.1..2.0), rng.gen_range(0.1..2.0));
        let u = random_tangent(&mut rng, &x, su);
        let w = random_tangent(&mut rng, &x, sw);
        let tu = transport(&x, &y, &u).expect("non-antipodal transport");
        let tw = transport(&x, &y, &w).expect("non-antipodal transport");
        worst = worst.max((tu.vec().dot(tw.vec()) - u.vec().dot(w.vec())).abs());
    }
    CheckResult::new("parallel transport isometry", worst, 1e-9)
}

pub fn check_transport_isometry(trials: usize, seed: u64) -> CheckResult {
    transport_isometry_with(parallel_transport, trials, seed)
}

/// Transported vectors are tangent at the target point.
pub fn check_transport_tangency(trials: usize, seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(3));
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let x = random_preshape(&mut rng, BENCH_JOINTS);
        let y = random_preshape(&mut rng, BENCH_JOINTS);
        let scale = rng.gen_range(0.1..2.0);
        let u = random_tangent(&mut rng, &x, scale);
        let tu = parallel_transport(&x, &y, &u).expect("non-antipodal transport");
        worst = worst.max(y.flat().dot(tu.vec()).abs());
    }
    CheckResult::new("parallel transport target tangency", worst, 1e-9)
}

/// Planted-rotation recovery: entrywise error of the recovered rotation.
pub fn check_procrustes_recovery(trials: usize, seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(4));
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let x = random_preshape(&mut rng, BENCH_JOINTS);
        let r = random_rotation(&mut rng);
        let y = x.rotate(&r.inverse());
        let al = procrustes_rotation(&x, &y).expect("matching dimensions");
        worst = worst.max((al.rotation.matrix() - r.matrix()).abs().max());
    }
    CheckResult::new("procrustes planted-rotation recovery", worst, 1e-8)
}

/// Post-alignment geodesic distance for planted rotations.
pub fn check_procrustes_alignment_distance(trials: usize, seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(4));
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let x = random_preshape(&mut rng, BENCH_JOINTS);
        let r = random_rotation(&mut rng);
        let y = x.rotate(&r.inverse());
        let al = procrustes_rotation(&x, &y).expect("matching dimensions");
        worst = worst.max(geodesic_distance(&x, &y.rotate(&al.rotation)));
    }
    CheckResult::new("procrustes post-alignment distance", worst, 1e-9)
}

/// Euler-composed matrices stay in SO(3).
pub fn check_euler_so3(trials: usize, seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(5));
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let r = random_rotation(&mut rng);
        let gram = r.matrix().transpose() * r.matrix();
        worst = worst.max((gram - nalgebra::Matrix3::identity()).abs().max());
        worst = worst.max((r.matrix().determinant() - 1.0).abs());
    }
    CheckResult::new("euler rotation orthonormality + det", worst, 1e-12)
}

/// Analytic Euler jacobian against central finite differences.
pub fn check_euler_jacobian(trials: usize, seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(6));
    let h = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..trials {
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
            let fd =
                (rotation_from_euler(&plus).matrix() - rotation_from_euler(&minus).matrix())
                    / (2.0 * h);
            for r in 0..3 {
                for c in 0..3 {
                    let denom = j[(r, c)].abs().max(fd[(r, c)].abs()).max(1.0);
                    worst = worst.max((j[(r, c)] - fd[(r, c)]).abs() / denom);
                }
            }
        }
    }
    CheckResult::new("euler jacobian vs finite differences", worst, 1e-6)
}

/// All geometry invariants at the acceptance sample sizes.
pub fn geometry_suite(seed: u64) -> Vec<CheckResult> {
    vec![
        check_helmert(),
        check_exp_log_roundtrip(1000, seed),
        check_log_tangency(1000, seed),
        check_transport_isometry(1000, seed),
        check_transport_tangency(1000, seed),
        check_procrustes_recovery(500, seed),
        check_procrustes_alignment_distance(500, seed),
        check_euler_so3(10_000, seed),
        check_euler_jacobian(1000, seed),
    ]
}

fn random_array3(rng: &mut impl Rng, dim: (usize, usize, usize)) -> Array3<f64> {
    let mut a = Array3::zeros(dim);
    for v in a.iter_mut() {
        *v = rng.gen_range(-1.0_f64..1.0);
    }
    a
}

/// Parameter + input gradient check for one transform variant.
pub fn check_transform_gradients(variant: TransformVariant, seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(7));
    let (batch, frames, joints) = (2, 3, 2);
    let x = random_array3(&mut rng, (batch, frames, 3 * joints));
    let mut layer = TransformLayer::identity(variant, frames, joints).expect("valid shape");
    for v in layer.params_mut().flat_mut() {
        *v = rng.gen_range(-0.9..0.9);
    }
    let out = layer.forward(&x).expect("shapes match");
    let (dx, dp) = layer.backward(&x, &out).expect("shapes match");

    let params0 = layer.params().flat().to_vec();
    let f_p = |flat: &[f64]| {
        let mut l2 = layer.clone();
        l2.params_mut().flat_mut().copy_from_slice(flat);
        0.5 * l2.forward(&x).unwrap().iter().map(|v| v * v).sum::<f64>()
    };
    let mut err = max_relative_error(dp.flat(), &numeric_gradient(&f_p, &params0, 1e-6));

    let f_x = |flat: &[f64]| {
        let x2 = Array3::from_shape_vec((batch, frames, 3 * joints), flat.to_vec()).unwrap();
        0.5 * layer.forward(&x2).unwrap().iter().map(|v| v * v).sum::<f64>()
    };
    err = err.max(max_relative_error(
        dx.as_slice().expect("contiguous"),
        &numeric_gradient(&f_x, x.as_slice().expect("contiguous"), 1e-6),
    ));
    CheckResult::new(format!("transform gradients ({variant})"), err, 1e-5)
}

pub fn check_conv_gradients(seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(8));
    let w = random_array3(&mut rng, (3, 2, 3));
    let bias = Array1::from_vec((0..3).map(|_| rng.gen_range(-0.3..0.3)).collect());
    let x = random_array3(&mut rng, (2, 7, 2));
    let layer = Conv1DLayer::new(w.clone(), bias.clone(), 1).expect("odd kernel");
    let out = layer.forward(&x).expect("long enough input");
    let grads = layer.backward(&x, &out.pre, &out.output).expect("shapes match");

    let f_w = |flat: &[f64]| {
        let w2 = Array3::from_shape_vec((3, 2, 3), flat.to_vec()).unwrap();
        let l = Conv1DLayer::new(w2, bias.clone(), 1).unwrap();
        0.5 * l.forward(&x).unwrap().output.iter().map(|v| v * v).sum::<f64>()
    };
    let mut err = max_relative_error(
        grads.weights.as_slice().expect("contiguous"),
        &numeric_gradient(&f_w, w.as_slice().expect("contiguous"), 1e-6),
    );
    let f_b = |flat: &[f64]| {
        let l = Conv1DLayer::new(w.clone(), Array1::from_vec(flat.to_vec()), 1).unwrap();
        0.5 * l.forward(&x).unwrap().output.iter().map(|v| v * v).sum::<f64>()
    };
    err = err.max(max_relative_error(
        grads.bias.as_slice().expect("contiguous"),
        &numeric_gradient(&f_b, bias.as_slice().expect("contiguous"), 1e-6),
    ));
    let f_x = |flat: &[f64]| {
        let x2 = Array3::from_shape_vec((2, 7, 2), flat.to_vec()).unwrap();
        0.5 * layer.forward(&x2).unwrap().output.iter().map(|v| v * v).sum::<f64>()
    };
    err = err.max(max_relative_error(
        grads.input.as_slice().expect("contiguous"),
        &numeric_gradient(&f_x, x.as_slice().expect("contiguous"), 1e-6),
    ));
    CheckResult::new("conv1d gradients (weights, bias, input)", err, 1e-5)
}

pub fn check_pool_gradients(seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(9));
    let x = random_array3(&mut rng, (2, 6, 3));
    let out = maxpool_forward(&x, 2).expect("window fits");
    let d = crate::layers::maxpool_backward(&out.argmax, 6, &out.output).expect("shapes match");
    let f = |flat: &[f64]| {
        let x2 = Array3::from_shape_vec((2, 6, 3), flat.to_vec()).unwrap();
        0.5 * maxpool_forward(&x2, 2).unwrap().output.iter().map(|v| v * v).sum::<f64>()
    };
    let err = max_relative_error(
        d.as_slice().expect("contiguous"),
        &numeric_gradient(&f, x.as_slice().expect("contiguous"), 1e-6),
    );
    CheckResult::new("max-pool gradient routing", err, 1e-5)
}

pub fn check_lstm_gradients(seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(10));
    let (input, hidden) = (2, 2);
    let mut w = Array2::zeros((4 * hidden, input));
    let mut u = Array2::zeros((4 * hidden, hidden));
    let mut b = Array1::zeros(4 * hidden);
    for v in w.iter_mut().chain(u.iter_mut()).chain(b.iter_mut()) {
        *v = rng.gen_range(-0.7..0.7);
    }
    let layer = LstmLayer::new(w.clone(), u.clone(), b.clone()).expect("consistent shapes");
    let x = random_array3(&mut rng, (2, 3, input));
    let out = layer.forward(&x).expect("shapes match");
    let grads = layer.backward(&x, &out.cache, &out.final_hidden).expect("shapes match");

    let loss_of = |l: &LstmLayer, x2: &Array3<f64>| {
        0.5 * l.forward(x2).unwrap().final_hidden.iter().map(|v| v * v).sum::<f64>()
    };
    let f_w = |flat: &[f64]| {
        let w2 = Array2::from_shape_vec((4 * hidden, input), flat.to_vec()).unwrap();
        loss_of(&LstmLayer::new(w2, u.clone(), b.clone()).unwrap(), &x)
    };
    let mut err = max_relative_error(
        grads.w.as_slice().expect("contiguous"),
        &numeric_gradient(&f_w, w.as_slice().expect("contiguous"), 1e-6),
    );
    let f_u = |flat: &[f64]| {
        let u2 = Array2::from_shape_vec((4 * hidden, hidden), flat.to_vec()).unwrap();
        loss_of(&LstmLayer::new(w.clone(), u2, b.clone()).unwrap(), &x)
    };
    err = err.max(max_relative_error(
        grads.u.as_slice().expect("contiguous"),
        &numeric_gradient(&f_u, u.as_slice().expect("contiguous"), 1e-6),
    ));
    let f_b = |flat: &[f64]| {
        loss_of(
            &LstmLayer::new(w.clone(), u.clone(), Array1::from_vec(flat.to_vec())).unwrap(),
            &x,
        )
    };
    err = err.max(max_relative_error(
        grads.bias.as_slice().expect("contiguous"),
        &numeric_gradient(&f_b, b.as_slice().expect("contiguous"), 1e-6),
    ));
    let f_x = |flat: &[f64]| {
        let x2 = Array3::from_shape_vec((2, 3, input), flat.to_vec()).unwrap();
        loss_of(&layer, &x2)
    };
    err = err.max(max_relative_error(
        grads.input.as_slice().expect("contiguous"),
        &numeric_gradient(&f_x, x.as_slice().expect("contiguous"), 1e-6),
    ));
    CheckResult::new("lstm gradients (W, U, bias, input)", err, 1e-5)
}

pub fn check_dense_and_loss_gradients(seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(11));
    let mut w = Array2::zeros((3, 5));
    let mut b = Array1::zeros(3);
    let mut x = Array2::zeros((4, 5));
    for v in w.iter_mut().chain(b.iter_mut()).chain(x.iter_mut()) {
        *v = rng.gen_range(-1.0..1.0);
    }
    let labels = [0usize, 2, 1, 0];
    let layer = DenseLayer::new(w.clone(), b.clone()).expect("consistent shapes");

    // Probe through dense + cross-entropy jointly.
    let logits = layer.forward(&x).expect("shapes match");
    let (_, d_logits) = softmax_cross_entropy(&logits, &labels).expect("labels in range");
    let grads = layer.backward(&x, &d_logits).expect("shapes match");

    let f_w = |flat: &[f64]| {
        let w2 = Array2::from_shape_vec((3, 5), flat.to_vec()).unwrap();
        let l = DenseLayer::new(w2, b.clone()).unwrap();
        softmax_cross_entropy(&l.forward(&x).unwrap(), &labels).unwrap().0
    };
    let mut err = max_relative_error(
        grads.weights.as_slice().expect("contiguous"),
        &numeric_gradient(&f_w, w.as_slice().expect("contiguous"), 1e-6),
    );
    let f_b = |flat: &[f64]| {
        let l = DenseLayer::new(w.clone(), Array1::from_vec(flat.to_vec())).unwrap();
        softmax_cross_entropy(&l.forward(&x).unwrap(), &labels).unwrap().0
    };
    err = err.max(max_relative_error(
        grads.bias.as_slice().expect("contiguous"),
        &numeric_gradient(&f_b, b.as_slice().expect("contiguous"), 1e-6),
    ));
    let f_x = |flat: &[f64]| {
        let x2 = Array2::from_shape_vec((4, 5), flat.to_vec()).unwrap();
        softmax_cross_entropy(&layer.forward(&x2).unwrap(), &labels).unwrap().0
    };
    err = err.max(max_relative_error(
        grads.input.as_slice().expect("contiguous"),
        &numeric_gradient(&f_x, x.as_slice().expect("contiguous"), 1e-6),
    ));
    CheckResult::new("dense + cross-entropy gradients", err, 1e-6)
}

pub(crate) fn tiny_check_config() -> KShapeNetConfig {
    KShapeNetConfig {
        frames: 8,
        joints: 5,
        classes: 2,
        conv: ConvBlockConfig {
            conv1_channels: 4,
            conv1_kernel: 3,
            conv2_channels: 4,
            conv2_kernel: 3,
            pool_window: 2,
        },
        lstm_hidden: 3,
        batch_size: 4,
        epochs: 2,
        transform: TransformChoice::NonRigidAngle,
        seed: 7,
        ..KShapeNetConfig::desk_scale()
    }
}

fn check_reference(joints: usize) -> ReferenceShape {
    let mut pts = Array2::zeros((joints, 3));
    for j in 0..joints {
        pts[[j, 0]] = (j as f64).sin() + 0.3;
        pts[[j, 1]] = (j as f64 * 1.7).cos();
        pts[[j, 2]] = 0.2 * j as f64;
    }
    let shape = crate::geometry::to_preshape(
        &crate::geometry::LandmarkConfig::new(pts).expect("finite points"),
    )
    .expect("non-degenerate");
    ReferenceShape::new(shape, "self-check reference")
}

/// End-to-end: every parameter tensor of a tiny full model against finite
/// differences of the batch loss.
pub fn check_model_gradients(seed: u64) -> CheckResult {
    let cfg = tiny_check_config();
    let reference = check_reference(cfg.joints);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(12));
    let mut model = build_model(&cfg, &reference).expect("valid config");
    let mut x = Array3::zeros((3, cfg.frames, cfg.features()));
    for v in x.iter_mut() {
        *v = rng.gen_range(-0.8..0.8);
    }
    let labels = vec![0usize, 1, 0];
    let (_, grads) = model.loss_and_grads(&x, &labels).expect("valid batch");

    let mut worst = 0.0f64;
    for idx in 0..model.num_param_tensors() {
        let flat0: Vec<f64> = model.param_tensors_mut()[idx].to_vec();
        let f = |p: &[f64]| {
            let mut m = build_model(&cfg, &reference).unwrap();
            m.param_tensors_mut()[idx].copy_from_slice(p);
            m.loss_on_batch(&x, &labels).unwrap()
        };
        let num = numeric_gradient(&f, &flat0, 1e-6);
        worst = worst.max(max_relative_error(&grads[idx], &num));
    }
    CheckResult::new("end-to-end model gradients", worst, 1e-4)
}

/// Every layer plus the composed model against finite differences.
pub fn gradient_suite(seed: u64) -> Vec<CheckResult> {
    let mut out = Vec::new();
    for variant in TransformVariant::ALL {
        out.push(check_transform_gradients(variant, seed));
    }
    out.push(check_conv_gradients(seed));
    out.push(check_pool_gradients(seed));
    out.push(check_lstm_gradients(seed));
    out.push(check_dense_and_loss_gradients(seed));
    out.push(check_model_gradients(seed));
    out
}

fn random_sequence(rng: &mut impl Rng, id: &str, frames: usize, joints: usize) -> SkeletonSequence {
    let mut data = Array3::zeros((frames, joints, 3));
    for v in data.iter_mut() {
        *v = rng.gen_range(-1.0_f64..1.0);
    }
    SkeletonSequence::new(id.into(), 0, data).expect("valid random sequence")
}

/// Common-reference rows reconstruct the aligned trajectory via the exp map.
pub fn check_projection_reconstruction(seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(13));
    let seq = random_sequence(&mut rng, "recon", 7, 9);
    let reference = ReferenceShape::new(
        crate::geometry::to_preshape(
            &crate::geometry::LandmarkConfig::new(seq.frame(0)).expect("finite"),
        )
        .expect("non-degenerate"),
        "frame 0",
    );
    let traj = sequence_to_trajectory(&seq, &reference, true).expect("no degenerate frames");
    let tt = project_common(&traj, &reference).expect("no antipodal frames");
    let mut worst = 0.0f64;
    for i in 0..traj.len() {
        let back = reconstruct_common_row(&reference, tt.data.row(i)).expect("tangent row");
        for (a, b) in back.flat().iter().zip(traj.shapes()[i].flat().iter()) {
            worst = worst.max((a - b).abs());
        }
    }
    CheckResult::new("common-reference reconstruction", worst, 1e-9)
}

/// Projections ignore input translation and positive scaling.
pub fn check_pipeline_similarity_invariance(seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(14));
    let seq = random_sequence(&mut rng, "sim", 6, 8);
    let mut moved = seq.frames().clone();
    for v in moved.iter_mut() {
        *v *= 2.9;
    }
    for t in 0..6 {
        for j in 0..8 {
            moved[[t, j, 0]] += 7.0;
            moved[[t, j, 1]] -= 3.0;
            moved[[t, j, 2]] += 0.25;
        }
    }
    let moved_seq = SkeletonSequence::new("sim2".into(), 0, moved).expect("finite");
    let reference = ReferenceShape::new(
        crate::geometry::to_preshape(
            &crate::geometry::LandmarkConfig::new(seq.frame(0)).expect("finite"),
        )
        .expect("non-degenerate"),
        "frame 0",
    );
    let ta = project_common(
        &sequence_to_trajectory(&seq, &reference, true).expect("ok"),
        &reference,
    )
    .expect("ok");
    let tb = project_common(
        &sequence_to_trajectory(&moved_seq, &reference, true).expect("ok"),
        &reference,
    )
    .expect("ok");
    let mut worst = 0.0f64;
    for (a, b) in ta.data.iter().zip(tb.data.iter()) {
        worst = worst.max((a - b).abs());
    }
    CheckResult::new("translation + scale invariance", worst, 1e-9)
}

/// With alignment on, a globally rotated copy produces identical logits.
pub fn check_pipeline_rotation_invariance(seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(15));
    let cfg = KShapeNetConfig {
        frames: 8,
        joints: 6,
        classes: 2,
        conv: ConvBlockConfig {
            conv1_channels: 4,
            conv1_kernel: 3,
            conv2_channels: 4,
            conv2_kernel: 3,
            pool_window: 2,
        },
        lstm_hidden: 4,
        seed,
        ..KShapeNetConfig::desk_scale()
    };
    let seq = random_sequence(&mut rng, "rotinv", 11, cfg.joints);
    let q = random_rotation(&mut rng);
    let mut rotated = seq.frames().clone();
    let scale: f64 = 1.7;
    for t in 0..rotated.dim().0 {
        for j in 0..cfg.joints {
            let v = nalgebra::Vector3::new(rotated[[t, j, 0]], rotated[[t, j, 1]], rotated[[t, j, 2]]);
            let w = q.matrix() * v;
            rotated[[t, j, 0]] = scale * w.x + 4.0;
            rotated[[t, j, 1]] = scale * w.y - 2.0;
            rotated[[t, j, 2]] = scale * w.z + 0.5;
        }
    }
    let rot_seq = SkeletonSequence::new("rotinv2".into(), 0, rotated).expect("finite");

    let reference = ReferenceShape::new(
        crate::geometry::to_preshape(
            &crate::geometry::LandmarkConfig::new(seq.frame(0)).expect("finite"),
        )
        .expect("non-degenerate"),
        "frame 0",
    );
    let model = build_model(&cfg, &reference).expect("valid config");
    let encode = |s: &SkeletonSequence| -> Array3<f64> {
        let ds = crate::model::preprocess_sequences(std::slice::from_ref(s), &cfg, &reference)
            .expect("pipeline ok");
        let mut x = Array3::zeros((1, cfg.frames, cfg.features()));
        x.index_axis_mut(ndarray::Axis(0), 0).assign(&ds.data[0]);
        x
    };
    let la = model.forward(&encode(&seq)).expect("forward ok");
    let lb = model.forward(&encode(&rot_seq)).expect("forward ok");
    let mut worst = 0.0f64;
    for (a, b) in la.iter().zip(lb.iter()) {
        worst = worst.max((a - b).abs());
    }
    CheckResult::new("rotation invariance of logits", worst, 1e-6)
}

/// Pipeline-level invariances.
pub fn pipeline_suite(seed: u64) -> Vec<CheckResult> {
    vec![
        check_projection_reconstruction(seed),
        check_pipeline_similarity_invariance(seed),
        check_pipeline_rotation_invariance(seed),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;

    #[test]
    fn numeric_gradient_of_quadratic() {
        let f = |p: &[f64]| p.iter().map(|v| v * v).sum::<f64>();
        let at = [1.0, -2.0, 0.5];
        let g = numeric_gradient(&f, &at, 1e-6);
        for (got, want) in g.iter().zip([2.0, -4.0, 1.0]) {
            assert!((got - want).abs() < 1e-8);
        }
    }

    #[test]
    fn suites_pass_on_fresh_build() {
        let mut results = geometry_suite(123);
        results.extend(pipeline_suite(123));
        for r in &results {
            assert!(r.pass, "{r}");
        }
    }

    #[test]
    fn broken_transport_normalization_fails_isometry() {
        // Mutation test: divide by theta instead of theta^2; the printed
        // variant of the transport is not an isometry and the check must
        // catch it.
        let broken = |x: &PreShape, y: &PreShape, u: &TangentVector| -> Result<TangentVector> {
            let theta = geodesic_distance(x, y);
            if theta < 1e-7 {
                return parallel_transport(x, y, u);
            }
            let log_xy = log_map(x, y)?;
            let log_yx = log_map(y, x)?;
            let coeff = log_xy.vec().dot(u.vec()) / theta;
            let mut vec = Array1::from_iter(
                u.vec()
                    .iter()
                    .zip(log_yx.vec().iter().zip(log_xy.vec().iter()))
                    .map(|(&ui, (&ai, &bi))| ui - coeff * (ai + bi)),
            );
            // Re-project at the target so construction succeeds; the length
            // distortion of the theta variant remains.
            let dot = y.flat().dot(&vec);
            for (v, b) in vec.iter_mut().zip(y.flat().iter()) {
                *v -= dot * b;
            }
            TangentVector::new(y.clone(), vec)
        };
        let result = transport_isometry_with(broken, 50, 42);
        assert!(!result.pass, "broken transport slipped through: {result}");
    }
}
