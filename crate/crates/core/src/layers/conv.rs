//! Temporal 1D convolution (cross-correlation, zero same-padding, ReLU) and
//! non-overlapping max pooling.

use ndarray::{Array1, Array2, Array3};

use crate::error::{Error, Result};

/// `weights: out_channels x in_channels x kernel_size`, odd kernel so the
/// symmetric zero padding keeps output aligned with input time steps.
#[derive(Debug, Clone)]
pub struct Conv1DLayer {
    weights: Array3<f64>,
    bias: Array1<f64>,
    stride: usize,
}

/// Forward result: `output = relu(pre)`; the pre-activation is kept for the
/// backward ReLU mask.
#[derive(Debug, Clone)]
pub struct ConvOutput {
    pub output: Array3<f64>,
    pub pre: Array3<f64>,
}

#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Array3<f64>,
    pub weights: Array3<f64>,
    pub bias: Array1<f64>,
}

impl Conv1DLayer {
    pub fn new(weights: Array3<f64>, bias: Array1<f64>, stride: usize) -> Result<Self> {
        let (out_ch, _, kernel) = weights.dim();
        if kernel % 2 == 0 {
            return Err(Error::InvalidDimension(format!(
                "kernel size {kernel} must be odd for symmetric same-padding"
            )));
        }
        if bias.len() != out_ch {
            return Err(Error::InvalidDimension(format!(
                "conv bias has {} entries for {} output channels",
                bias.len(),
                out_ch
            )));
        }
        if stride == 0 {
            return Err(Error::InvalidDimension("conv stride must be >= 1".into()));
        }
        Ok(Self {
            weights,
            bias,
            stride,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.weights.dim().1
    }

    pub fn out_channels(&self) -> usize {
        self.weights.dim().0
    }

    pub fn kernel_size(&self) -> usize {
        self.weights.dim().2
    }

    pub fn weights(&self) -> &Array3<f64> {
        &self.weights
    }

    pub fn bias(&self) -> &Array1<f64> {
        &self.bias
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.weights.as_slice_mut().expect("contiguous"),
            self.bias.as_slice_mut().expect("contiguous"),
        ]
    }

    pub fn output_len(&self, t_in: usize) -> usize {
        (t_in - 1) / self.stride + 1
    }

    /// Patch matrix for the gemm formulation: row `b * t_out + t` holds the
    /// padded window `x[b, t*stride + . - pad, :]` laid out as `ic * k + kk`,
    /// matching the flattened weight layout.
    fn im2col(&self, x: &Array3<f64>) -> Array2<f64> {
        let (batch, t_in, in_ch) = x.dim();
        let kernel = self.kernel_size();
        let pad = (kernel - 1) / 2;
        let t_out = self.output_len(t_in);
        let mut cols = Array2::zeros((batch * t_out, in_ch * kernel));
        for b in 0..batch {
            for t in 0..t_out {
                let row = b * t_out + t;
                for k in 0..kernel {
                    let src = (t * self.stride + k) as isize - pad as isize;
                    if src < 0 || src >= t_in as isize {
                        continue;
                    }
                    for ic in 0..in_ch {
                        cols[[row, ic * kernel + k]] = x[[b, src as usize, ic]];
                    }
                }
            }
        }
        cols
    }

    fn weights_2d(&self) -> Array2<f64> {
        // out x in x k is contiguous, so the 2-D view is exactly ic*k + kk.
        self.weights
            .view()
            .into_shape_with_order((self.out_channels(), self.in_channels() * self.kernel_size()))
            .expect("contiguous weights")
            .to_owned()
    }

    /// `x: batch x T x in_channels` to `batch x T' x out_channels` with
    /// `T' = ceil(T / stride)`.
    pub fn forward(&self, x: &Array3<f64>) -> Result<ConvOutput> {
        let (batch, t_in, in_ch) = x.dim();
        if in_ch != self.in_channels() {
            return Err(Error::InvalidDimension(format!(
                "conv expected {} input channels, got {in_ch}",
                self.in_channels()
            )));
        }
        if t_in < self.kernel_size() {
            return Err(Error::InvalidDimension(format!(
                "conv input has {t_in} steps, kernel needs {}",
                self.kernel_size()
            )));
        }
        let t_out = self.output_len(t_in);
        let cols = self.im2col(x);
        let mut pre2d = cols.dot(&self.weights_2d().t());
        for mut row in pre2d.rows_mut() {
            row += &self.bias;
        }
        let pre = pre2d
            .into_shape_with_order((batch, t_out, self.out_channels()))
            .expect("row order is batch-major");
        let output = pre.mapv(|v| v.max(0.0));
        Ok(ConvOutput { output, pre })
    }

    /// Backward through ReLU and the correlation; `upstream` is the gradient
    /// at the activated output.
    pub fn backward(
        &self,
        x: &Array3<f64>,
        pre: &Array3<f64>,
        upstream: &Array3<f64>,
    ) -> Result<ConvGrads> {
        let (batch, t_in, in_ch) = x.dim();
        let t_out = self.output_len(t_in);
        if upstream.dim() != (batch, t_out, self.out_channels())
            || pre.dim() != upstream.dim()
        {
            return Err(Error::InvalidDimension(
                "conv backward shape mismatch".into(),
            ));
        }
        let kernel = self.kernel_size();
        let pad = (kernel - 1) / 2;

        // ReLU gate, flattened to rows matching the im2col layout.
        let mut d_pre2d = Array2::zeros((batch * t_out, self.out_channels()));
        for b in 0..batch {
            for t in 0..t_out {
                for oc in 0..self.out_channels() {
                    if pre[[b, t, oc]] > 0.0 {
                        d_pre2d[[b * t_out + t, oc]] = upstream[[b, t, oc]];
                    }
                }
            }
        }

        let cols = self.im2col(x);
        let d_bias = d_pre2d.sum_axis(ndarray::Axis(0));
        let d_weights = d_pre2d
            .t()
            .dot(&cols)
            .into_shape_with_order(self.weights.raw_dim())
            .expect("contiguous gradient");
        let d_cols = d_pre2d.dot(&self.weights_2d());

        // Scatter the patch gradients back onto the padded input.
        let mut d_input = Array3::zeros(x.raw_dim());
        for b in 0..batch {
            for t in 0..t_out {
                let row = b * t_out + t;
                for k in 0..kernel {
                    let src = (t * self.stride + k) as isize - pad as isize;
                    if src < 0 || src >= t_in as isize {
                        continue;
                    }
                    for ic in 0..in_ch {
                        d_input[[b, src as usize, ic]] += d_cols[[row, ic * kernel + k]];
                    }
                }
            }
        }
        Ok(ConvGrads {
            input: d_input,
            weights: d_weights,
            bias: d_bias,
        })
    }
}

/// Forward result of the temporal max pool; `argmax` stores, per output
/// cell, the input time index that won (first index on ties).
#[derive(Debug, Clone)]
pub struct PoolOutput {
    pub output: Array3<f64>,
    pub argmax: Array3<usize>,
}

/// Non-overlapping temporal max over `window` steps; a trailing remainder
/// shorter than the window is dropped.
pub fn maxpool_forward(x: &Array3<f64>, window: usize) -> Result<PoolOutput> {
    let (batch, t_in, channels) = x.dim();
    if window < 1 {
        return Err(Error::InvalidDimension("pool window must be >= 1".into()));
    }
    if t_in < window {
        return Err(Error::InvalidDimension(format!(
            "pool input has {t_in} steps, window is {window}"
        )));
    }
    let t_out = t_in / window;
    let mut output = Array3::zeros((batch, t_out, channels));
    let mut argmax = Array3::zeros((batch, t_out, channels));
    for b in 0..batch {
        for t in 0..t_out {
            for c in 0..channels {
                let mut best = x[[b, t * window, c]];
                let mut best_idx = t * window;
                for k in 1..window {
                    let v = x[[b, t * window + k, c]];
                    if v > best {
                        best = v;
                        best_idx = t * window + k;
                    }
                }
                output[[b, t, c]] = best;
                argmax[[b, t, c]] = best_idx;
            }
        }
    }
    Ok(PoolOutput { output, argmax })
}

/// Route the upstream gradient back to each window's argmax position.
pub fn maxpool_backward(
    argmax: &Array3<usize>,
    t_in: usize,
    upstream: &Array3<f64>,
) -> Result<Array3<f64>> {
    let (batch, t_out, channels) = upstream.dim();
    if argmax.dim() != upstream.dim() {
        return Err(Error::InvalidDimension(
            "pool backward shape mismatch".into(),
        ));
    }
    let mut d_input = Array3::zeros((batch, t_in, channels));
    for b in 0..batch {
        for t in 0..t_out {
            for c in 0..channels {
                d_input[[b, argmax[[b, t, c]], c]] += upstream[[b, t, c]];
            }
        }
    }
    Ok(d_input)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checks::{max_relative_error, numeric_gradient};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_array3(rng: &mut impl Rng, dim: (usize, usize, usize)) -> Array3<f64> {
        let mut a = Array3::zeros(dim);
        for v in a.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        a
    }

    #[test]
    fn delta_kernel_is_relu_identity() {
        let mut w = Array3::zeros((1, 1, 3));
        w[[0, 0, 1]] = 1.0; // center tap
        let layer = Conv1DLayer::new(w, Array1::zeros(1), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        let x = random_array3(&mut rng, (2, 7, 1));
        let out = layer.forward(&x).unwrap();
        for (o, i) in out.output.iter().zip(x.iter()) {
            assert_eq!(*o, i.max(0.0));
        }
    }

    #[test]
    fn constant_input_interior_positions() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let mut w = Array3::zeros((2, 1, 3));
        for v in w.iter_mut() {
            *v = rng.gen_range(-0.5..0.5);
        }
        let bias = Array1::from_vec(vec![0.2, -0.4]);
        let layer = Conv1DLayer::new(w.clone(), bias.clone(), 1).unwrap();
        let c = 0.8;
        let x = Array3::from_elem((1, 9, 1), c);
        let out = layer.forward(&x).unwrap();
        for oc in 0..2 {
            let s: f64 = (0..3).map(|k| w[[oc, 0, k]]).sum();
            let want = (s * c + bias[oc]).max(0.0);
            // Interior positions only; the borders see zero padding.
            for t in 1..8 {
                assert!(
                    (out.output[[0, t, oc]] - want).abs() < 1e-12,
                    "t={t} oc={oc}"
                );
            }
        }
    }

    #[test]
    fn forward_matches_naive_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(62);
        let w = random_array3(&mut rng, (3, 2, 5));
        let bias = Array1::from_vec((0..3).map(|_| rng.gen_range(-0.3..0.3)).collect());
        let layer = Conv1DLayer::new(w.clone(), bias.clone(), 1).unwrap();
        let x = random_array3(&mut rng, (2, 8, 2));
        let out = layer.forward(&x).unwrap();

        // Naive oracle written straight from the definition.
        for b in 0..2 {
            for t in 0..8i64 {
                for oc in 0..3 {
                    let mut acc = bias[oc];
                    for ic in 0..2 {
                        for k in 0..5i64 {
                            let src = t + k - 2;
                            if src >= 0 && src < 8 {
                                acc += w[[oc, ic, k as usize]] * x[[b, src as usize, ic]];
                            }
                        }
                    }
                    let want = acc.max(0.0);
                    let got = out.output[[b, t as usize, oc]];
                    assert!((got - want).abs() < 1e-12, "b={b} t={t} oc={oc}");
                }
            }
        }
    }

    #[test]
    fn pre_activation_is_linear_with_zero_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(63);
        let w = random_array3(&mut rng, (2, 2, 3));
        let layer = Conv1DLayer::new(w, Array1::zeros(2), 1).unwrap();
        let x = random_array3(&mut rng, (1, 6, 2));
        let y = random_array3(&mut rng, (1, 6, 2));
        let sum = &x + &y;
        let fx = layer.forward(&x).unwrap().pre;
        let fy = layer.forward(&y).unwrap().pre;
        let fsum = layer.forward(&sum).unwrap().pre;
        for ((a, b), s) in fx.iter().zip(fy.iter()).zip(fsum.iter()) {
            assert!((a + b - s).abs() < 1e-12);
        }
    }

    #[test]
    fn too_short_input_is_rejected() {
        let layer = Conv1DLayer::new(Array3::zeros((1, 1, 5)), Array1::zeros(1), 1).unwrap();
        let x = Array3::zeros((1, 4, 1));
        assert!(matches!(
            layer.forward(&x),
            Err(Error::InvalidDimension(_))
        ));
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(64);
        let w = random_array3(&mut rng, (3, 2, 3));
        let bias = Array1::from_vec((0..3).map(|_| rng.gen_range(-0.3..0.3)).collect());
        let x = random_array3(&mut rng, (2, 7, 2));
        let layer = Conv1DLayer::new(w.clone(), bias.clone(), 1).unwrap();

        let out = layer.forward(&x).unwrap();
        let grads = layer.backward(&x, &out.pre, &out.output).unwrap();

        let loss_w = |flat: &[f64]| {
            let w2 = Array3::from_shape_vec((3, 2, 3), flat.to_vec()).unwrap();
            let l = Conv1DLayer::new(w2, bias.clone(), 1).unwrap();
            0.5 * l.forward(&x).unwrap().output.iter().map(|v| v * v).sum::<f64>()
        };
        let num = numeric_gradient(&loss_w, w.as_slice().unwrap(), 1e-6);
        let err = max_relative_error(grads.weights.as_slice().unwrap(), &num);
        assert!(err < 1e-5, "conv weight gradient error {err}");

        let loss_b = |flat: &[f64]| {
            let l = Conv1DLayer::new(w.clone(), Array1::from_vec(flat.to_vec()), 1).unwrap();
            0.5 * l.forward(&x).unwrap().output.iter().map(|v| v * v).sum::<f64>()
        };
        let num = numeric_gradient(&loss_b, bias.as_slice().unwrap(), 1e-6);
        let err = max_relative_error(grads.bias.as_slice().unwrap(), &num);
        assert!(err < 1e-5, "conv bias gradient error {err}");

        let loss_x = |flat: &[f64]| {
            let x2 = Array3::from_shape_vec((2, 7, 2), flat.to_vec()).unwrap();
            0.5 * layer.forward(&x2).unwrap().output.iter().map(|v| v * v).sum::<f64>()
        };
        let num = numeric_gradient(&loss_x, x.as_slice().unwrap(), 1e-6);
        let err = max_relative_error(grads.input.as_slice().unwrap(), &num);
        assert!(err < 1e-5, "conv input gradient error {err}");
    }

    #[test]
    fn strided_conv_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(65);
        let w = random_array3(&mut rng, (2, 2, 3));
        let bias = Array1::zeros(2);
        let x = random_array3(&mut rng, (1, 9, 2));
        let layer = Conv1DLayer::new(w.clone(), bias.clone(), 2).unwrap();
        assert_eq!(layer.output_len(9), 5);
        let out = layer.forward(&x).unwrap();
        let grads = layer.backward(&x, &out.pre, &out.output).unwrap();
        let loss_w = |flat: &[f64]| {
            let w2 = Array3::from_shape_vec((2, 2, 3), flat.to_vec()).unwrap();
            let l = Conv1DLayer::new(w2, bias.clone(), 2).unwrap();
            0.5 * l.forward(&x).unwrap().output.iter().map(|v| v * v).sum::<f64>()
        };
        let num = numeric_gradient(&loss_w, w.as_slice().unwrap(), 1e-6);
        let err = max_relative_error(grads.weights.as_slice().unwrap(), &num);
        assert!(err < 1e-5, "strided conv weight gradient error {err}");
    }

    #[test]
    fn pool_monotone_channel_picks_odd_indices() {
        let mut x = Array3::zeros((1, 8, 1));
        for t in 0..8 {
            x[[0, t, 0]] = t as f64;
        }
        let out = maxpool_forward(&x, 2).unwrap();
        for t in 0..4 {
            assert_eq!(out.output[[0, t, 0]], (2 * t + 1) as f64);
            assert_eq!(out.argmax[[0, t, 0]], 2 * t + 1);
        }
    }

    #[test]
    fn pool_tie_routes_to_first_index() {
        let mut x = Array3::zeros((1, 4, 1));
        x[[0, 0, 0]] = 1.0;
        x[[0, 1, 0]] = 1.0;
        x[[0, 2, 0]] = -2.0;
        x[[0, 3, 0]] = -2.0;
        let out = maxpool_forward(&x, 2).unwrap();
        assert_eq!(out.argmax[[0, 0, 0]], 0);
        assert_eq!(out.argmax[[0, 1, 0]], 2);
        let upstream = Array3::from_elem((1, 2, 1), 1.0);
        let d = maxpool_backward(&out.argmax, 4, &upstream).unwrap();
        assert_eq!(d[[0, 0, 0]], 1.0);
        assert_eq!(d[[0, 1, 0]], 0.0);
        assert_eq!(d[[0, 2, 0]], 1.0);
        assert_eq!(d[[0, 3, 0]], 0.0);
    }

    #[test]
    fn pool_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(66);
        let x = random_array3(&mut rng, (2, 6, 3));
        let out = maxpool_forward(&x, 2).unwrap();
        let d = maxpool_backward(&out.argmax, 6, &out.output).unwrap();
        let loss = |flat: &[f64]| {
            let x2 = Array3::from_shape_vec((2, 6, 3), flat.to_vec()).unwrap();
            0.5 * maxpool_forward(&x2, 2)
                .unwrap()
                .output
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
        };
        let num = numeric_gradient(&loss, x.as_slice().unwrap(), 1e-6);
        let err = max_relative_error(d.as_slice().unwrap(), &num);
        assert!(err < 1e-5, "pool gradient error {err}");
    }
}
