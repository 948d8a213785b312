//! Single-layer LSTM returning the final hidden state, with full
//! backpropagation through time.
//!
//! Gate blocks are packed in the fixed order (input, forget, candidate,
//! output): rows `0..H`, `H..2H`, `2H..3H`, `3H..4H` of the stacked
//! parameters. Initial hidden and cell states are zero.

use ndarray::{linalg::general_mat_mul, Array1, Array2, Array3, Axis};

use crate::error::{Error, Result};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `w: 4H x input`, `u: 4H x hidden`, `bias: 4H`.
#[derive(Debug, Clone)]
pub struct LstmLayer {
    w: Array2<f64>,
    u: Array2<f64>,
    bias: Array1<f64>,
}

/// Per-step activations kept for the backward pass, stored time-major
/// (`T x batch x hidden`) so each step is one contiguous block.
#[derive(Debug, Clone)]
pub struct LstmCache {
    input_gate: Array3<f64>,
    forget_gate: Array3<f64>,
    candidate: Array3<f64>,
    output_gate: Array3<f64>,
    cell: Array3<f64>,
    hidden: Array3<f64>,
}

#[derive(Debug, Clone)]
pub struct LstmOutput {
    /// `batch x hidden`: the hidden state after the last step.
    pub final_hidden: Array2<f64>,
    pub cache: LstmCache,
}

#[derive(Debug, Clone)]
pub struct LstmGrads {
    pub input: Array3<f64>,
    pub w: Array2<f64>,
    pub u: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LstmLayer {
    pub fn new(w: Array2<f64>, u: Array2<f64>, bias: Array1<f64>) -> Result<Self> {
        let hidden4 = w.nrows();
        if hidden4 % 4 != 0 || hidden4 == 0 {
            return Err(Error::InvalidDimension(format!(
                "stacked gate rows must be 4*hidden, got {hidden4}"
            )));
        }
        if u.nrows() != hidden4 || u.ncols() != hidden4 / 4 || bias.len() != hidden4 {
            return Err(Error::InvalidDimension(
                "lstm parameter shapes are inconsistent".into(),
            ));
        }
        Ok(Self { w, u, bias })
    }

    pub fn input_size(&self) -> usize {
        self.w.ncols()
    }

    pub fn hidden_size(&self) -> usize {
        self.u.ncols()
    }

    pub fn w(&self) -> &Array2<f64> {
        &self.w
    }

    pub fn u(&self) -> &Array2<f64> {
        &self.u
    }

    pub fn bias(&self) -> &Array1<f64> {
        &self.bias
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.w.as_slice_mut().expect("contiguous"),
            self.u.as_slice_mut().expect("contiguous"),
            self.bias.as_slice_mut().expect("contiguous"),
        ]
    }

    /// Time-major copy of the input: `T x batch x input`, one contiguous
    /// block per step for the gemm formulation.
    fn time_major(x: &Array3<f64>) -> Array3<f64> {
        x.view()
            .permuted_axes([1, 0, 2])
            .as_standard_layout()
            .to_owned()
    }

    /// `x: batch x T x input` to the final hidden state.
    pub fn forward(&self, x: &Array3<f64>) -> Result<LstmOutput> {
        let (batch, steps, input) = x.dim();
        if input != self.input_size() {
            return Err(Error::InvalidDimension(format!(
                "lstm expected input size {}, got {input}",
                self.input_size()
            )));
        }
        let h = self.hidden_size();
        let mut cache = LstmCache {
            input_gate: Array3::zeros((steps, batch, h)),
            forget_gate: Array3::zeros((steps, batch, h)),
            candidate: Array3::zeros((steps, batch, h)),
            output_gate: Array3::zeros((steps, batch, h)),
            cell: Array3::zeros((steps, batch, h)),
            hidden: Array3::zeros((steps, batch, h)),
        };

        // Input contribution for every step at once: (T*B, 4H).
        let xt = Self::time_major(x);
        let x2d = xt
            .view()
            .into_shape_with_order((steps * batch, input))
            .expect("contiguous time-major input");
        let wx = x2d.dot(&self.w.t());

        let mut h_prev: Array2<f64> = Array2::zeros((batch, h));
        let mut c_prev: Array2<f64> = Array2::zeros((batch, h));
        for t in 0..steps {
            let mut z = wx
                .slice(ndarray::s![t * batch..(t + 1) * batch, ..])
                .to_owned();
            z += &h_prev.dot(&self.u.t());
            for mut row in z.rows_mut() {
                row += &self.bias;
            }
            let mut ig = cache.input_gate.index_axis_mut(Axis(0), t);
            let mut fg = cache.forget_gate.index_axis_mut(Axis(0), t);
            let mut cand = cache.candidate.index_axis_mut(Axis(0), t);
            let mut og = cache.output_gate.index_axis_mut(Axis(0), t);
            let mut cell = cache.cell.index_axis_mut(Axis(0), t);
            let mut hidden = cache.hidden.index_axis_mut(Axis(0), t);
            for b in 0..batch {
                for j in 0..h {
                    let i_v = sigmoid(z[[b, j]]);
                    let f_v = sigmoid(z[[b, h + j]]);
                    let g_v = z[[b, 2 * h + j]].tanh();
                    let o_v = sigmoid(z[[b, 3 * h + j]]);
                    let c_v = f_v * c_prev[[b, j]] + i_v * g_v;
                    ig[[b, j]] = i_v;
                    fg[[b, j]] = f_v;
                    cand[[b, j]] = g_v;
                    og[[b, j]] = o_v;
                    cell[[b, j]] = c_v;
                    hidden[[b, j]] = o_v * c_v.tanh();
                }
            }
            h_prev.assign(&hidden);
            c_prev.assign(&cell);
        }
        Ok(LstmOutput {
            final_hidden: h_prev,
            cache,
        })
    }

    /// Backpropagation through time from a gradient on the final hidden
    /// state only.
    pub fn backward(
        &self,
        x: &Array3<f64>,
        cache: &LstmCache,
        d_final: &Array2<f64>,
    ) -> Result<LstmGrads> {
        let (batch, steps, input) = x.dim();
        let h = self.hidden_size();
        if d_final.dim() != (batch, h) {
            return Err(Error::InvalidDimension(
                "lstm upstream gradient shape mismatch".into(),
            ));
        }
        if cache.hidden.dim() != (steps, batch, h) {
            return Err(Error::InvalidDimension(
                "lstm cache does not match the input".into(),
            ));
        }
        let xt = Self::time_major(x);
        let mut d_input_tm = Array3::zeros((steps, batch, input));
        let mut d_w = Array2::zeros(self.w.raw_dim());
        let mut d_u = Array2::zeros(self.u.raw_dim());
        let mut d_bias = Array1::zeros(self.bias.len());

        let mut d_h = d_final.clone();
        let mut d_c: Array2<f64> = Array2::zeros((batch, h));
        let zeros: Array2<f64> = Array2::zeros((batch, h));
        for t in (0..steps).rev() {
            let ig = cache.input_gate.index_axis(Axis(0), t);
            let fg = cache.forget_gate.index_axis(Axis(0), t);
            let cand = cache.candidate.index_axis(Axis(0), t);
            let og = cache.output_gate.index_axis(Axis(0), t);
            let cell = cache.cell.index_axis(Axis(0), t);
            let c_prev = if t == 0 {
                zeros.view()
            } else {
                cache.cell.index_axis(Axis(0), t - 1)
            };
            let h_prev = if t == 0 {
                zeros.view()
            } else {
                cache.hidden.index_axis(Axis(0), t - 1)
            };

            // Gate pre-activation gradients, packed (B, 4H).
            let mut d_pre: Array2<f64> = Array2::zeros((batch, 4 * h));
            for b in 0..batch {
                for j in 0..h {
                    let tc = cell[[b, j]].tanh();
                    let dh = d_h[[b, j]];
                    let d_og = dh * tc;
                    let mut dc = d_c[[b, j]] + dh * og[[b, j]] * (1.0 - tc * tc);
                    let d_ig = dc * cand[[b, j]];
                    let d_fg = dc * c_prev[[b, j]];
                    let d_cand = dc * ig[[b, j]];
                    dc *= fg[[b, j]]; // flows to c_{t-1}
                    d_pre[[b, j]] = d_ig * ig[[b, j]] * (1.0 - ig[[b, j]]);
                    d_pre[[b, h + j]] = d_fg * fg[[b, j]] * (1.0 - fg[[b, j]]);
                    d_pre[[b, 2 * h + j]] = d_cand * (1.0 - cand[[b, j]] * cand[[b, j]]);
                    d_pre[[b, 3 * h + j]] = d_og * og[[b, j]] * (1.0 - og[[b, j]]);
                    d_c[[b, j]] = dc;
                }
            }

            let x_t = xt.index_axis(Axis(0), t);
            general_mat_mul(1.0, &d_pre.t(), &x_t, 1.0, &mut d_w);
            general_mat_mul(1.0, &d_pre.t(), &h_prev, 1.0, &mut d_u);
            d_bias += &d_pre.sum_axis(Axis(0));
            d_input_tm
                .index_axis_mut(Axis(0), t)
                .assign(&d_pre.dot(&self.w));
            d_h = d_pre.dot(&self.u);
        }
        let d_input = d_input_tm
            .view()
            .permuted_axes([1, 0, 2])
            .as_standard_layout()
            .to_owned();
        Ok(LstmGrads {
            input: d_input,
            w: d_w,
            u: d_u,
            bias: d_bias,
        })
    }
}
