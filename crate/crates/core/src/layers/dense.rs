//! Fully connected head and the softmax cross-entropy loss.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// `logits = W x + b`, with `W: classes x features`.
#[derive(Debug, Clone)]
pub struct DenseLayer {
    weights: Array2<f64>,
    bias: Array1<f64>,
}

/// Gradients returned by [`DenseLayer::backward`].
#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub input: Array2<f64>,
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DenseLayer {
    pub fn new(weights: Array2<f64>, bias: Array1<f64>) -> Result<Self> {
        if weights.nrows() != bias.len() {
            return Err(Error::InvalidDimension(format!(
                "dense weights have {} rows but bias has {} entries",
                weights.nrows(),
                bias.len()
            )));
        }
        Ok(Self { weights, bias })
    }

    pub fn features(&self) -> usize {
        self.weights.ncols()
    }

    pub fn classes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &Array2<f64> {
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

    /// `x: batch x features` to `batch x classes`.
    pub fn forward(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.features() {
            return Err(Error::InvalidDimension(format!(
                "dense expected {} features, got {}",
                self.features(),
                x.ncols()
            )));
        }
        let mut out = x.dot(&self.weights.t());
        for mut row in out.rows_mut() {
            row += &self.bias;
        }
        Ok(out)
    }

    pub fn backward(&self, x: &Array2<f64>, upstream: &Array2<f64>) -> Result<DenseGrads> {
        if upstream.dim() != (x.nrows(), self.classes()) {
            return Err(Error::InvalidDimension(
                "dense upstream gradient shape mismatch".into(),
            ));
        }
        Ok(DenseGrads {
            input: upstream.dot(&self.weights),
            weights: upstream.t().dot(x),
            bias: upstream.sum_axis(ndarray::Axis(0)),
        })
    }
}

/// Mean cross-entropy over the batch with a stabilized log-sum-exp, plus the
/// gradient with respect to the logits: `(softmax - one_hot) / batch`.
pub fn softmax_cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    let (batch, classes) = logits.dim();
    if labels.len() != batch {
        return Err(Error::InvalidDimension(format!(
            "{} logits rows but {} labels",
            batch,
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            classes,
        });
    }
    let mut loss = 0.0;
    let mut grad = Array2::zeros((batch, classes));
    for (b, row) in logits.rows().into_iter().enumerate() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = row.iter().map(|z| (z - max).exp()).sum();
        let log_sum = max + sum_exp.ln();
        loss += log_sum - row[labels[b]];
        for (k, z) in row.iter().enumerate() {
            let softmax = (z - max).exp() / sum_exp;
            grad[[b, k]] = (softmax - if k == labels[b] { 1.0 } else { 0.0 }) / batch as f64;
        }
    }
    Ok((loss / batch as f64, grad))
}
