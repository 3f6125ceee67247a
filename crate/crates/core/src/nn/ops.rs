use rand::Rng;

use super::{gemm, Matrix, Param};
use crate::error::{Error, Result};

/// Gathers rows of `table` (`n x d`) for each id.
pub fn embed(table: &Param, ids: &[usize]) -> Result<Matrix> {
    let (n, d) = (table.rows(), table.cols());
    let mut out = Matrix::zeros(ids.len(), d);
    for (r, &id) in ids.iter().enumerate() {
        if id >= n {
            return Err(Error::IndexOutOfRange { index: id, len: n });
        }
        out.row_mut(r)
            .copy_from_slice(&table.value[id * d..(id + 1) * d]);
    }
    Ok(out)
}

/// Scatter-adds `dout` rows into the gradient rows of the looked-up ids.
pub fn embed_backward(table: &mut Param, ids: &[usize], dout: &Matrix) {
    let d = table.cols();
    debug_assert_eq!(dout.cols, d);
    for (r, &id) in ids.iter().enumerate() {
        let g = &mut table.grad[id * d..(id + 1) * d];
        for (a, b) in g.iter_mut().zip(dout.row(r)) {
            *a += b;
        }
    }
}

/// Affine map `y = W x + b` with `W` stored as `out x in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Linear {
            weight: Param::zeros(&[output, input]),
            bias: Param::zeros(&[output]),
        }
    }

    /// Weights uniform in ±1/sqrt(fan_in), zero bias.
    pub fn init<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        Linear {
            weight: Param::uniform(&[output, input], bound, rng),
            bias: Param::zeros(&[output]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let (out_dim, in_dim) = (self.output_dim(), self.input_dim());
        if x.cols != in_dim {
            return Err(Error::Shape(format!(
                "linear layer expects {in_dim} inputs, got {}",
                x.cols
            )));
        }
        let mut y = Matrix::zeros(x.rows, out_dim);
        for r in 0..x.rows {
            y.row_mut(r).copy_from_slice(&self.bias.value);
        }
        gemm(
            x.rows,
            in_dim,
            out_dim,
            1.0,
            &x.data,
            false,
            &self.weight.value,
            true,
            1.0,
            &mut y.data,
        );
        Ok(y)
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    pub fn backward(&mut self, x: &Matrix, dy: &Matrix) -> Matrix {
        let (out_dim, in_dim) = (self.output_dim(), self.input_dim());
        debug_assert_eq!(dy.cols, out_dim);
        gemm(
            out_dim,
            x.rows,
            in_dim,
            1.0,
            &dy.data,
            true,
            &x.data,
            false,
            1.0,
            &mut self.weight.grad,
        );
        for r in 0..dy.rows {
            for (g, d) in self.bias.grad.iter_mut().zip(dy.row(r)) {
                *g += d;
            }
        }
        let mut dx = Matrix::zeros(x.rows, in_dim);
        gemm(
            x.rows,
            out_dim,
            in_dim,
            1.0,
            &dy.data,
            false,
            &self.weight.value,
            false,
            0.0,
            &mut dx.data,
        );
        dx
    }
}

/// Row-wise log-softmax with max subtraction.
pub fn log_softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows {
        let row = out.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    out
}

/// Per-row `-log softmax(logits)[target]` and the softmax probabilities.
pub fn softmax_cross_entropy(logits: &Matrix, targets: &[usize]) -> Result<(Vec<f64>, Matrix)> {
    if targets.len() != logits.rows {
        return Err(Error::Shape(format!(
            "{} targets for {} rows",
            targets.len(),
            logits.rows
        )));
    }
    let mut logp = log_softmax_rows(logits);
    let mut losses = Vec::with_capacity(targets.len());
    for (r, &t) in targets.iter().enumerate() {
        if t >= logits.cols {
            return Err(Error::IndexOutOfRange {
                index: t,
                len: logits.cols,
            });
        }
        losses.push(-logp.row(r)[t]);
    }
    logp.data.iter_mut().for_each(|v| *v = v.exp());
    Ok((losses, logp))
}

/// `scale[r] * (probs[r] - onehot(targets[r]))` per row.
pub fn cross_entropy_grad(probs: &Matrix, targets: &[usize], scale: &[f64]) -> Matrix {
    let mut g = probs.clone();
    for (r, (&t, &s)) in targets.iter().zip(scale).enumerate() {
        let row = g.row_mut(r);
        row[t] -= 1.0;
        row.iter_mut().for_each(|v| *v *= s);
    }
    g
}
