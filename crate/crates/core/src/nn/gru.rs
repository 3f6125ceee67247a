use rand::Rng;

use super::{gemm, sigmoid, Matrix, Param};
use crate::error::{Error, Result};

/// Single-layer gated recurrent cell.
///
/// Gate rows are stacked as `[z; r; n]`:
///
/// ```text
/// z  = σ(W_z x + U_z h + b_z)
/// r  = σ(W_r x + U_r h + b_r)
/// n  = tanh(W_n x + r ⊙ (U_n h + b_n))
/// h' = (1 - z) ⊙ n + z ⊙ h
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct GruCell {
    /// `3H x I`
    pub w_input: Param,
    /// `3H x H`
    pub w_hidden: Param,
    /// `3H`
    pub bias: Param,
}

/// Activations of one step, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct GruCache {
    x: Matrix,
    h_prev: Matrix,
    z: Matrix,
    r: Matrix,
    n: Matrix,
    /// `U_n h + b_n`
    hn: Matrix,
}

impl GruCell {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        GruCell {
            w_input: Param::zeros(&[3 * hidden, input]),
            w_hidden: Param::zeros(&[3 * hidden, hidden]),
            bias: Param::zeros(&[3 * hidden]),
        }
    }

    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        GruCell {
            w_input: Param::uniform(&[3 * hidden, input], 1.0 / (input as f64).sqrt(), rng),
            w_hidden: Param::uniform(&[3 * hidden, hidden], 1.0 / (hidden as f64).sqrt(), rng),
            bias: Param::zeros(&[3 * hidden]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_input.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_hidden.cols()
    }

    pub fn forward(&self, x: &Matrix, h: &Matrix) -> Result<(Matrix, GruCache)> {
        let (hd, id) = (self.hidden_dim(), self.input_dim());
        if x.cols != id || h.cols != hd || x.rows != h.rows {
            return Err(Error::Shape(format!(
                "gru cell {id}->{hd} got input {}x{} and hidden {}x{}",
                x.rows, x.cols, h.rows, h.cols
            )));
        }
        let b = x.rows;
        let mut gx = vec![0.0; b * 3 * hd];
        let mut gh = vec![0.0; b * 3 * hd];
        gemm(
            b,
            id,
            3 * hd,
            1.0,
            &x.data,
            false,
            &self.w_input.value,
            true,
            0.0,
            &mut gx,
        );
        gemm(
            b,
            hd,
            3 * hd,
            1.0,
            &h.data,
            false,
            &self.w_hidden.value,
            true,
            0.0,
            &mut gh,
        );

        let mut z = Matrix::zeros(b, hd);
        let mut r = Matrix::zeros(b, hd);
        let mut n = Matrix::zeros(b, hd);
        let mut hn = Matrix::zeros(b, hd);
        let mut out = Matrix::zeros(b, hd);
        let bias = &self.bias.value;
        for row in 0..b {
            let gxr = &gx[row * 3 * hd..(row + 1) * 3 * hd];
            let ghr = &gh[row * 3 * hd..(row + 1) * 3 * hd];
            let hp = h.row(row);
            for j in 0..hd {
                let zj = sigmoid(gxr[j] + ghr[j] + bias[j]);
                let rj = sigmoid(gxr[hd + j] + ghr[hd + j] + bias[hd + j]);
                let hnj = ghr[2 * hd + j] + bias[2 * hd + j];
                let nj = (gxr[2 * hd + j] + rj * hnj).tanh();
                let k = row * hd + j;
                z.data[k] = zj;
                r.data[k] = rj;
                hn.data[k] = hnj;
                n.data[k] = nj;
                out.data[k] = (1.0 - zj) * nj + zj * hp[j];
            }
        }
        let cache = GruCache {
            x: x.clone(),
            h_prev: h.clone(),
            z,
            r,
            n,
            hn,
        };
        Ok((out, cache))
    }

    /// Accumulates parameter gradients; returns `(dL/dx, dL/dh_prev)`.
    pub fn backward(&mut self, cache: &GruCache, dh: &Matrix) -> (Matrix, Matrix) {
        let (hd, id) = (self.hidden_dim(), self.input_dim());
        let b = dh.rows;
        let mut dgx = vec![0.0; b * 3 * hd];
        let mut dgh = vec![0.0; b * 3 * hd];
        let mut dh_prev = Matrix::zeros(b, hd);
        for row in 0..b {
            let hp = cache.h_prev.row(row);
            for j in 0..hd {
                let k = row * hd + j;
                let (z, r, n, hn) = (
                    cache.z.data[k],
                    cache.r.data[k],
                    cache.n.data[k],
                    cache.hn.data[k],
                );
                let d = dh.data[k];
                let dn_pre = d * (1.0 - z) * (1.0 - n * n);
                let dz_pre = d * (hp[j] - n) * z * (1.0 - z);
                let dr_pre = dn_pre * hn * r * (1.0 - r);
                let base = row * 3 * hd;
                dgx[base + j] = dz_pre;
                dgx[base + hd + j] = dr_pre;
                dgx[base + 2 * hd + j] = dn_pre;
                dgh[base + j] = dz_pre;
                dgh[base + hd + j] = dr_pre;
                dgh[base + 2 * hd + j] = dn_pre * r;
                dh_prev.data[k] = d * z;
            }
        }
        for row in 0..b {
            let src = &dgh[row * 3 * hd..(row + 1) * 3 * hd];
            for (g, d) in self.bias.grad.iter_mut().zip(src) {
                *g += d;
            }
        }
        gemm(
            3 * hd,
            b,
            id,
            1.0,
            &dgx,
            true,
            &cache.x.data,
            false,
            1.0,
            &mut self.w_input.grad,
        );
        gemm(
            3 * hd,
            b,
            hd,
            1.0,
            &dgh,
            true,
            &cache.h_prev.data,
            false,
            1.0,
            &mut self.w_hidden.grad,
        );
        let mut dx = Matrix::zeros(b, id);
        gemm(
            b,
            3 * hd,
            id,
            1.0,
            &dgx,
            false,
            &self.w_input.value,
            false,
            0.0,
            &mut dx.data,
        );
        gemm(
            b,
            3 * hd,
            hd,
            1.0,
            &dgh,
            false,
            &self.w_hidden.value,
            false,
            1.0,
            &mut dh_prev.data,
        );
        (dx, dh_prev)
    }
}
