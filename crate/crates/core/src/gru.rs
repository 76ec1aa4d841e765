//! Gated recurrent unit (Cho et al. 2014) with a hand-written backward pass.
//!
//! Gate weights are stacked row-wise in the order update (z), reset (r),
//! candidate (n):
//!
//! ```text
//! z  = σ(W_z x + U_z h + b_z)
//! r  = σ(W_r x + U_r h + b_r)
//! n  = tanh(W_n x + U_n (r ⊙ h) + b_n)
//! h' = (1 − z) ⊙ h + z ⊙ n
//! ```

use crate::error::{Error, Result};
use crate::params::Parameters;
use crate::rng::Rng;
use crate::tensor::{matvec, matvec_t_acc, outer_acc, sigmoid, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct GruCell {
    /// `3H × d_in`
    pub w_x: Tensor,
    /// `3H × H`
    pub w_h: Tensor,
    /// `3H`
    pub bias: Tensor,
}

/// Activations saved by [`GruCell::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct GruStep {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub n: Vec<f64>,
    pub rh: Vec<f64>,
    pub h: Vec<f64>,
}

impl GruCell {
    pub fn new(input_dim: usize, hidden_dim: usize, rng: &mut Rng) -> Self {
        Self {
            w_x: Tensor::glorot(&[3 * hidden_dim, input_dim], input_dim, hidden_dim, rng),
            w_h: Tensor::glorot(&[3 * hidden_dim, hidden_dim], hidden_dim, hidden_dim, rng),
            bias: Tensor::zeros(&[3 * hidden_dim]),
        }
    }

    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            w_x: Tensor::zeros(&[3 * hidden_dim, input_dim]),
            w_h: Tensor::zeros(&[3 * hidden_dim, hidden_dim]),
            bias: Tensor::zeros(&[3 * hidden_dim]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_x.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_h.cols()
    }

    pub fn forward(&self, x: &[f64], h_prev: &[f64]) -> Result<GruStep> {
        let (d, h) = (self.input_dim(), self.hidden_dim());
        if x.len() != d || h_prev.len() != h {
            return Err(Error::Dimension(format!(
                "gru cell expects input {d} and hidden {h}, got {} and {}",
                x.len(),
                h_prev.len()
            )));
        }
        Ok(self.forward_unchecked(x, h_prev))
    }

    pub(crate) fn forward_unchecked(&self, x: &[f64], h_prev: &[f64]) -> GruStep {
        let (d, hd) = (self.input_dim(), self.hidden_dim());
        let wx = self.w_x.values();
        let wh = self.w_h.values();
        let b = self.bias.values();

        let mut pre = vec![0.0; 3 * hd];
        matvec(wx, d, x, &mut pre);
        let mut hz_r = vec![0.0; 2 * hd];
        matvec(&wh[..2 * hd * hd], hd, h_prev, &mut hz_r);

        let mut z = vec![0.0; hd];
        let mut r = vec![0.0; hd];
        for i in 0..hd {
            z[i] = sigmoid(pre[i] + hz_r[i] + b[i]);
            r[i] = sigmoid(pre[hd + i] + hz_r[hd + i] + b[hd + i]);
        }
        let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
        let mut un = vec![0.0; hd];
        matvec(&wh[2 * hd * hd..], hd, &rh, &mut un);
        let mut n = vec![0.0; hd];
        let mut h = vec![0.0; hd];
        for i in 0..hd {
            n[i] = (pre[2 * hd + i] + un[i] + b[2 * hd + i]).tanh();
            h[i] = (1.0 - z[i]) * h_prev[i] + z[i] * n[i];
        }
        GruStep { x: x.to_vec(), h_prev: h_prev.to_vec(), z, r, n, rh, h }
    }

    /// Backpropagates `dh` through one step. Parameter gradients are
    /// accumulated into `grads`; input and previous-state gradients are
    /// accumulated into `dx` and `dh_prev`.
    pub fn backward(
        &self,
        step: &GruStep,
        dh: &[f64],
        grads: &mut GruCell,
        dx: &mut [f64],
        dh_prev: &mut [f64],
    ) {
        let (d, hd) = (self.input_dim(), self.hidden_dim());
        let wx = self.w_x.values();
        let wh = self.w_h.values();

        // pre-activation gradients, stacked [z; r; n]
        let mut da = vec![0.0; 3 * hd];
        for i in 0..hd {
            let (z, n) = (step.z[i], step.n[i]);
            dh_prev[i] += dh[i] * (1.0 - z);
            da[i] = dh[i] * (n - step.h_prev[i]) * z * (1.0 - z);
            da[2 * hd + i] = dh[i] * z * (1.0 - n * n);
        }
        let da_n = &da[2 * hd..].to_vec();
        let mut drh = vec![0.0; hd];
        matvec_t_acc(&wh[2 * hd * hd..], hd, da_n, &mut drh);
        for i in 0..hd {
            let r = step.r[i];
            dh_prev[i] += drh[i] * r;
            da[hd + i] = drh[i] * step.h_prev[i] * r * (1.0 - r);
        }

        outer_acc(grads.w_x.values_mut(), &da, &step.x);
        {
            let gwh = grads.w_h.values_mut();
            outer_acc(&mut gwh[..2 * hd * hd], &da[..2 * hd], &step.h_prev);
            outer_acc(&mut gwh[2 * hd * hd..], da_n, &step.rh);
        }
        for (g, v) in grads.bias.values_mut().iter_mut().zip(&da) {
            *g += v;
        }
        matvec_t_acc(wx, d, &da, dx);
        matvec_t_acc(&wh[..2 * hd * hd], hd, &da[..2 * hd], dh_prev);
    }
}

impl Parameters for GruCell {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("w_x".into(), &self.w_x),
            ("w_h".into(), &self.w_h),
            ("bias".into(), &self.bias),
        ]
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            ("w_x".into(), &mut self.w_x),
            ("w_h".into(), &mut self.w_h),
            ("bias".into(), &mut self.bias),
        ]
    }
}

/// One GRU update on tensors: returns the new hidden state.
pub fn gru_cell(x: &Tensor, h_prev: &Tensor, params: &GruCell) -> Result<Tensor> {
    let step = params.forward(x.values(), h_prev.values())?;
    Tensor::vector(step.h)
}
