use crate::error::{Error, Result};
use crate::params::Parameters;
use crate::rng::Rng;
use crate::tensor::{axpy, Tensor};

/// Projection of the emitted-label indicator: `a = tanh(Dᵀ W + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Coverage {
    /// `V × H`, one row per herb
    pub weight: Tensor,
    /// `H`
    pub bias: Tensor,
}

impl Coverage {
    pub fn new(herbs: usize, hidden_dim: usize, rng: &mut Rng) -> Self {
        Self {
            weight: Tensor::glorot(&[herbs, hidden_dim], herbs, hidden_dim, rng),
            bias: Tensor::zeros(&[hidden_dim]),
        }
    }

    /// Assumes a 0/1 indicator of the right length.
    pub(crate) fn forward(&self, indicator: &[f64]) -> Vec<f64> {
        let mut pre = self.bias.values().to_vec();
        for (v, &d) in indicator.iter().enumerate() {
            if d == 1.0 {
                axpy(1.0, self.weight.row(v), &mut pre);
            }
        }
        pre.iter_mut().for_each(|x| *x = x.tanh());
        pre
    }

    pub(crate) fn backward(&self, indicator: &[f64], a: &[f64], da: &[f64], grads: &mut Coverage) {
        let dpre: Vec<f64> = a.iter().zip(da).map(|(a, g)| g * (1.0 - a * a)).collect();
        axpy(1.0, &dpre, grads.bias.values_mut());
        for (v, &d) in indicator.iter().enumerate() {
            if d == 1.0 {
                axpy(1.0, &dpre, grads.weight.row_mut(v));
            }
        }
    }
}

impl Parameters for Coverage {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![("weight".into(), &mut self.weight), ("bias".into(), &mut self.bias)]
    }
}

/// Coverage vector for a multi-hot indicator of emitted herbs.
pub fn coverage_vector(indicator: &[f64], params: &Coverage) -> Result<Tensor> {
    if indicator.len() != params.weight.rows() {
        return Err(Error::Dimension(format!(
            "indicator of length {} for {} herbs",
            indicator.len(),
            params.weight.rows()
        )));
    }
    if let Some(i) = indicator.iter().position(|&d| d != 0.0 && d != 1.0) {
        return Err(Error::Contract(format!(
            "coverage indicator must be binary, entry {i} is {}",
            indicator[i]
        )));
    }
    Tensor::vector(params.forward(indicator))
}
