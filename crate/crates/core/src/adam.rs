//! Adam with bias correction (Kingma & Ba, 2015).

use crate::error::{Error, Result};
use crate::params::Parameters;

#[derive(Debug, Clone)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(learning_rate: f64) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {learning_rate}")));
        }
        Ok(Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[Vec<f64>] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[Vec<f64>] {
        &self.second_moment
    }
}

/// One bias-corrected Adam update of `params` with `grads` (same structure).
/// All gradients are validated before any parameter is touched.
pub fn adam_step<P: Parameters>(params: &mut P, grads: &P, state: &mut AdamState) -> Result<()> {
    let grads = grads.named_params();
    let mut params = params.named_params_mut();
    if params.len() != grads.len() {
        return Err(Error::Dimension(format!(
            "{} parameters but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for ((name, p), (_, g)) in params.iter().zip(&grads) {
        if p.shape() != g.shape() {
            return Err(Error::Dimension(format!(
                "`{name}`: parameter {:?} vs gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
        if let Some(i) = g.values().iter().position(|v| v.is_nan()) {
            return Err(Error::Numeric(format!("NaN gradient in `{name}` at index {i}")));
        }
    }
    if state.first_moment.is_empty() {
        state.first_moment = params.iter().map(|(_, p)| vec![0.0; p.len()]).collect();
        state.second_moment = state.first_moment.clone();
    } else if state.first_moment.len() != params.len()
        || state.first_moment.iter().zip(&params).any(|(m, (_, p))| m.len() != p.len())
    {
        return Err(Error::Dimension("optimizer moments do not match the parameters".into()));
    }

    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (k, ((_, p), (_, g))) in params.iter_mut().zip(&grads).enumerate() {
        let m = &mut state.first_moment[k];
        let v = &mut state.second_moment[k];
        for (((w, &gi), mi), vi) in
            p.values_mut().iter_mut().zip(g.values()).zip(m.iter_mut()).zip(v.iter_mut())
        {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *w -= state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}
