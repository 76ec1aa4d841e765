use crate::error::{Error, Result};
use crate::params::Parameters;
use crate::rng::Rng;
use crate::tensor::{axpy, dot, matvec, matvec_t_acc, outer_acc, softmax, softmax_backward, Tensor};

use super::EncodedSource;

/// Additive attention: `e_j = vᵀ tanh(W_q s + W_k ĥ_j + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    /// `A × H`
    pub w_query: Tensor,
    /// `A × 2H`
    pub w_key: Tensor,
    /// `A`
    pub bias: Tensor,
    /// `A`
    pub score: Tensor,
}

#[derive(Debug, Clone)]
pub struct AttentionStep {
    /// `T × A` values of `tanh(W_q s + W_k ĥ_j + b)`
    activations: Vec<f64>,
    pub weights: Vec<f64>,
    pub context: Vec<f64>,
}

impl Attention {
    pub fn new(hidden_dim: usize, attn_dim: usize, rng: &mut Rng) -> Self {
        Self {
            w_query: Tensor::glorot(&[attn_dim, hidden_dim], hidden_dim, attn_dim, rng),
            w_key: Tensor::glorot(&[attn_dim, 2 * hidden_dim], 2 * hidden_dim, attn_dim, rng),
            bias: Tensor::zeros(&[attn_dim]),
            score: Tensor::glorot(&[attn_dim], attn_dim, 1, rng),
        }
    }

    fn attn_dim(&self) -> usize {
        self.bias.len()
    }

    /// `W_k ĥ_j` for every position; independent of the decoder state, so
    /// computed once per source.
    pub fn keys(&self, enc: &EncodedSource) -> Vec<f64> {
        let a = self.attn_dim();
        let width = self.w_key.cols();
        let mut keys = vec![0.0; enc.len() * a];
        for j in 0..enc.len() {
            matvec(self.w_key.values(), width, enc.state(j), &mut keys[j * a..(j + 1) * a]);
        }
        keys
    }

    pub fn step(&self, s_prev: &[f64], enc: &EncodedSource, keys: &[f64]) -> AttentionStep {
        let a = self.attn_dim();
        let n = enc.len();
        let mut query = vec![0.0; a];
        matvec(self.w_query.values(), self.w_query.cols(), s_prev, &mut query);
        axpy(1.0, self.bias.values(), &mut query);

        let mut activations = vec![0.0; n * a];
        let mut scores = vec![0.0; n];
        for j in 0..n {
            let act = &mut activations[j * a..(j + 1) * a];
            for i in 0..a {
                act[i] = (query[i] + keys[j * a + i]).tanh();
            }
            scores[j] = dot(self.score.values(), act);
        }
        let weights = softmax(&scores).expect("source is nonempty");
        let mut context = vec![0.0; enc.states.cols()];
        for (j, &w) in weights.iter().enumerate() {
            axpy(w, enc.state(j), &mut context);
        }
        AttentionStep { activations, weights, context }
    }

    /// Backward through one attention step given `dc`. `d_keys` collects the
    /// gradient on [`keys`](Self::keys) so it can be pushed through `W_k`
    /// once per source by [`keys_backward`](Self::keys_backward).
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        step: &AttentionStep,
        s_prev: &[f64],
        enc: &EncodedSource,
        dc: &[f64],
        grads: &mut Attention,
        ds_prev: &mut [f64],
        d_states: &mut [f64],
        d_keys: &mut [f64],
    ) {
        let a = self.attn_dim();
        let n = enc.len();
        let width = enc.states.cols();
        let mut d_weights = vec![0.0; n];
        for j in 0..n {
            d_weights[j] = dot(dc, enc.state(j));
            axpy(step.weights[j], dc, &mut d_states[j * width..(j + 1) * width]);
        }
        let d_scores = softmax_backward(&step.weights, &d_weights);

        let v = self.score.values();
        let mut d_query = vec![0.0; a];
        for j in 0..n {
            let act = &step.activations[j * a..(j + 1) * a];
            axpy(d_scores[j], act, grads.score.values_mut());
            for i in 0..a {
                let dpre = d_scores[j] * v[i] * (1.0 - act[i] * act[i]);
                d_query[i] += dpre;
                d_keys[j * a + i] += dpre;
            }
        }
        outer_acc(grads.w_query.values_mut(), &d_query, s_prev);
        axpy(1.0, &d_query, grads.bias.values_mut());
        matvec_t_acc(self.w_query.values(), self.w_query.cols(), &d_query, ds_prev);
    }

    pub fn keys_backward(
        &self,
        enc: &EncodedSource,
        d_keys: &[f64],
        grads: &mut Attention,
        d_states: &mut [f64],
    ) {
        let a = self.attn_dim();
        let width = enc.states.cols();
        for j in 0..enc.len() {
            let dk = &d_keys[j * a..(j + 1) * a];
            outer_acc(grads.w_key.values_mut(), dk, enc.state(j));
            matvec_t_acc(self.w_key.values(), width, dk, &mut d_states[j * width..(j + 1) * width]);
        }
    }
}

impl Parameters for Attention {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("w_query".into(), &self.w_query),
            ("w_key".into(), &self.w_key),
            ("bias".into(), &self.bias),
            ("score".into(), &self.score),
        ]
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            ("w_query".into(), &mut self.w_query),
            ("w_key".into(), &mut self.w_key),
            ("bias".into(), &mut self.bias),
            ("score".into(), &mut self.score),
        ]
    }
}

/// Context vector and attention weights for decoder state `s_prev`.
pub fn attend(
    s_prev: &Tensor,
    enc: &EncodedSource,
    params: &Attention,
) -> Result<(Tensor, Vec<f64>)> {
    if s_prev.len() != params.w_query.cols() || enc.states.cols() != params.w_key.cols() {
        return Err(Error::Dimension(format!(
            "attention expects state {} and encoder width {}, got {} and {}",
            params.w_query.cols(),
            params.w_key.cols(),
            s_prev.len(),
            enc.states.cols()
        )));
    }
    let keys = params.keys(enc);
    let step = params.step(s_prev.values(), enc, &keys);
    Ok((Tensor::vector(step.context)?, step.weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Encoder;

    fn setup(tokens: &[usize], seed: u64) -> (Attention, EncodedSource, Tensor) {
        let mut rng = Rng::new(seed);
        let enc = Encoder::new(8, 3, 4, &mut rng).encode(tokens).unwrap();
        let att = Attention::new(4, 5, &mut rng);
        let s = Tensor::uniform(&[4], -1.0, 1.0, &mut rng);
        (att, enc, s)
    }

    #[test]
    fn single_position_gets_all_the_weight() {
        let (att, enc, s) = setup(&[3], 1);
        let (c, w) = attend(&s, &enc, &att).unwrap();
        assert_eq!(w, vec![1.0]);
        assert_eq!(c.values(), enc.state(0));
    }

    #[test]
    fn identical_states_give_uniform_weights() {
        let (att, mut enc, s) = setup(&[1, 2, 3, 4], 2);
        let first = enc.state(0).to_vec();
        for j in 1..4 {
            enc.states.row_mut(j).copy_from_slice(&first);
        }
        let (c, w) = attend(&s, &enc, &att).unwrap();
        for x in &w {
            assert!((x - 0.25).abs() < 1e-15);
        }
        for (a, b) in c.values().iter().zip(&first) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn context_is_the_weighted_sum() {
        let (att, enc, s) = setup(&[0, 5, 2, 7, 1], 3);
        let (c, w) = attend(&s, &enc, &att).unwrap();
        // recompute scores and the weighted sum by hand, naive loops
        let a = 5;
        let mut scores = Vec::new();
        for j in 0..enc.len() {
            let mut e = 0.0;
            for i in 0..a {
                let mut pre = att.bias.values()[i];
                for k in 0..4 {
                    pre += att.w_query.values()[i * 4 + k] * s.values()[k];
                }
                for k in 0..8 {
                    pre += att.w_key.values()[i * 8 + k] * enc.state(j)[k];
                }
                e += att.score.values()[i] * pre.tanh();
            }
            scores.push(e);
        }
        let z: f64 = scores.iter().map(|e| e.exp()).sum();
        for j in 0..enc.len() {
            assert!((w[j] - scores[j].exp() / z).abs() < 1e-12);
        }
        for k in 0..8 {
            let want: f64 = (0..enc.len()).map(|j| w[j] * enc.state(j)[k]).sum();
            assert!((c.values()[k] - want).abs() < 1e-12);
        }
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shape_errors() {
        let (att, enc, _) = setup(&[1, 2], 4);
        let bad = Tensor::zeros(&[3]);
        assert!(matches!(attend(&bad, &enc, &att), Err(Error::Dimension(_))));
    }
}
