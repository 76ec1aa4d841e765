use crate::error::{Error, Result};
use crate::gru::{GruCell, GruStep};
use crate::params::Parameters;
use crate::rng::Rng;
use crate::tensor::{axpy, Tensor};

use super::{prefixed, prefixed_mut};

/// Source embedding plus forward and backward GRUs.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    /// `source_vocab × d`
    pub embedding: Tensor,
    pub forward: GruCell,
    pub backward: GruCell,
}

/// Per-position encoder states: row `t` is `[h→_t ; h←_t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSource {
    pub states: Tensor,
    hidden: usize,
}

/// Forward activations kept for backpropagation.
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    tokens: Vec<usize>,
    forward: Vec<GruStep>,
    /// indexed by source position, not by processing order
    backward: Vec<GruStep>,
}

impl EncodedSource {
    pub fn len(&self) -> usize {
        self.states.rows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden
    }

    pub fn state(&self, t: usize) -> &[f64] {
        self.states.row(t)
    }

    /// `[h→_T ; h←_1]`: the last state of each direction.
    pub fn final_state(&self) -> Vec<f64> {
        let h = self.hidden;
        let mut out = Vec::with_capacity(2 * h);
        out.extend_from_slice(&self.state(self.len() - 1)[..h]);
        out.extend_from_slice(&self.state(0)[h..]);
        out
    }

    /// Routes a gradient on [`final_state`](Self::final_state) into a
    /// `T × 2H` gradient buffer over the states.
    pub fn add_final_state_grad(&self, d_final: &[f64], d_states: &mut [f64]) {
        let h = self.hidden;
        let last = (self.len() - 1) * 2 * h;
        axpy(1.0, &d_final[..h], &mut d_states[last..last + h]);
        axpy(1.0, &d_final[h..], &mut d_states[h..2 * h]);
    }
}

impl Encoder {
    pub fn new(vocab: usize, embed_dim: usize, hidden_dim: usize, rng: &mut Rng) -> Self {
        Self {
            embedding: Tensor::glorot(&[vocab, embed_dim], vocab, embed_dim, rng),
            forward: GruCell::new(embed_dim, hidden_dim, rng),
            backward: GruCell::new(embed_dim, hidden_dim, rng),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.forward.hidden_dim()
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.rows()
    }

    pub fn encode(&self, tokens: &[usize]) -> Result<EncodedSource> {
        self.encode_traced(tokens).map(|(enc, _)| enc)
    }

    pub fn encode_traced(&self, tokens: &[usize]) -> Result<(EncodedSource, EncoderTrace)> {
        if tokens.is_empty() {
            return Err(Error::Input("empty source sequence".into()));
        }
        let vocab = self.vocab_size();
        if let Some(&bad) = tokens.iter().find(|&&t| t >= vocab) {
            return Err(Error::Input(format!("source id {bad} outside vocabulary of {vocab}")));
        }
        let h = self.hidden_dim();
        let n = tokens.len();

        let mut forward = Vec::with_capacity(n);
        let mut state = vec![0.0; h];
        for &tok in tokens {
            let step = self.forward.forward_unchecked(self.embedding.row(tok), &state);
            state.clone_from(&step.h);
            forward.push(step);
        }
        let mut backward = Vec::with_capacity(n);
        state.iter_mut().for_each(|v| *v = 0.0);
        for &tok in tokens.iter().rev() {
            let step = self.backward.forward_unchecked(self.embedding.row(tok), &state);
            state.clone_from(&step.h);
            backward.push(step);
        }
        backward.reverse();

        let mut states = Vec::with_capacity(n * 2 * h);
        for t in 0..n {
            states.extend_from_slice(&forward[t].h);
            states.extend_from_slice(&backward[t].h);
        }
        let enc = EncodedSource { states: Tensor::matrix(n, 2 * h, states)?, hidden: h };
        Ok((enc, EncoderTrace { tokens: tokens.to_vec(), forward, backward }))
    }

    /// Backpropagates a `T × 2H` gradient on the encoder states.
    pub fn backward(&self, trace: &EncoderTrace, d_states: &[f64], grads: &mut Encoder) {
        let h = self.hidden_dim();
        let n = trace.tokens.len();
        let d = self.embedding.cols();
        let mut dx = vec![0.0; d];

        let mut carry = vec![0.0; h];
        for t in (0..n).rev() {
            let mut dh = d_states[t * 2 * h..t * 2 * h + h].to_vec();
            axpy(1.0, &carry, &mut dh);
            carry.iter_mut().for_each(|v| *v = 0.0);
            dx.iter_mut().for_each(|v| *v = 0.0);
            self.forward.backward(&trace.forward[t], &dh, &mut grads.forward, &mut dx, &mut carry);
            axpy(1.0, &dx, grads.embedding.row_mut(trace.tokens[t]));
        }

        carry.iter_mut().for_each(|v| *v = 0.0);
        for t in 0..n {
            let mut dh = d_states[t * 2 * h + h..(t + 1) * 2 * h].to_vec();
            axpy(1.0, &carry, &mut dh);
            carry.iter_mut().for_each(|v| *v = 0.0);
            dx.iter_mut().for_each(|v| *v = 0.0);
            self.backward.backward(&trace.backward[t], &dh, &mut grads.backward, &mut dx, &mut carry);
            axpy(1.0, &dx, grads.embedding.row_mut(trace.tokens[t]));
        }
    }
}

impl Parameters for Encoder {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut v = vec![("embedding".to_string(), &self.embedding)];
        v.extend(prefixed("forward", &self.forward));
        v.extend(prefixed("backward", &self.backward));
        v
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut v = vec![("embedding".to_string(), &mut self.embedding)];
        v.extend(prefixed_mut("forward", &mut self.forward));
        v.extend(prefixed_mut("backward", &mut self.backward));
        v
    }
}

/// Runs both directions over `tokens` with zero initial states.
pub fn encode(tokens: &[usize], params: &Encoder) -> Result<EncodedSource> {
    params.encode(tokens)
}
