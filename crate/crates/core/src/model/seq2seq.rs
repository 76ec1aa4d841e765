use crate::adam::{adam_step, AdamState};
use crate::error::{Error, Result};
use crate::gru::{GruCell, GruStep};
use crate::params::Parameters;
use crate::rng::Rng;
use crate::tensor::{argmax, axpy, matvec, matvec_t_acc, outer_acc, softmax, softmax_backward, Tensor};

use super::attention::{Attention, AttentionStep};
use super::coverage::Coverage;
use super::encoder::{EncodedSource, Encoder, EncoderTrace};
use super::loss::{cross_entropy, cross_entropy_grad, step_targets, LossMode};
use super::{prefixed, prefixed_mut, ModelConfig};

/// Encoder–decoder with attention and an optional coverage input.
#[derive(Debug, Clone, PartialEq)]
pub struct Seq2Seq {
    pub config: ModelConfig,
    pub encoder: Encoder,
    /// `H × 2H`, maps the final encoder states to `s_0`
    pub bridge_w: Tensor,
    pub bridge_b: Tensor,
    pub attention: Attention,
    /// `(V + 2) × d`; row `V + 1` is BOS, row `V` (EOS) is never read
    pub target_embedding: Tensor,
    pub coverage: Option<Coverage>,
    /// input is `[E y ; c ; a]`, or `[E y ; c]` without coverage
    pub decoder: GruCell,
    /// `(V + 1) × H`
    pub output_w: Tensor,
    pub output_b: Tensor,
}

/// Decoder state between steps.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    pub s: Vec<f64>,
    /// multi-hot over herbs, 1 for every emitted label
    pub indicator: Vec<f64>,
    /// `tanh(Dᵀ W + b)` for the current indicator; empty without coverage
    pub coverage: Vec<f64>,
    pub emitted: Vec<usize>,
    pub step: usize,
}

/// Everything one decoder step produced.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    pub attention: AttentionStep,
    gru: GruStep,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Generation {
    /// every emission in order, repeats included
    pub raw: Vec<usize>,
    /// `raw`, or its first occurrences when deduplicated
    pub herbs: Vec<usize>,
}

/// Teacher-forced activations for one record.
struct RecordTrace {
    enc: EncodedSource,
    enc_trace: EncoderTrace,
    final_state: Vec<f64>,
    s0: Vec<f64>,
    /// decoder state entering each step (clone of the state, with coverage)
    states: Vec<DecoderState>,
    inputs: Vec<usize>,
    outputs: Vec<StepOutput>,
    targets: Vec<Vec<f64>>,
    loss: f64,
}

impl Seq2Seq {
    pub fn new(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let (d, h, v) = (config.embed_dim, config.hidden_dim, config.herb_vocab_size);
        let encoder = Encoder::new(config.source_vocab_size, d, h, rng);
        let bridge_w = Tensor::glorot(&[h, 2 * h], 2 * h, h, rng);
        let bridge_b = Tensor::zeros(&[h]);
        let attention = Attention::new(h, h, rng);
        let target_embedding = Tensor::glorot(&[v + 2, d], v + 2, d, rng);
        let coverage = config.coverage_enabled.then(|| Coverage::new(v, h, rng));
        let input = d + 2 * h + if config.coverage_enabled { h } else { 0 };
        let decoder = GruCell::new(input, h, rng);
        let output_w = Tensor::glorot(&[v + 1, h], h, v + 1, rng);
        let output_b = Tensor::zeros(&[v + 1]);
        Ok(Self {
            config,
            encoder,
            bridge_w,
            bridge_b,
            attention,
            target_embedding,
            coverage,
            decoder,
            output_w,
            output_b,
        })
    }

    pub fn eos(&self) -> usize {
        self.config.eos()
    }

    pub fn bos(&self) -> usize {
        self.config.bos()
    }

    pub fn encode(&self, source: &[usize]) -> Result<EncodedSource> {
        self.encoder.encode(source)
    }

    /// Decoder state before the first step: `s_0 = tanh(W [h→_T ; h←_1] + b)`.
    pub fn initial_state(&self, enc: &EncodedSource) -> DecoderState {
        let s = self.bridge(&enc.final_state());
        let v = self.config.herb_vocab_size;
        let indicator = vec![0.0; v];
        let coverage = match &self.coverage {
            Some(c) => c.forward(&indicator),
            None => Vec::new(),
        };
        DecoderState { s, indicator, coverage, emitted: Vec::new(), step: 0 }
    }

    fn bridge(&self, final_state: &[f64]) -> Vec<f64> {
        let mut s = vec![0.0; self.config.hidden_dim];
        matvec(self.bridge_w.values(), self.bridge_w.cols(), final_state, &mut s);
        for (x, b) in s.iter_mut().zip(self.bridge_b.values()) {
            *x = (*x + b).tanh();
        }
        s
    }

    /// Records `token` as emitted: sets its indicator bit and recomputes the
    /// coverage vector from the full indicator.
    pub fn emit(&self, state: &mut DecoderState, token: usize) -> Result<()> {
        if token >= self.config.herb_vocab_size {
            return Err(Error::Input(format!("cannot emit non-herb id {token}")));
        }
        state.emitted.push(token);
        state.indicator[token] = 1.0;
        if let Some(c) = &self.coverage {
            state.coverage = c.forward(&state.indicator);
        }
        state.step = state.emitted.len();
        Ok(())
    }

    /// One decoder step: attends with `s_{t-1}`, feeds `[E y_prev ; c ; a]`
    /// to the GRU and returns the new state (with `emitted` unchanged) plus
    /// the output distribution over herbs and EOS.
    pub fn decode_step(
        &self,
        state: &DecoderState,
        y_prev: usize,
        enc: &EncodedSource,
        keys: &[f64],
    ) -> Result<(DecoderState, StepOutput)> {
        if state.step > self.config.max_decode_len {
            return Err(Error::Input(format!(
                "decode step {} exceeds max_decode_len {}",
                state.step, self.config.max_decode_len
            )));
        }
        if y_prev == self.eos() || y_prev > self.bos() {
            return Err(Error::Input(format!("y_prev {y_prev} is neither BOS nor a herb")));
        }
        let attention = self.attention.step(&state.s, enc, keys);
        let mut x = Vec::with_capacity(self.decoder.input_dim());
        x.extend_from_slice(self.target_embedding.row(y_prev));
        x.extend_from_slice(&attention.context);
        x.extend_from_slice(&state.coverage);
        let gru = self.decoder.forward(&x, &state.s)?;

        let mut logits = self.output_b.values().to_vec();
        let mut wx = vec![0.0; logits.len()];
        matvec(self.output_w.values(), self.output_w.cols(), &gru.h, &mut wx);
        axpy(1.0, &wx, &mut logits);
        let probs = softmax(&logits)?;

        let mut next = state.clone();
        next.s.clone_from(&gru.h);
        Ok((next, StepOutput { logits, probs, attention, gru }))
    }

    /// Greedy decoding from BOS until EOS or `max_decode_len` emissions.
    /// Repeats are never masked; `dedup` only filters the returned list.
    pub fn generate(&self, source: &[usize], dedup: bool) -> Result<Generation> {
        let enc = self.encode(source)?;
        let keys = self.attention.keys(&enc);
        let mut state = self.initial_state(&enc);
        let mut y_prev = self.bos();
        let mut raw = Vec::new();
        while raw.len() < self.config.max_decode_len {
            let (mut next, out) = self.decode_step(&state, y_prev, &enc, &keys)?;
            let y = argmax(&out.probs);
            if y == self.eos() {
                break;
            }
            self.emit(&mut next, y)?;
            raw.push(y);
            state = next;
            y_prev = y;
        }
        let herbs = if dedup { dedup_first(&raw) } else { raw.clone() };
        Ok(Generation { raw, herbs })
    }

    pub fn loss_mode(&self) -> LossMode {
        if self.config.soft_loss_enabled {
            LossMode::Soft
        } else {
            LossMode::Hard
        }
    }

    fn clip_target<'a>(&self, target: &'a [usize]) -> &'a [usize] {
        &target[..target.len().min(self.config.max_decode_len)]
    }

    fn forward_record(&self, source: &[usize], target: &[usize]) -> Result<RecordTrace> {
        let target = self.clip_target(target);
        let targets = step_targets(target, self.config.herb_vocab_size, self.loss_mode())?;
        let (enc, enc_trace) = self.encoder.encode_traced(source)?;
        let keys = self.attention.keys(&enc);
        let final_state = enc.final_state();
        let mut state = self.initial_state(&enc);
        let s0 = state.s.clone();

        let steps = target.len() + 1;
        let mut states = Vec::with_capacity(steps);
        let mut inputs = Vec::with_capacity(steps);
        let mut outputs = Vec::with_capacity(steps);
        let mut loss = 0.0;
        for t in 0..steps {
            let y_prev = if t == 0 { self.bos() } else { target[t - 1] };
            let (mut next, out) = self.decode_step(&state, y_prev, &enc, &keys)?;
            loss += cross_entropy(&out.probs, &targets[t]);
            if t < target.len() {
                self.emit(&mut next, target[t])?;
            }
            states.push(state);
            inputs.push(y_prev);
            outputs.push(out);
            state = next;
        }
        Ok(RecordTrace { enc, enc_trace, final_state, s0, states, inputs, outputs, targets, loss })
    }

    fn backward_record(&self, trace: &RecordTrace, grads: &mut Seq2Seq) {
        let h = self.config.hidden_dim;
        let d = self.config.embed_dim;
        let enc = &trace.enc;
        let width = 2 * h;
        let mut d_states = vec![0.0; enc.len() * width];
        let mut d_keys = vec![0.0; enc.len() * h];
        let mut carry = vec![0.0; h];
        let mut dx = vec![0.0; self.decoder.input_dim()];

        for t in (0..trace.outputs.len()).rev() {
            let out = &trace.outputs[t];
            let state = &trace.states[t];
            let dp = cross_entropy_grad(&out.probs, &trace.targets[t]);
            let dlogits = softmax_backward(&out.probs, &dp);
            outer_acc(grads.output_w.values_mut(), &dlogits, &out.gru.h);
            axpy(1.0, &dlogits, grads.output_b.values_mut());
            let mut ds = std::mem::replace(&mut carry, vec![0.0; h]);
            matvec_t_acc(self.output_w.values(), h, &dlogits, &mut ds);

            dx.iter_mut().for_each(|v| *v = 0.0);
            self.decoder.backward(&out.gru, &ds, &mut grads.decoder, &mut dx, &mut carry);
            axpy(1.0, &dx[..d], grads.target_embedding.row_mut(trace.inputs[t]));
            self.attention.backward(
                &out.attention,
                &state.s,
                enc,
                &dx[d..d + width],
                &mut grads.attention,
                &mut carry,
                &mut d_states,
                &mut d_keys,
            );
            if let (Some(cov), Some(gcov)) = (&self.coverage, grads.coverage.as_mut()) {
                cov.backward(&state.indicator, &state.coverage, &dx[d + width..], gcov);
            }
        }

        // bridge: s_0 = tanh(W f + b)
        let dpre: Vec<f64> = carry.iter().zip(&trace.s0).map(|(g, s)| g * (1.0 - s * s)).collect();
        outer_acc(grads.bridge_w.values_mut(), &dpre, &trace.final_state);
        axpy(1.0, &dpre, grads.bridge_b.values_mut());
        let mut d_final = vec![0.0; width];
        matvec_t_acc(self.bridge_w.values(), width, &dpre, &mut d_final);
        enc.add_final_state_grad(&d_final, &mut d_states);

        self.attention.keys_backward(enc, &d_keys, &mut grads.attention, &mut d_states);
        self.encoder.backward(&trace.enc_trace, &d_states, &mut grads.encoder);
    }

    /// Teacher-forced loss of one record (targets clipped to `max_decode_len`).
    pub fn record_loss(&self, source: &[usize], target: &[usize]) -> Result<f64> {
        Ok(self.forward_record(source, target)?.loss)
    }

    /// Mean loss over a batch of `(source, target)` pairs.
    pub fn batch_loss(&self, batch: &[(Vec<usize>, Vec<usize>)]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Input("empty batch".into()));
        }
        let mut total = 0.0;
        for (src, tgt) in batch {
            total += self.record_loss(src, tgt)?;
        }
        Ok(total / batch.len() as f64)
    }

    /// Mean batch loss and its gradient (same structure as `self`).
    pub fn loss_and_grad(&self, batch: &[(Vec<usize>, Vec<usize>)]) -> Result<(f64, Seq2Seq)> {
        if batch.is_empty() {
            return Err(Error::Input("empty batch".into()));
        }
        let mut total = self.zeros_like();
        let mut scratch = self.zeros_like();
        let mut loss = 0.0;
        for (i, (src, tgt)) in batch.iter().enumerate() {
            let trace = self.forward_record(src, tgt).map_err(|e| e.context(format!("record {i}")))?;
            for (_, t) in scratch.named_params_mut() {
                t.fill(0.0);
            }
            self.backward_record(&trace, &mut scratch);
            total.add_assign(&scratch);
            loss += trace.loss;
        }
        let scale = 1.0 / batch.len() as f64;
        total.scale(scale);
        Ok((loss * scale, total))
    }

    /// Forward, backward and one Adam update. Returns the pre-update loss.
    pub fn train_step(
        &mut self,
        batch: &[(Vec<usize>, Vec<usize>)],
        opt: &mut AdamState,
    ) -> Result<f64> {
        let (loss, grads) = self.loss_and_grad(batch)?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("loss is {loss}")));
        }
        adam_step(self, &grads, opt)?;
        Ok(loss)
    }
}

/// First occurrence of each token, in emission order.
pub fn dedup_first(tokens: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(tokens.len());
    for &t in tokens {
        if !out.contains(&t) {
            out.push(t);
        }
    }
    out
}

impl Parameters for Seq2Seq {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut v = prefixed("encoder", &self.encoder);
        v.push(("bridge.weight".into(), &self.bridge_w));
        v.push(("bridge.bias".into(), &self.bridge_b));
        v.extend(prefixed("attention", &self.attention));
        v.push(("target_embedding".into(), &self.target_embedding));
        if let Some(c) = &self.coverage {
            v.extend(prefixed("coverage", c));
        }
        v.extend(prefixed("decoder", &self.decoder));
        v.push(("output.weight".into(), &self.output_w));
        v.push(("output.bias".into(), &self.output_b));
        v
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut v = prefixed_mut("encoder", &mut self.encoder);
        v.push(("bridge.weight".into(), &mut self.bridge_w));
        v.push(("bridge.bias".into(), &mut self.bridge_b));
        v.extend(prefixed_mut("attention", &mut self.attention));
        v.push(("target_embedding".into(), &mut self.target_embedding));
        if let Some(c) = &mut self.coverage {
            v.extend(prefixed_mut("coverage", c));
        }
        v.extend(prefixed_mut("decoder", &mut self.decoder));
        v.push(("output.weight".into(), &mut self.output_w));
        v.push(("output.bias".into(), &mut self.output_b));
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::grad_check;
    use crate::model::coverage_vector;

    fn toy_config(coverage: bool, soft: bool) -> ModelConfig {
        ModelConfig {
            source_vocab_size: 9,
            herb_vocab_size: 12,
            embed_dim: 4,
            hidden_dim: 8,
            max_decode_len: 20,
            coverage_enabled: coverage,
            soft_loss_enabled: soft,
        }
    }

    fn toy_batch(rng: &mut Rng, n: usize) -> Vec<(Vec<usize>, Vec<usize>)> {
        (0..n)
            .map(|_| {
                let t = rng.inclusive(1, 5);
                let m = rng.inclusive(1, 3);
                let src = (0..t).map(|_| rng.below(9)).collect();
                (src, rng.sample_distinct(12, m))
            })
            .collect()
    }

    #[test]
    fn step_probabilities_sum_to_one() {
        let mut rng = Rng::new(5);
        let model = Seq2Seq::new(toy_config(true, true), &mut rng).unwrap();
        let enc = model.encode(&[1, 2, 3]).unwrap();
        let keys = model.attention.keys(&enc);
        let mut state = model.initial_state(&enc);
        let mut y = model.bos();
        for tok in [4, 7, 0] {
            let (mut next, out) = model.decode_step(&state, y, &enc, &keys).unwrap();
            assert!((out.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert_eq!(out.probs.len(), 13);
            let w = &out.attention.weights;
            assert!(w.iter().all(|&a| a >= 0.0));
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            model.emit(&mut next, tok).unwrap();
            state = next;
            y = tok;
        }
    }

    #[test]
    fn emitting_flips_one_bit_and_refreshes_coverage() {
        let mut rng = Rng::new(6);
        let model = Seq2Seq::new(toy_config(true, true), &mut rng).unwrap();
        let enc = model.encode(&[3, 1]).unwrap();
        let mut state = model.initial_state(&enc);
        model.emit(&mut state, 2).unwrap();
        let before = state.clone();
        model.emit(&mut state, 9).unwrap();
        let flipped: Vec<usize> = (0..12).filter(|&v| state.indicator[v] != before.indicator[v]).collect();
        assert_eq!(flipped, vec![9]);
        let fresh = coverage_vector(&state.indicator, model.coverage.as_ref().unwrap()).unwrap();
        assert_eq!(state.coverage, fresh.values());
        assert_ne!(state.coverage, before.coverage);
        assert_eq!(state.step, 2);
    }

    #[test]
    fn without_coverage_the_history_has_no_effect() {
        let mut rng = Rng::new(7);
        let model = Seq2Seq::new(toy_config(false, true), &mut rng).unwrap();
        assert!(model.coverage.is_none());
        assert_eq!(model.decoder.input_dim(), 4 + 16);
        assert!(model.named_params().iter().all(|(n, _)| !n.starts_with("coverage")));
        let enc = model.encode(&[3, 1, 4]).unwrap();
        let keys = model.attention.keys(&enc);
        let fresh = model.initial_state(&enc);
        let mut seen = fresh.clone();
        for tok in [0, 5, 11] {
            model.emit(&mut seen, tok).unwrap();
        }
        let (_, a) = model.decode_step(&fresh, 5, &enc, &keys).unwrap();
        let (_, b) = model.decode_step(&seen, 5, &enc, &keys).unwrap();
        assert_eq!(a.logits, b.logits);
    }

    #[test]
    fn decode_step_rejects_bad_inputs() {
        let mut rng = Rng::new(8);
        let model = Seq2Seq::new(toy_config(true, false), &mut rng).unwrap();
        let enc = model.encode(&[1]).unwrap();
        let keys = model.attention.keys(&enc);
        let state = model.initial_state(&enc);
        assert!(model.decode_step(&state, model.eos(), &enc, &keys).is_err());
        let mut long = state.clone();
        long.step = 21;
        assert!(model.decode_step(&long, 0, &enc, &keys).is_err());
        long.step = 20;
        assert!(model.decode_step(&long, 0, &enc, &keys).is_ok());
    }

    #[test]
    fn generation_stays_in_vocabulary_and_length() {
        for seed in 0..5 {
            let mut rng = Rng::new(seed);
            let model = Seq2Seq::new(toy_config(seed % 2 == 0, true), &mut rng).unwrap();
            let g = model.generate(&[1, 2, 3, 4], false).unwrap();
            assert!(g.raw.len() <= 20);
            assert!(g.raw.iter().all(|&y| y < 12));
            let d = model.generate(&[1, 2, 3, 4], true).unwrap();
            assert_eq!(d.raw, g.raw);
            assert_eq!(d.herbs, dedup_first(&g.raw));
        }
    }

    #[test]
    fn dedup_keeps_first_occurrences() {
        assert_eq!(dedup_first(&[0, 1, 0, 2]), vec![0, 1, 2]);
    }

    #[test]
    fn full_model_gradients_match_finite_differences() {
        for (coverage, soft) in [(true, true), (false, false), (true, false)] {
            let mut rng = Rng::new(21);
            let mut model = Seq2Seq::new(toy_config(coverage, soft), &mut rng).unwrap();
            let batch = toy_batch(&mut rng, 1);
            let (_, grads) = model.loss_and_grad(&batch).unwrap();
            let report = grad_check(&mut model, &grads, |m| m.batch_loss(&batch), 1e-4).unwrap();
            assert!(report.passed(), "coverage={coverage} soft={soft}\n{report}");
        }
    }

    #[test]
    fn batch_of_one_equals_duplicated_batch() {
        let mut rng = Rng::new(3);
        let model = Seq2Seq::new(toy_config(true, true), &mut rng).unwrap();
        let one = toy_batch(&mut rng, 1);
        let two = vec![one[0].clone(), one[0].clone()];
        let (mut a, mut b) = (model.clone(), model.clone());
        let mut oa = AdamState::new(1e-3).unwrap();
        let mut ob = AdamState::new(1e-3).unwrap();
        let la = a.train_step(&one, &mut oa).unwrap();
        let lb = b.train_step(&two, &mut ob).unwrap();
        assert_eq!(la.to_bits(), lb.to_bits());
        assert_eq!(a, b);
    }

    #[test]
    fn long_targets_are_clipped_for_training() {
        let mut rng = Rng::new(4);
        let mut cfg = toy_config(true, true);
        cfg.max_decode_len = 2;
        let model = Seq2Seq::new(cfg, &mut rng).unwrap();
        let full = model.record_loss(&[1, 2], &[0, 1, 2, 3]).unwrap();
        let clipped = model.record_loss(&[1, 2], &[0, 1]).unwrap();
        assert_eq!(full, clipped);
        assert!(model.generate(&[1, 2], false).unwrap().raw.len() <= 2);
    }
}
