//! Multi-label classification baseline over the shared encoder.
//!
//! Scores are `h_T · W_o` with `h_T = [h→_T ; h←_1]`; probabilities are the
//! element-wise sigmoid of the scores. Training uses a pairwise hinge:
//!
//! ```text
//! loss = Σ_{p ∈ gold} Σ_{n ∉ gold} max(0, 1 − (s_p − s_n)) / V
//! ```
//!
//! which is the convention of PyTorch's `MultiLabelMarginLoss`. Selection
//! keeps herbs that are both within the top `k` and above the threshold.

use crate::adam::{adam_step, AdamState};
use crate::error::{Error, Result};
use crate::model::{prefixed, prefixed_mut, EncodedSource, Encoder, EncoderTrace};
use crate::params::Parameters;
use crate::rng::Rng;
use crate::tensor::{axpy, dot, sigmoid, Tensor};

type Forward = (Vec<f64>, Vec<f64>, EncoderTrace, EncodedSource);

pub const DEFAULT_TOP_K: usize = 20;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct MultiLabelConfig {
    pub source_vocab_size: usize,
    pub herb_vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub top_k: usize,
    pub threshold: f64,
}

impl MultiLabelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("source_vocab_size", self.source_vocab_size),
            ("herb_vocab_size", self.herb_vocab_size),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("top_k", self.top_k),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("threshold must be in (0, 1), got {}", self.threshold)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiLabel {
    pub config: MultiLabelConfig,
    pub encoder: Encoder,
    /// `2H × V`
    pub output: Tensor,
}

impl MultiLabel {
    pub fn new(config: MultiLabelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let (d, h, v) = (config.embed_dim, config.hidden_dim, config.herb_vocab_size);
        let encoder = Encoder::new(config.source_vocab_size, d, h, rng);
        let output = Tensor::glorot(&[2 * h, v], 2 * h, v, rng);
        Ok(Self { config, encoder, output })
    }

    /// Raw per-herb scores `h_T · W_o`, plus `h_T`.
    fn forward(&self, source: &[usize]) -> Result<Forward> {
        let (enc, trace) = self.encoder.encode_traced(source)?;
        let h_t = enc.final_state();
        let v = self.config.herb_vocab_size;
        let mut scores = vec![0.0; v];
        for (k, &x) in h_t.iter().enumerate() {
            axpy(x, self.output.row(k), &mut scores);
        }
        Ok((scores, h_t, trace, enc))
    }

    pub fn scores(&self, source: &[usize]) -> Result<Vec<f64>> {
        Ok(self.forward(source)?.0)
    }

    pub fn predict_probs(&self, source: &[usize]) -> Result<Vec<f64>> {
        Ok(self.scores(source)?.into_iter().map(sigmoid).collect())
    }

    pub fn predict(&self, source: &[usize]) -> Result<Vec<usize>> {
        let probs = self.predict_probs(source)?;
        Ok(select_herbs(&probs, self.config.top_k, self.config.threshold))
    }

    pub fn record_loss(&self, source: &[usize], gold: &[usize]) -> Result<f64> {
        maxmargin_loss(&self.scores(source)?, gold)
    }

    pub fn batch_loss(&self, batch: &[(Vec<usize>, Vec<usize>)]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Input("empty batch".into()));
        }
        let mut total = 0.0;
        for (src, gold) in batch {
            total += self.record_loss(src, gold)?;
        }
        Ok(total / batch.len() as f64)
    }

    pub fn loss_and_grad(&self, batch: &[(Vec<usize>, Vec<usize>)]) -> Result<(f64, MultiLabel)> {
        if batch.is_empty() {
            return Err(Error::Input("empty batch".into()));
        }
        let mut total = self.zeros_like();
        let mut scratch = self.zeros_like();
        let mut loss = 0.0;
        let h = self.encoder.hidden_dim();
        for (i, (src, gold)) in batch.iter().enumerate() {
            let ctx = |e: Error| e.context(format!("record {i}"));
            let (scores, h_t, trace, enc) = self.forward(src).map_err(ctx)?;
            loss += maxmargin_loss(&scores, gold).map_err(ctx)?;
            let d_scores = maxmargin_grad(&scores, gold).map_err(ctx)?;

            for (_, t) in scratch.named_params_mut() {
                t.fill(0.0);
            }
            let mut d_final = vec![0.0; 2 * h];
            for k in 0..2 * h {
                axpy(h_t[k], &d_scores, scratch.output.row_mut(k));
                d_final[k] = dot(self.output.row(k), &d_scores);
            }
            let mut d_states = vec![0.0; enc.len() * 2 * h];
            enc.add_final_state_grad(&d_final, &mut d_states);
            self.encoder.backward(&trace, &d_states, &mut scratch.encoder);
            total.add_assign(&scratch);
        }
        let scale = 1.0 / batch.len() as f64;
        total.scale(scale);
        Ok((loss * scale, total))
    }

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

impl Parameters for MultiLabel {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut v = prefixed("encoder", &self.encoder);
        v.push(("output".into(), &self.output));
        v
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut v = prefixed_mut("encoder", &mut self.encoder);
        v.push(("output".into(), &mut self.output));
        v
    }
}

/// Herbs ranked within the top `k` (ties broken by smaller id) whose
/// probability is strictly above `threshold`, returned in ascending id order.
pub fn select_herbs(probs: &[f64], k: usize, threshold: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut out: Vec<usize> =
        order.into_iter().take(k).filter(|&i| probs[i] > threshold).collect();
    out.sort_unstable();
    out
}

fn gold_mask(scores: &[f64], gold: &[usize]) -> Result<Vec<bool>> {
    if gold.is_empty() {
        return Err(Error::Contract("max-margin loss needs at least one gold herb".into()));
    }
    let mut mask = vec![false; scores.len()];
    for &g in gold {
        if g >= scores.len() {
            return Err(Error::Contract(format!("gold herb {g} outside {} scores", scores.len())));
        }
        mask[g] = true;
    }
    Ok(mask)
}

/// Sum of pairwise hinges `max(0, 1 − (s_p − s_n))` over gold `p` and
/// non-gold `n`, divided by the number of herbs.
pub fn maxmargin_loss(scores: &[f64], gold: &[usize]) -> Result<f64> {
    let mask = gold_mask(scores, gold)?;
    let mut total = 0.0;
    for (p, _) in scores.iter().enumerate().filter(|(i, _)| mask[*i]) {
        for (n, _) in scores.iter().enumerate().filter(|(i, _)| !mask[*i]) {
            total += (1.0 - (scores[p] - scores[n])).max(0.0);
        }
    }
    Ok(total / scores.len() as f64)
}

/// Gradient of [`maxmargin_loss`] w.r.t. the scores (zero on the hinge kink).
pub fn maxmargin_grad(scores: &[f64], gold: &[usize]) -> Result<Vec<f64>> {
    let mask = gold_mask(scores, gold)?;
    let scale = 1.0 / scores.len() as f64;
    let mut grad = vec![0.0; scores.len()];
    for p in (0..scores.len()).filter(|&i| mask[i]) {
        for n in (0..scores.len()).filter(|&i| !mask[i]) {
            if 1.0 - (scores[p] - scores[n]) > 0.0 {
                grad[p] -= scale;
                grad[n] += scale;
            }
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::grad_check;
    use proptest::prelude::*;

    fn toy_config() -> MultiLabelConfig {
        MultiLabelConfig {
            source_vocab_size: 7,
            herb_vocab_size: 3,
            embed_dim: 4,
            hidden_dim: 5,
            top_k: DEFAULT_TOP_K,
            threshold: DEFAULT_THRESHOLD,
        }
    }

    #[test]
    fn zero_head_gives_one_half() {
        let mut m = MultiLabel::new(toy_config(), &mut crate::rng::Rng::new(1)).unwrap();
        m.output.fill(0.0);
        assert_eq!(m.predict_probs(&[1, 2, 3]).unwrap(), vec![0.5; 3]);
    }

    #[test]
    fn probabilities_match_hand_computation() {
        let m = MultiLabel::new(toy_config(), &mut crate::rng::Rng::new(2)).unwrap();
        let src = [4, 0, 6, 1];
        let enc = m.encoder.encode(&src).unwrap();
        let h = enc.final_state();
        let probs = m.predict_probs(&src).unwrap();
        for v in 0..3 {
            let mut s = 0.0;
            for k in 0..10 {
                s += h[k] * m.output.values()[k * 3 + v];
            }
            let want = 1.0 / (1.0 + (-s).exp());
            assert!((probs[v] - want).abs() < 1e-12);
            assert!(probs[v] > 0.0 && probs[v] < 1.0);
        }
    }

    #[test]
    fn selection_examples() {
        assert_eq!(select_herbs(&[0.9, 0.8, 0.6, 0.4, 0.95], 2, 0.5), vec![0, 4]);
        assert!(select_herbs(&[0.4; 6], 3, 0.5).is_empty());
        // tie at rank k goes to the smaller id
        assert_eq!(select_herbs(&[0.7, 0.9, 0.7, 0.7], 2, 0.5), vec![0, 1]);
        // threshold is strict
        assert!(select_herbs(&[0.5, 0.5], 2, 0.5).is_empty());
    }

    #[test]
    fn hinge_examples() {
        assert_eq!(maxmargin_loss(&[3.0, 1.5, 0.5], &[0]).unwrap(), 0.0);
        // all equal: every pair contributes 1
        let loss = maxmargin_loss(&[0.2; 5], &[1, 3]).unwrap();
        assert!((loss - (2.0 * 3.0) / 5.0).abs() < 1e-15);
        // one positive, one negative, gap 0.5
        assert_eq!(maxmargin_loss(&[1.0, 0.5], &[0]).unwrap(), 0.5 / 2.0);
        assert!(matches!(maxmargin_loss(&[1.0], &[]), Err(Error::Contract(_))));
    }

    #[test]
    fn full_head_gradients_match_finite_differences() {
        let mut cfg = toy_config();
        cfg.herb_vocab_size = 12;
        cfg.hidden_dim = 8;
        let mut seed = 0;
        loop {
            let mut rng = crate::rng::Rng::new(seed);
            let mut m = MultiLabel::new(cfg.clone(), &mut rng).unwrap();
            let batch = vec![(vec![1, 5, 2, 0], rng.sample_distinct(12, 3))];
            if near_kink(&m.scores(&batch[0].0).unwrap(), &batch[0].1) {
                seed += 1;
                continue;
            }
            let (_, grads) = m.loss_and_grad(&batch).unwrap();
            let report = grad_check(&mut m, &grads, |m| m.batch_loss(&batch), 1e-4).unwrap();
            assert!(report.passed(), "{report}");
            break;
        }
    }

    fn near_kink(scores: &[f64], gold: &[usize]) -> bool {
        let mask = gold_mask(scores, gold).unwrap();
        (0..scores.len()).filter(|&p| mask[p]).any(|p| {
            (0..scores.len())
                .filter(|&n| !mask[n])
                .any(|n| (1.0 - (scores[p] - scores[n])).abs() < 1e-3)
        })
    }

    proptest! {
        #[test]
        fn selection_respects_k_and_threshold(
            probs in prop::collection::vec(0.0f64..1.0, 1..40),
            k in 1usize..25,
            thr in 0.05f64..0.95,
        ) {
            let sel = select_herbs(&probs, k, thr);
            prop_assert!(sel.len() <= k);
            prop_assert!(sel.iter().all(|&i| probs[i] > thr));
        }

        #[test]
        fn hinge_is_zero_iff_margin_holds(
            scores in prop::collection::vec(-3.0f64..3.0, 2..12),
            split in 1usize..11,
        ) {
            let split = split.min(scores.len() - 1);
            let gold: Vec<usize> = (0..split).collect();
            let loss = maxmargin_loss(&scores, &gold).unwrap();
            let min_pos = scores[..split].iter().copied().fold(f64::INFINITY, f64::min);
            let max_neg = scores[split..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(loss == 0.0, min_pos - max_neg >= 1.0);
        }
    }
}
