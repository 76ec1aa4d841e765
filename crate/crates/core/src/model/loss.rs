//! Hard and order-tolerant ("soft") cross entropy over a target label list
//! extended with end-of-sequence.
//!
//! The soft target at step `t < M` mixes the step's one-hot gold label with a
//! uniform distribution over the whole gold set:
//!
//! ```text
//! q'_t = (q_v / M + q_t) / 2
//! ```
//!
//! where `q_v` is the multi-hot bag of the `M` gold labels. The closing
//! end-of-sequence step keeps a hard one-hot target, since EOS is not part
//! of the label set.

use crate::error::{Error, Result};

/// Probabilities are clamped to this floor before taking the log.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossMode {
    Hard,
    Soft,
}

fn check_gold(gold: &[usize], herbs: usize) -> Result<()> {
    if gold.is_empty() {
        return Err(Error::Contract("gold sequence is empty".into()));
    }
    let mut seen = vec![false; herbs];
    for &g in gold {
        if g >= herbs {
            return Err(Error::Contract(format!("gold label {g} outside {herbs} herbs")));
        }
        if std::mem::replace(&mut seen[g], true) {
            return Err(Error::Contract(format!("gold sequence repeats label {g}")));
        }
    }
    Ok(())
}

/// Soft target for step `t` of `gold` over `herbs + 1` classes (EOS last).
/// `t == gold.len()` is the EOS step.
pub fn soft_target(gold: &[usize], herbs: usize, t: usize) -> Result<Vec<f64>> {
    check_gold(gold, herbs)?;
    step_target(gold, herbs, t, LossMode::Soft)
}

fn step_target(gold: &[usize], herbs: usize, t: usize, mode: LossMode) -> Result<Vec<f64>> {
    let m = gold.len();
    if t > m {
        return Err(Error::Contract(format!("step {t} beyond target length {m} + EOS")));
    }
    let mut q = vec![0.0; herbs + 1];
    if t == m {
        q[herbs] = 1.0;
        return Ok(q);
    }
    match mode {
        LossMode::Hard => q[gold[t]] = 1.0,
        LossMode::Soft => {
            let share = 1.0 / (2.0 * m as f64);
            for &g in gold {
                q[g] = share;
            }
            q[gold[t]] += 0.5;
        }
    }
    Ok(q)
}

/// Targets for all `M + 1` steps.
pub(crate) fn step_targets(gold: &[usize], herbs: usize, mode: LossMode) -> Result<Vec<Vec<f64>>> {
    check_gold(gold, herbs)?;
    (0..=gold.len()).map(|t| step_target(gold, herbs, t, mode)).collect()
}

/// `−Σ_v q[v] log max(p[v], LOG_CLAMP)`
pub(crate) fn cross_entropy(probs: &[f64], target: &[f64]) -> f64 {
    let mut loss = 0.0;
    for (&p, &q) in probs.iter().zip(target) {
        if q != 0.0 {
            loss -= q * p.max(LOG_CLAMP).ln();
        }
    }
    loss
}

/// Gradient of [`cross_entropy`] w.r.t. the probabilities; zero where the
/// clamp is active.
pub(crate) fn cross_entropy_grad(probs: &[f64], target: &[f64]) -> Vec<f64> {
    probs
        .iter()
        .zip(target)
        .map(|(&p, &q)| if q != 0.0 && p > LOG_CLAMP { -q / p } else { 0.0 })
        .collect()
}

/// Loss of one record: `step_probs` holds `M + 1` distributions over
/// `herbs + 1` classes.
pub fn sequence_loss(step_probs: &[Vec<f64>], gold: &[usize], mode: LossMode) -> Result<f64> {
    if step_probs.len() != gold.len() + 1 {
        return Err(Error::Contract(format!(
            "{} step distributions for {} targets plus EOS",
            step_probs.len(),
            gold.len()
        )));
    }
    let classes = step_probs[0].len();
    if classes < 2 || step_probs.iter().any(|p| p.len() != classes) {
        return Err(Error::Contract("step distributions differ in size".into()));
    }
    let targets = step_targets(gold, classes - 1, mode)?;
    Ok(step_probs.iter().zip(&targets).map(|(p, q)| cross_entropy(p, q)).sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_label_example() {
        let q = soft_target(&[0, 1], 4, 0).unwrap();
        assert_eq!(q, vec![0.75, 0.25, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn single_label_degenerates_to_one_hot() {
        let q = soft_target(&[2], 4, 0).unwrap();
        assert_eq!(q, vec![0.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn three_label_middle_step() {
        let q = soft_target(&[0, 1, 2], 4, 1).unwrap();
        assert!((q[0] - 1.0 / 6.0).abs() < 1e-15);
        assert!((q[2] - 1.0 / 6.0).abs() < 1e-15);
        assert!((q[1] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(q[3], 0.0);
        assert_eq!(q[4], 0.0);
    }

    #[test]
    fn eos_step_is_hard() {
        let q = soft_target(&[3, 1], 4, 2).unwrap();
        assert_eq!(q, vec![0.0, 0.0, 0.0, 0.0, 1.0]);
        assert!(soft_target(&[3, 1], 4, 3).is_err());
    }

    #[test]
    fn duplicates_violate_the_contract() {
        assert!(matches!(soft_target(&[1, 2, 1], 4, 0), Err(Error::Contract(_))));
        assert!(matches!(soft_target(&[], 4, 0), Err(Error::Contract(_))));
    }

    #[test]
    fn perfect_hard_predictions_cost_nothing() {
        let probs = vec![
            vec![0.0, 1.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0, 1.0],
        ];
        assert_eq!(sequence_loss(&probs, &[1, 0], LossMode::Hard).unwrap(), 0.0);
    }

    #[test]
    fn uniform_predictions_hard_loss_closed_form() {
        let v = 6;
        let gold = [4, 0, 2];
        let probs = vec![vec![1.0 / (v + 1) as f64; v + 1]; gold.len() + 1];
        let loss = sequence_loss(&probs, &gold, LossMode::Hard).unwrap();
        let want = (gold.len() + 1) as f64 * ((v + 1) as f64).ln();
        assert!((loss - want).abs() < 1e-12);
    }

    #[test]
    fn swapped_order_beats_a_wrong_label() {
        // gold [A, B] over {A, B, C, D}; predictions concentrate 0.9 of the
        // mass per step and spread the rest over the other classes
        let conc = |labels: [usize; 2]| -> Vec<Vec<f64>> {
            let mut steps = Vec::new();
            for &l in labels.iter().chain([4usize].iter()) {
                let mut p = vec![0.1 / 4.0; 5];
                p[l] = 0.9;
                steps.push(p);
            }
            steps
        };
        let swapped = sequence_loss(&conc([1, 0]), &[0, 1], LossMode::Soft).unwrap();
        // same in-set token at step 0, out-of-set token at step 1
        let wrong = sequence_loss(&conc([1, 2]), &[0, 1], LossMode::Soft).unwrap();
        // direct evaluation of both candidates
        let lo = 0.025f64.ln();
        let hi = 0.9f64.ln();
        let swapped_want = -(0.25 * hi + 0.75 * lo) - (0.75 * lo + 0.25 * hi) - hi;
        let wrong_want = -(0.75 * lo + 0.25 * hi) - (0.25 * lo + 0.75 * lo) - hi;
        assert!((swapped - swapped_want).abs() < 1e-12);
        assert!((wrong - wrong_want).abs() < 1e-12);
        assert!(swapped < wrong);
    }

    #[test]
    fn clamp_keeps_the_loss_finite() {
        let probs = vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        let loss = sequence_loss(&probs, &[0], LossMode::Hard).unwrap();
        assert!((loss + LOG_CLAMP.ln()).abs() < 1e-12);
        assert!(matches!(
            sequence_loss(&probs[..1], &[0], LossMode::Hard),
            Err(Error::Contract(_))
        ));
    }
}
