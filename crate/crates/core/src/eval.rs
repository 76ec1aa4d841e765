//! Micro-averaged precision, recall and F1 over predicted/gold herb sets,
//! and the duplicate rate of raw decoder emissions.

use std::collections::HashSet;
use std::fmt;
use std::hash::Hash;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counts {
    pub true_pos: usize,
    pub false_pos: usize,
    pub false_neg: usize,
}

impl Counts {
    fn add(&mut self, o: Counts) {
        self.true_pos += o.true_pos;
        self.false_pos += o.false_pos;
        self.false_neg += o.false_neg;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub counts: Counts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub duplicate_rate: f64,
    pub per_record: Option<Vec<Counts>>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl EvalReport {
    fn from_counts(counts: Counts, per_record: Option<Vec<Counts>>) -> Self {
        let precision = ratio(counts.true_pos, counts.true_pos + counts.false_pos);
        let recall = ratio(counts.true_pos, counts.true_pos + counts.false_neg);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self { counts, precision, recall, f1, duplicate_rate: 0.0, per_record }
    }

    /// `key=value` lines, one metric each, at full precision.
    pub fn key_values(&self) -> String {
        format!(
            "micro_p={}\nmicro_r={}\nmicro_f1={}\ndup_rate={}\ntp={}\nfp={}\nfn={}",
            self.precision,
            self.recall,
            self.f1,
            self.duplicate_rate,
            self.counts.true_pos,
            self.counts.false_pos,
            self.counts.false_neg
        )
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.counts;
        writeln!(f, "{:<10} {:>8}", "precision", format!("{:.4}", self.precision))?;
        writeln!(f, "{:<10} {:>8}", "recall", format!("{:.4}", self.recall))?;
        writeln!(f, "{:<10} {:>8}", "f1", format!("{:.4}", self.f1))?;
        writeln!(f, "{:<10} {:>8}", "dup_rate", format!("{:.4}", self.duplicate_rate))?;
        writeln!(f, "{:<10} {:>8}", "tp", c.true_pos)?;
        writeln!(f, "{:<10} {:>8}", "fp", c.false_pos)?;
        writeln!(f, "{:<10} {:>8}", "fn", c.false_neg)?;
        write!(f, "{}", self.key_values())
    }
}

fn record_counts<T: Eq + Hash>(predicted: &[T], gold: &[T], dedup: bool) -> Result<Counts> {
    let gold: HashSet<&T> = gold.iter().collect();
    if gold.is_empty() {
        return Err(Error::Input("gold set is empty".into()));
    }
    let mut seen = HashSet::new();
    let mut c = Counts::default();
    for p in predicted {
        let first = seen.insert(p);
        if !first && dedup {
            continue;
        }
        if first && gold.contains(p) {
            c.true_pos += 1;
        } else {
            c.false_pos += 1;
        }
    }
    c.false_neg = gold.len() - c.true_pos;
    Ok(c)
}

fn aggregate<T: Eq + Hash>(pairs: &[(Vec<T>, Vec<T>)], dedup: bool, keep: bool) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::Input("no prediction/gold pairs to score".into()));
    }
    let mut total = Counts::default();
    let mut per = Vec::new();
    for (i, (pred, gold)) in pairs.iter().enumerate() {
        let c = record_counts(pred, gold, dedup).map_err(|e| e.context(format!("pair {i}")))?;
        total.add(c);
        if keep {
            per.push(c);
        }
    }
    Ok(EvalReport::from_counts(total, keep.then_some(per)))
}

/// Micro P/R/F1 over `(predicted, gold)` pairs. Predictions are deduplicated
/// before comparison.
pub fn micro_prf<T: Eq + Hash>(pairs: &[(Vec<T>, Vec<T>)]) -> Result<EvalReport> {
    aggregate(pairs, true, false)
}

/// Scores raw emissions and fills in the duplicate rate. With
/// `dedup = false`, every repeated emission counts as a false positive.
pub fn evaluate<T: Eq + Hash>(
    pairs: &[(Vec<T>, Vec<T>)],
    dedup: bool,
    per_record: bool,
) -> Result<EvalReport> {
    let mut report = aggregate(pairs, dedup, per_record)?;
    let raw: Vec<&[T]> = pairs.iter().map(|(p, _)| p.as_slice()).collect();
    report.duplicate_rate = repetition_rate(&raw);
    Ok(report)
}

/// `(total − unique per record) / total` over raw emission lists.
pub fn repetition_rate<T: Eq + Hash, L: AsRef<[T]>>(raw: &[L]) -> f64 {
    let mut total = 0;
    let mut unique = 0;
    for list in raw {
        let list = list.as_ref();
        total += list.len();
        unique += list.iter().collect::<HashSet<_>>().len();
    }
    ratio(total - unique, total)
}
