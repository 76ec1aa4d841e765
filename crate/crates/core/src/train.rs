//! Run configuration, the trained-model bundle used for prediction, and the
//! epoch loop with best-dev selection.

use std::fmt;
use std::io::Write;
use std::path::Path;

use crate::adam::AdamState;
use crate::corpus::{build_vocab, Record, Tokenization, Vocab, RESERVED};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport};
use crate::model::{ModelConfig, Seq2Seq};
use crate::multilabel::{MultiLabel, MultiLabelConfig, DEFAULT_THRESHOLD, DEFAULT_TOP_K};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Variant {
    #[default]
    Seq2Seq,
    MultiLabel,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Seq2Seq => "seq2seq",
            Variant::MultiLabel => "multilabel",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "seq2seq" => Ok(Variant::Seq2Seq),
            "multilabel" => Ok(Variant::MultiLabel),
            other => Err(Error::Config(format!(
                "unknown variant `{other}` (expected seq2seq or multilabel)"
            ))),
        }
    }
}

/// Everything that determines a training run.
///
/// `coverage` and `soft_loss` are `None` unless set explicitly; they default
/// to on for seq2seq and may not be set at all for the multi-label head.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub variant: Variant,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub max_decode_len: usize,
    pub coverage: Option<bool>,
    pub soft_loss: Option<bool>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// evaluate on dev every this many epochs (and after the last)
    pub eval_every: usize,
    pub tokenization: Tokenization,
    pub min_count: usize,
    pub top_k: usize,
    pub threshold: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Seq2Seq,
            embed_dim: ModelConfig::DEFAULT_EMBED_DIM,
            hidden_dim: ModelConfig::DEFAULT_HIDDEN_DIM,
            max_decode_len: ModelConfig::DEFAULT_MAX_DECODE_LEN,
            coverage: None,
            soft_loss: None,
            learning_rate: 1e-3,
            batch_size: 20,
            epochs: 10,
            seed: 0,
            eval_every: 1,
            tokenization: Tokenization::Chars,
            min_count: 1,
            top_k: DEFAULT_TOP_K,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("eval_every", self.eval_every),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("max_decode_len", self.max_decode_len),
            ("min_count", self.min_count),
            ("top_k", self.top_k),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("threshold must be in (0, 1), got {}", self.threshold)));
        }
        if self.variant == Variant::MultiLabel {
            if self.coverage.is_some() {
                return Err(Error::Config("coverage does not apply to the multilabel variant".into()));
            }
            if self.soft_loss.is_some() {
                return Err(Error::Config("soft loss does not apply to the multilabel variant".into()));
            }
        }
        Ok(())
    }

    pub fn coverage_enabled(&self) -> bool {
        self.coverage.unwrap_or(true)
    }

    pub fn soft_loss_enabled(&self) -> bool {
        self.soft_loss.unwrap_or(true)
    }

    fn build_model(&self, source_vocab: usize, herbs: usize, rng: &mut Rng) -> Result<Model> {
        match self.variant {
            Variant::Seq2Seq => {
                let config = ModelConfig {
                    source_vocab_size: source_vocab,
                    herb_vocab_size: herbs,
                    embed_dim: self.embed_dim,
                    hidden_dim: self.hidden_dim,
                    max_decode_len: self.max_decode_len,
                    coverage_enabled: self.coverage_enabled(),
                    soft_loss_enabled: self.soft_loss_enabled(),
                };
                Ok(Model::Seq2Seq(Seq2Seq::new(config, rng)?))
            }
            Variant::MultiLabel => {
                let config = MultiLabelConfig {
                    source_vocab_size: source_vocab,
                    herb_vocab_size: herbs,
                    embed_dim: self.embed_dim,
                    hidden_dim: self.hidden_dim,
                    top_k: self.top_k,
                    threshold: self.threshold,
                };
                Ok(Model::MultiLabel(MultiLabel::new(config, rng)?))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Seq2Seq(Seq2Seq),
    MultiLabel(MultiLabel),
}

impl Model {
    pub fn variant(&self) -> Variant {
        match self {
            Model::Seq2Seq(_) => Variant::Seq2Seq,
            Model::MultiLabel(_) => Variant::MultiLabel,
        }
    }

    pub fn source_vocab_size(&self) -> usize {
        match self {
            Model::Seq2Seq(m) => m.config.source_vocab_size,
            Model::MultiLabel(m) => m.config.source_vocab_size,
        }
    }

    pub fn herb_vocab_size(&self) -> usize {
        match self {
            Model::Seq2Seq(m) => m.config.herb_vocab_size,
            Model::MultiLabel(m) => m.config.herb_vocab_size,
        }
    }

    fn train_step(&mut self, batch: &[(Vec<usize>, Vec<usize>)], opt: &mut AdamState) -> Result<f64> {
        match self {
            Model::Seq2Seq(m) => m.train_step(batch, opt),
            Model::MultiLabel(m) => m.train_step(batch, opt),
        }
    }

    /// Raw herb classes for one encoded source.
    fn emit(&self, source: &[usize]) -> Result<Vec<usize>> {
        match self {
            Model::Seq2Seq(m) => Ok(m.generate(source, false)?.raw),
            Model::MultiLabel(m) => m.predict(source),
        }
    }
}

/// Output of [`Predictor::predict`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prediction {
    /// first occurrence of each emitted herb
    pub herbs: Vec<String>,
    /// every emission, repeats included
    pub raw: Vec<String>,
}

/// A model together with the vocabularies and tokenization it was trained
/// with. Herb class `c` is herb-vocab id `c + 4`.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    pub model: Model,
    pub source_vocab: Vocab,
    pub herb_vocab: Vocab,
    pub tokenization: Tokenization,
}

impl Predictor {
    pub fn new(model: Model, source_vocab: Vocab, herb_vocab: Vocab, tokenization: Tokenization) -> Result<Self> {
        if source_vocab.len() != model.source_vocab_size() {
            return Err(Error::Format(format!(
                "source vocabulary has {} entries, model expects {}",
                source_vocab.len(),
                model.source_vocab_size()
            )));
        }
        if herb_vocab.content_len() != model.herb_vocab_size() {
            return Err(Error::Format(format!(
                "herb vocabulary has {} herbs, model expects {}",
                herb_vocab.content_len(),
                model.herb_vocab_size()
            )));
        }
        Ok(Self { model, source_vocab, herb_vocab, tokenization })
    }

    pub fn encode_source(&self, text: &str) -> Result<Vec<usize>> {
        let tokens = self.tokenization.tokenize(text);
        if tokens.is_empty() {
            return Err(Error::Input("symptom text is empty".into()));
        }
        Ok(self.source_vocab.encode(&tokens))
    }

    /// Herb classes for the record's herbs that the vocabulary knows.
    pub fn encode_herbs(&self, herbs: &[String]) -> Vec<usize> {
        herbs
            .iter()
            .filter_map(|h| self.herb_vocab.get(h))
            .filter(|&id| id >= RESERVED.len())
            .map(|id| id - RESERVED.len())
            .collect()
    }

    fn herb_name(&self, class: usize) -> String {
        self.herb_vocab.token(class + RESERVED.len()).unwrap_or("<unk>").to_string()
    }

    pub fn predict(&self, text: &str) -> Result<Prediction> {
        let src = self.encode_source(text)?;
        let raw: Vec<String> = self.model.emit(&src)?.into_iter().map(|c| self.herb_name(c)).collect();
        let mut herbs: Vec<String> = Vec::with_capacity(raw.len());
        for h in &raw {
            if !herbs.contains(h) {
                herbs.push(h.clone());
            }
        }
        Ok(Prediction { herbs, raw })
    }

    /// Scores raw predictions against the records' herb lists. Gold herbs
    /// unknown to the vocabulary still count as misses.
    pub fn evaluate(&self, records: &[Record], dedup: bool) -> Result<EvalReport> {
        let mut pairs = Vec::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            let p = self.predict(&r.symptoms).map_err(|e| e.context(format!("record {}", i + 1)))?;
            pairs.push((p.raw, r.herbs.clone()));
        }
        evaluate(&pairs, dedup, false)
    }

    /// Number of gold herb mentions in `records` that the herb vocabulary
    /// covers.
    pub fn herb_overlap(&self, records: &[Record]) -> usize {
        records.iter().map(|r| self.encode_herbs(&r.herbs).len()).sum()
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev: Option<EvalReport>,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "epoch={} train_loss={}", self.epoch, self.train_loss)?;
        if let Some(d) = &self.dev {
            write!(
                f,
                " dev_p={} dev_r={} dev_f1={} dev_dup={}",
                d.precision, d.recall, d.f1, d.duplicate_rate
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: Predictor,
    pub best_epoch: usize,
    pub best_dev_f1: f64,
    pub last: Predictor,
    pub epochs: Vec<EpochLog>,
}

pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";

/// Trains on `train`, selecting the epoch with the highest dev F1.
///
/// Each epoch line is written to `log` as soon as it is known. With
/// `checkpoint_dir`, `best.ckpt` is rewritten whenever dev F1 strictly
/// improves and `last.ckpt` after every epoch.
pub fn train(
    config: &RunConfig,
    train: &[Record],
    dev: &[Record],
    checkpoint_dir: Option<&Path>,
    log: &mut dyn Write,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    if dev.is_empty() {
        return Err(Error::Data("dev set is empty".into()));
    }
    for (i, r) in train.iter().chain(dev).enumerate() {
        r.validate().map_err(|e| e.context(format!("record {}", i + 1)))?;
    }
    let (source_vocab, herb_vocab) = build_vocab(train, config.tokenization, config.min_count);
    let mut rng = Rng::new(config.seed);
    let model = config.build_model(source_vocab.len(), herb_vocab.content_len(), &mut rng)?;
    let mut current = Predictor::new(model, source_vocab, herb_vocab, config.tokenization)?;

    let data: Vec<(Vec<usize>, Vec<usize>)> = train
        .iter()
        .map(|r| Ok((current.encode_source(&r.symptoms)?, current.encode_herbs(&r.herbs))))
        .collect::<Result<_>>()?;
    let mut opt = AdamState::new(config.learning_rate)?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut best: Option<(Predictor, usize, f64)> = None;
    let mut epochs = Vec::with_capacity(config.epochs);
    if let Some(dir) = checkpoint_dir {
        std::fs::create_dir_all(dir)
            .map_err(|e| Error::Data(format!("cannot create {}: {e}", dir.display())))?;
    }

    for epoch in 1..=config.epochs {
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut batch = Vec::with_capacity(config.batch_size);
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| data[i].clone()));
            let loss = current.model.train_step(&batch, &mut opt).map_err(|e| match e {
                Error::Numeric(m) => Error::Numeric(format!("epoch {epoch} batch {}: {m}", b + 1)),
                other => other.context(format!("epoch {epoch} batch {}", b + 1)),
            })?;
            loss_sum += loss * chunk.len() as f64;
        }
        let train_loss = loss_sum / data.len() as f64;

        let dev_report = if epoch % config.eval_every == 0 || epoch == config.epochs {
            Some(current.evaluate(dev, true)?)
        } else {
            None
        };
        let line = EpochLog { epoch, train_loss, dev: dev_report };
        writeln!(log, "{line}")?;
        log.flush()?;

        if let Some(d) = &line.dev {
            if best.as_ref().map_or(true, |(_, _, f1)| d.f1 > *f1) {
                best = Some((current.clone(), epoch, d.f1));
                if let Some(dir) = checkpoint_dir {
                    crate::checkpoint::save(&current, &dir.join(BEST_CHECKPOINT))?;
                }
            }
        }
        if let Some(dir) = checkpoint_dir {
            crate::checkpoint::save(&current, &dir.join(LAST_CHECKPOINT))?;
        }
        epochs.push(line);
    }

    let (best, best_epoch, best_dev_f1) = best.expect("the last epoch is always evaluated");
    Ok(TrainOutcome { best, best_epoch, best_dev_f1, last: current, epochs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{gen_synthetic, SyntheticSpec};

    fn small() -> RunConfig {
        RunConfig {
            embed_dim: 6,
            hidden_dim: 8,
            epochs: 2,
            batch_size: 8,
            tokenization: Tokenization::Whitespace,
            ..RunConfig::default()
        }
    }

    fn data() -> (Vec<Record>, Vec<Record>) {
        let recs = gen_synthetic(&SyntheticSpec { records: 60, seed: 2, ..SyntheticSpec::default() }).unwrap();
        (recs[..50].to_vec(), recs[50..].to_vec())
    }

    #[test]
    fn defaults() {
        let c = RunConfig::default();
        assert_eq!((c.embed_dim, c.hidden_dim, c.batch_size, c.max_decode_len), (100, 300, 20, 20));
        assert_eq!(c.learning_rate, 1e-3);
        assert!(c.coverage_enabled() && c.soft_loss_enabled());
    }

    #[test]
    fn validation() {
        assert!(RunConfig { epochs: 0, ..small() }.validate().is_err());
        assert!(RunConfig { batch_size: 0, ..small() }.validate().is_err());
        let ml = RunConfig { variant: Variant::MultiLabel, ..small() };
        assert!(ml.validate().is_ok());
        assert!(RunConfig { coverage: Some(false), ..ml.clone() }.validate().is_err());
        assert!(RunConfig { soft_loss: Some(true), ..ml }.validate().is_err());
    }

    #[test]
    fn log_lines_are_deterministic() {
        let (tr, dv) = data();
        let mut a = Vec::new();
        let mut b = Vec::new();
        train(&small(), &tr, &dv, None, &mut a).unwrap();
        train(&small(), &tr, &dv, None, &mut b).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with("epoch=1 train_loss="));
        assert!(text.contains(" dev_f1="));
    }

    #[test]
    fn eval_cadence_skips_epochs() {
        let (tr, dv) = data();
        let cfg = RunConfig { epochs: 3, eval_every: 2, ..small() };
        let out = train(&cfg, &tr, &dv, None, &mut std::io::sink()).unwrap();
        let evaluated: Vec<bool> = out.epochs.iter().map(|e| e.dev.is_some()).collect();
        assert_eq!(evaluated, vec![false, true, true]);
    }

    #[test]
    fn best_predictor_reproduces_logged_f1() {
        let (tr, dv) = data();
        for variant in [Variant::Seq2Seq, Variant::MultiLabel] {
            let cfg = RunConfig { variant, ..small() };
            let out = train(&cfg, &tr, &dv, None, &mut std::io::sink()).unwrap();
            assert_eq!(out.best.evaluate(&dv, true).unwrap().f1, out.best_dev_f1);
        }
    }

    #[test]
    fn predictions_stay_in_bounds() {
        let (tr, dv) = data();
        let out = train(&small(), &tr, &dv, None, &mut std::io::sink()).unwrap();
        let p = out.last.predict("s01 s02 s03").unwrap();
        assert!(p.raw.len() <= 20 && p.herbs.len() <= p.raw.len());
        assert!(matches!(out.last.predict("   "), Err(Error::Input(_))));
    }
}
