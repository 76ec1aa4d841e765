use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use sgs2s::checkpoint;
use sgs2s::corpus::{
    gen_synthetic, length_stats, load_records, normalize_record, read_corpus, split_dataset,
    write_corpus, AliasTable, SyntheticSpec,
};
use sgs2s::train::{train, RunConfig};
use sgs2s::{Error, Result};

/// Symptom-to-herb prescription generation.
#[derive(Parser)]
#[command(name = "sgs2s", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model, writing best.ckpt, last.ckpt and train.log to --out.
    Train(TrainArgs),
    /// Score a checkpoint on a corpus file.
    Eval(EvalArgs),
    /// Predict herbs for one symptom description.
    Predict(PredictArgs),
    /// Generate a synthetic corpus.
    Synth(SynthArgs),
    /// Print herb-list length statistics of a corpus file.
    Stats(StatsArgs),
    /// Normalize herb lists against an alias table, optionally splitting
    /// the result into train/dev/test files.
    Normalize(NormalizeArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    dev: PathBuf,
    /// checkpoint and log directory
    #[arg(long)]
    out: PathBuf,
    /// TOML file with run settings; flags given here take precedence
    #[arg(long)]
    config: Option<PathBuf>,
    /// alias table applied to both corpora before training
    #[arg(long)]
    aliases: Option<PathBuf>,
    #[command(flatten)]
    run: RunFlags,
}

/// Run settings; every field is optional so that unset flags fall back to
/// the config file and then to the defaults.
#[derive(Args, Deserialize, Default)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct RunFlags {
    /// seq2seq or multilabel
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    max_decode_len: Option<usize>,
    /// feed the coverage vector to the decoder (seq2seq only)
    #[arg(long)]
    coverage: Option<bool>,
    /// order-tolerant soft cross entropy (seq2seq only)
    #[arg(long)]
    soft_loss: Option<bool>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// evaluate on dev every N epochs
    #[arg(long)]
    eval_every: Option<usize>,
    /// chars or whitespace
    #[arg(long)]
    tokenization: Option<String>,
    /// source tokens seen fewer times map to <unk>
    #[arg(long)]
    min_count: Option<usize>,
    /// multilabel: keep at most this many herbs
    #[arg(long)]
    top_k: Option<usize>,
    /// multilabel: minimum probability
    #[arg(long)]
    threshold: Option<f64>,
}

impl RunFlags {
    fn or(self, file: RunFlags) -> RunFlags {
        RunFlags {
            variant: self.variant.or(file.variant),
            embed_dim: self.embed_dim.or(file.embed_dim),
            hidden_dim: self.hidden_dim.or(file.hidden_dim),
            max_decode_len: self.max_decode_len.or(file.max_decode_len),
            coverage: self.coverage.or(file.coverage),
            soft_loss: self.soft_loss.or(file.soft_loss),
            learning_rate: self.learning_rate.or(file.learning_rate),
            batch_size: self.batch_size.or(file.batch_size),
            epochs: self.epochs.or(file.epochs),
            seed: self.seed.or(file.seed),
            eval_every: self.eval_every.or(file.eval_every),
            tokenization: self.tokenization.or(file.tokenization),
            min_count: self.min_count.or(file.min_count),
            top_k: self.top_k.or(file.top_k),
            threshold: self.threshold.or(file.threshold),
        }
    }

    fn resolve(self) -> Result<RunConfig> {
        let d = RunConfig::default();
        let config = RunConfig {
            variant: self.variant.as_deref().map(str::parse).transpose()?.unwrap_or(d.variant),
            embed_dim: self.embed_dim.unwrap_or(d.embed_dim),
            hidden_dim: self.hidden_dim.unwrap_or(d.hidden_dim),
            max_decode_len: self.max_decode_len.unwrap_or(d.max_decode_len),
            coverage: self.coverage,
            soft_loss: self.soft_loss,
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            epochs: self.epochs.unwrap_or(d.epochs),
            seed: self.seed.unwrap_or(d.seed),
            eval_every: self.eval_every.unwrap_or(d.eval_every),
            tokenization: self
                .tokenization
                .as_deref()
                .map(str::parse)
                .transpose()?
                .unwrap_or(d.tokenization),
            min_count: self.min_count.unwrap_or(d.min_count),
            top_k: self.top_k.unwrap_or(d.top_k),
            threshold: self.threshold.unwrap_or(d.threshold),
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    aliases: Option<PathBuf>,
    /// score raw emissions, counting every repeat as a false positive
    #[arg(long)]
    no_dedup: bool,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// also print every raw emission, repeats included
    #[arg(long)]
    raw: bool,
    /// symptom text; read from stdin when absent
    text: Option<String>,
}

#[derive(Args)]
struct SynthArgs {
    /// output corpus file, `-` for stdout
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 30)]
    symptoms: usize,
    #[arg(long, default_value_t = 40)]
    herbs: usize,
    #[arg(long, default_value_t = 1)]
    fanout_min: usize,
    #[arg(long, default_value_t = 2)]
    fanout_max: usize,
    #[arg(long, default_value_t = 3)]
    tokens_min: usize,
    #[arg(long, default_value_t = 6)]
    tokens_max: usize,
    #[arg(long, default_value_t = 16)]
    max_herbs: usize,
    #[arg(long, default_value_t = 2200)]
    records: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct StatsArgs {
    corpus: PathBuf,
    /// report the share of records with at most this many herbs
    #[arg(long, default_value_t = 20)]
    limit: usize,
}

#[derive(Args)]
struct NormalizeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    aliases: Option<PathBuf>,
    /// normalized corpus, `-` for stdout
    #[arg(long, conflicts_with = "split_dir")]
    output: Option<PathBuf>,
    /// write train.txt, dev.txt and test.txt (90/5/5) here
    #[arg(long)]
    split_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn aliases(path: Option<&Path>) -> Result<AliasTable> {
    path.map_or_else(|| Ok(AliasTable::new()), AliasTable::load)
}

fn create(path: &Path) -> Result<Box<dyn Write>> {
    if path == Path::new("-") {
        return Ok(Box::new(io::stdout().lock()));
    }
    let f = File::create(path).map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))?;
    Ok(Box::new(BufWriter::new(f)))
}

/// Writes each log line to stdout and appends it to a file.
struct Tee<A: Write, B: Write>(A, B);

impl<A: Write, B: Write> Write for Tee<A, B> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0.write_all(buf)?;
        self.1.write_all(buf)?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        self.0.flush()?;
        self.1.flush()
    }
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let file = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => RunFlags::default(),
    };
    let config = args.run.or(file).resolve()?;
    let table = aliases(args.aliases.as_deref())?;
    let train_set = load_records(&args.train, &table)?;
    let dev_set = load_records(&args.dev, &table)?;
    std::fs::create_dir_all(&args.out)
        .map_err(|e| Error::Data(format!("cannot create {}: {e}", args.out.display())))?;
    let log_path = args.out.join("train.log");
    let log_file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", log_path.display())))?;
    let mut log = Tee(io::stdout().lock(), log_file);
    let outcome = train(&config, &train_set, &dev_set, Some(&args.out), &mut log)?;
    eprintln!("best epoch {} dev_f1={}", outcome.best_epoch, outcome.best_dev_f1);
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let predictor = checkpoint::load(&args.checkpoint)?;
    let records = load_records(&args.test, &aliases(args.aliases.as_deref())?)?;
    if records.is_empty() {
        return Err(Error::Data(format!("{} has no records", args.test.display())));
    }
    if predictor.herb_overlap(&records) == 0 {
        return Err(Error::Data(format!(
            "vocabulary mismatch: no herb in {} is known to the checkpoint",
            args.test.display()
        )));
    }
    let report = predictor.evaluate(&records, !args.no_dedup)?;
    println!("{report}");
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Result<()> {
    let predictor = checkpoint::load(&args.checkpoint)?;
    let text = match args.text {
        Some(t) => t,
        None => {
            let mut s = String::new();
            io::stdin().read_to_string(&mut s)?;
            s
        }
    };
    let p = predictor.predict(text.trim())?;
    println!("{}", p.herbs.join(" "));
    if args.raw {
        println!("raw: {}", p.raw.join(" "));
    }
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let spec = SyntheticSpec {
        symptom_vocab: args.symptoms,
        herb_vocab: args.herbs,
        fanout_min: args.fanout_min,
        fanout_max: args.fanout_max,
        tokens_min: args.tokens_min,
        tokens_max: args.tokens_max,
        max_herbs: args.max_herbs,
        records: args.records,
        seed: args.seed,
    };
    let records = gen_synthetic(&spec)?;
    let mut w = create(&args.out)?;
    write_corpus(&records, &mut w)?;
    Ok(w.flush()?)
}

fn cmd_stats(args: StatsArgs) -> Result<()> {
    let records = read_corpus(&args.corpus)?;
    println!("{}", length_stats(&records, args.limit));
    Ok(())
}

fn cmd_normalize(args: NormalizeArgs) -> Result<()> {
    let table = aliases(args.aliases.as_deref())?;
    let mut kept = Vec::new();
    for (i, raw) in read_corpus(&args.input)?.iter().enumerate() {
        match normalize_record(raw, &table) {
            Ok(r) => kept.push(r),
            // cycles are caught when the table loads, so only per-record
            // rejections reach here
            Err(e) => eprintln!("skipping record {}: {e}", i + 1),
        }
    }
    if let Some(dir) = &args.split_dir {
        let split = split_dataset(&kept, args.seed)?;
        std::fs::create_dir_all(dir)
            .map_err(|e| Error::Data(format!("cannot create {}: {e}", dir.display())))?;
        for (name, part) in [("train.txt", &split.train), ("dev.txt", &split.dev), ("test.txt", &split.test)] {
            let mut w = create(&dir.join(name))?;
            write_corpus(part, &mut w)?;
            w.flush()?;
            eprintln!("{name}: {} records", part.len());
        }
        return Ok(());
    }
    let mut w = create(args.output.as_deref().unwrap_or(Path::new("-")))?;
    write_corpus(&kept, &mut w)?;
    Ok(w.flush()?)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Stats(a) => cmd_stats(a),
        Command::Normalize(a) => cmd_normalize(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Numeric(_) => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use sgs2s::corpus::Tokenization;
    use sgs2s::train::Variant;

    #[test]
    fn flags_override_file_values() {
        let file: RunFlags = toml::from_str("epochs = 4\nseed = 9\nvariant = \"multilabel\"").unwrap();
        let cli = RunFlags { epochs: Some(2), ..RunFlags::default() };
        let c = cli.or(file).resolve().unwrap();
        assert_eq!((c.epochs, c.seed, c.variant), (2, 9, Variant::MultiLabel));
        assert_eq!(c.batch_size, 20);
        assert_eq!(c.tokenization, Tokenization::Chars);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(toml::from_str::<RunFlags>("epochz = 1").is_err());
        let bad = RunFlags { epochs: Some(0), ..RunFlags::default() };
        assert!(matches!(bad.resolve(), Err(Error::Config(_))));
        let ml = RunFlags {
            variant: Some("multilabel".into()),
            coverage: Some(true),
            ..RunFlags::default()
        };
        assert!(ml.resolve().is_err());
    }
}
