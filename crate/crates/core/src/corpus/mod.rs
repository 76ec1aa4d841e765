//! Symptom/herb records, their file format, normalization, splitting,
//! vocabularies and a synthetic task generator.
//!
//! Corpus files are UTF-8 with one record per line:
//!
//! ```text
//! symptom text<TAB>herb1 herb2 herb3
//! ```
//!
//! Blank lines are ignored.

mod alias;
mod split;
mod synth;
mod vocab;

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub use alias::{normalize_record, strip_dose, AliasTable};
pub use split::{split_dataset, Split};
pub use synth::{gen_synthetic, SyntheticSpec};
pub use vocab::{build_vocab, Vocab, BOS, EOS, PAD, RESERVED, UNK};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Record {
    pub symptoms: String,
    pub herbs: Vec<String>,
}

impl Record {
    pub fn new(symptoms: impl Into<String>, herbs: Vec<String>) -> Self {
        Self { symptoms: symptoms.into(), herbs }
    }

    /// Checks that the symptom text has content and that the herb list is
    /// nonempty and duplicate-free.
    pub fn validate(&self) -> Result<()> {
        if self.symptoms.trim().is_empty() {
            return Err(Error::Data("record has no symptom text".into()));
        }
        if self.herbs.is_empty() {
            return Err(Error::Data("record has no herbs".into()));
        }
        for (i, h) in self.herbs.iter().enumerate() {
            if self.herbs[..i].contains(h) {
                return Err(Error::Data(format!("herb `{h}` listed twice")));
            }
        }
        Ok(())
    }
}

impl fmt::Display for Record {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}", self.symptoms, self.herbs.join(" "))
    }
}

/// How symptom text is split into source tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Tokenization {
    /// One token per unicode scalar value, whitespace skipped.
    #[default]
    Chars,
    Whitespace,
}

impl Tokenization {
    pub fn tokenize(self, text: &str) -> Vec<String> {
        match self {
            Tokenization::Chars => {
                text.chars().filter(|c| !c.is_whitespace()).map(String::from).collect()
            }
            Tokenization::Whitespace => text.split_whitespace().map(String::from).collect(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Tokenization::Chars => "chars",
            Tokenization::Whitespace => "whitespace",
        }
    }
}

impl std::str::FromStr for Tokenization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chars" => Ok(Tokenization::Chars),
            "whitespace" => Ok(Tokenization::Whitespace),
            other => Err(Error::Config(format!(
                "unknown tokenization `{other}` (expected chars or whitespace)"
            ))),
        }
    }
}

/// Parses one corpus line. Herb lists are taken as written, so they may
/// still hold duplicates or dose text until normalized.
pub fn parse_line(line: &str) -> Result<Record> {
    let (symptoms, herbs) = line
        .split_once('\t')
        .ok_or_else(|| Error::Data("missing TAB between symptoms and herbs".into()))?;
    if symptoms.trim().is_empty() {
        return Err(Error::Data("empty symptom text".into()));
    }
    let herbs: Vec<String> = herbs.split_whitespace().map(String::from).collect();
    if herbs.is_empty() {
        return Err(Error::Data("empty herb list".into()));
    }
    Ok(Record::new(symptoms.trim(), herbs))
}

pub fn parse_corpus(reader: impl BufRead) -> Result<Vec<Record>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_line(line).map_err(|e| e.context(format!("line {}", i + 1)))?);
    }
    Ok(out)
}

pub fn read_corpus(path: &Path) -> Result<Vec<Record>> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    parse_corpus(std::io::BufReader::new(file)).map_err(|e| e.context(path.display().to_string()))
}

/// Reads a corpus and normalizes every record against `aliases`.
pub fn load_records(path: &Path, aliases: &AliasTable) -> Result<Vec<Record>> {
    read_corpus(path)?
        .iter()
        .enumerate()
        .map(|(i, r)| {
            normalize_record(r, aliases)
                .map_err(|e| e.context(format!("{} record {}", path.display(), i + 1)))
        })
        .collect()
}

pub fn write_corpus(records: &[Record], mut w: impl Write) -> Result<()> {
    for r in records {
        writeln!(w, "{r}")?;
    }
    Ok(())
}

/// Herb-list length statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct LengthStats {
    pub records: usize,
    pub mean: f64,
    pub max: usize,
    pub limit: usize,
    /// percentage of records with at most `limit` herbs
    pub within_limit: f64,
}

pub fn length_stats(records: &[Record], limit: usize) -> LengthStats {
    let n = records.len();
    let total: usize = records.iter().map(|r| r.herbs.len()).sum();
    let within = records.iter().filter(|r| r.herbs.len() <= limit).count();
    let ratio = |x: usize| if n == 0 { 0.0 } else { x as f64 / n as f64 };
    LengthStats {
        records: n,
        mean: ratio(total),
        max: records.iter().map(|r| r.herbs.len()).max().unwrap_or(0),
        limit,
        within_limit: 100.0 * ratio(within),
    }
}

impl fmt::Display for LengthStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "records      {}", self.records)?;
        writeln!(f, "mean_herbs   {:.2}", self.mean)?;
        writeln!(f, "max_herbs    {}", self.max)?;
        write!(f, "within_{:<6}{:.2}%", self.limit, self.within_limit)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_write_round_trip() {
        let text = "头痛 发热\t麻黄 桂枝 杏仁\n\nfever cough\tA B\n";
        let records = parse_corpus(text.as_bytes()).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[0].herbs, vec!["麻黄", "桂枝", "杏仁"]);
        let mut buf = Vec::new();
        write_corpus(&records, &mut buf).unwrap();
        assert_eq!(parse_corpus(buf.as_slice()).unwrap(), records);
    }

    #[test]
    fn malformed_lines_name_their_position() {
        let err = parse_corpus("a\tB\nno tab here\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!(parse_line("\tA").is_err());
        assert!(parse_line("abc\t  ").is_err());
    }

    #[test]
    fn character_tokenization_skips_spaces() {
        assert_eq!(Tokenization::Chars.tokenize("头 痛a"), vec!["头", "痛", "a"]);
        assert_eq!(Tokenization::Whitespace.tokenize(" s01  s02 "), vec!["s01", "s02"]);
        assert!("bytes".parse::<Tokenization>().is_err());
    }

    #[test]
    fn stats_count_lengths() {
        let recs = vec![
            Record::new("a", vec!["x".into()]),
            Record::new("b", (0..3).map(|i| i.to_string()).collect()),
        ];
        let s = length_stats(&recs, 2);
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.max, 3);
        assert_eq!(s.within_limit, 50.0);
    }

    #[test]
    fn validation_rejects_duplicates() {
        let r = Record::new("a", vec!["x".into(), "x".into()]);
        assert!(matches!(r.validate(), Err(Error::Data(_))));
    }
}
