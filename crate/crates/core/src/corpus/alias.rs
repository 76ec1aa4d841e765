use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;

use super::Record;
use crate::error::{Error, Result};

/// Variant → canonical herb names, and prescription names → constituents.
///
/// File format, one entry per line:
///
/// ```text
/// variant<TAB>canonical
/// @prescription<TAB>herb1 herb2 ...
/// ```
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AliasTable {
    aliases: HashMap<String, String>,
    prescriptions: HashMap<String, Vec<String>>,
}

fn dose_patterns() -> &'static [Regex; 3] {
    static P: OnceLock<[Regex; 3]> = OnceLock::new();
    P.get_or_init(|| {
        [
            Regex::new(r"[(（\[【][^()（）\[\]【】]*[)）\]】]").unwrap(),
            Regex::new(r"\d+(?:\.\d+)?\s*(?:kg|mg|ml|g|克|钱|两|分|枚|片|个|只|条)$").unwrap(),
            Regex::new(r"[一二三四五六七八九十百半]+(?:克|钱|两)$").unwrap(),
        ]
    })
}

/// Removes bracketed preparation notes and a trailing dose quantity,
/// repeating until nothing changes.
pub fn strip_dose(name: &str) -> String {
    let mut cur = name.trim().to_string();
    loop {
        let mut next = cur.clone();
        for re in dose_patterns() {
            next = re.replace_all(&next, "").trim().to_string();
        }
        if next == cur {
            return cur;
        }
        cur = next;
    }
}

impl AliasTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.aliases.is_empty() && self.prescriptions.is_empty()
    }

    /// Builds a table and checks it: canonical names must not themselves be
    /// variants, every name must survive [`strip_dose`] unchanged, and
    /// prescription expansion must be acyclic.
    pub fn from_entries(
        aliases: impl IntoIterator<Item = (String, String)>,
        prescriptions: impl IntoIterator<Item = (String, Vec<String>)>,
    ) -> Result<Self> {
        let table = Self {
            aliases: aliases.into_iter().collect(),
            prescriptions: prescriptions.into_iter().collect(),
        };
        table.check()?;
        Ok(table)
    }

    fn check(&self) -> Result<()> {
        let stable = |name: &str| -> Result<()> {
            if name.is_empty() || strip_dose(name) != name || name.chars().any(char::is_whitespace) {
                return Err(Error::Data(format!("alias table name `{name}` is not a clean herb name")));
            }
            Ok(())
        };
        let mut variants: Vec<_> = self.aliases.iter().collect();
        variants.sort();
        for (variant, canonical) in variants {
            stable(canonical)?;
            if self.aliases.contains_key(canonical) {
                return Err(Error::Data(format!(
                    "alias chain: `{variant}` → `{canonical}` → `{}`",
                    self.aliases[canonical]
                )));
            }
        }
        let mut names: Vec<_> = self.prescriptions.keys().collect();
        names.sort();
        for name in names {
            if self.prescriptions[name].is_empty() {
                return Err(Error::Data(format!("prescription `{name}` has no constituents")));
            }
            for herb in &self.prescriptions[name] {
                stable(herb)?;
            }
            self.expand(name, &mut Vec::new(), &mut Vec::new())?;
        }
        Ok(())
    }

    pub fn parse(reader: impl BufRead) -> Result<Self> {
        let mut aliases = Vec::new();
        let mut prescriptions = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let at = |msg: &str| Error::Data(format!("alias line {}: {msg}", i + 1));
            let (left, right) = line.split_once('\t').ok_or_else(|| at("missing TAB"))?;
            if let Some(name) = left.strip_prefix('@') {
                let herbs: Vec<String> = right.split_whitespace().map(String::from).collect();
                prescriptions.push((name.trim().to_string(), herbs));
            } else {
                if right.trim().is_empty() {
                    return Err(at("empty canonical name"));
                }
                aliases.push((left.trim().to_string(), right.trim().to_string()));
            }
        }
        Self::from_entries(aliases, prescriptions)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(std::io::BufReader::new(file))
    }

    pub fn canonical<'a>(&'a self, name: &'a str) -> &'a str {
        self.aliases.get(name).map(String::as_str).unwrap_or(name)
    }

    /// Appends the fully expanded constituents of `name` to `out`.
    fn expand(&self, name: &str, stack: &mut Vec<String>, out: &mut Vec<String>) -> Result<()> {
        let name = self.canonical(name);
        let Some(parts) = self.prescriptions.get(name) else {
            out.push(name.to_string());
            return Ok(());
        };
        if let Some(pos) = stack.iter().position(|s| s == name) {
            let mut cycle = stack[pos..].to_vec();
            cycle.push(name.to_string());
            return Err(Error::Data(format!("prescription cycle: {}", cycle.join(" → "))));
        }
        stack.push(name.to_string());
        for part in parts {
            self.expand(part, stack, out)?;
        }
        stack.pop();
        Ok(())
    }
}

/// Drops dose text, maps variants to canonical names, expands prescription
/// names and collapses duplicates to their first occurrence.
pub fn normalize_record(raw: &Record, aliases: &AliasTable) -> Result<Record> {
    let mut expanded = Vec::new();
    for herb in &raw.herbs {
        let clean = strip_dose(herb);
        if clean.is_empty() {
            continue;
        }
        aliases.expand(&clean, &mut Vec::new(), &mut expanded)?;
    }
    let mut herbs: Vec<String> = Vec::with_capacity(expanded.len());
    for h in expanded {
        if !herbs.contains(&h) {
            herbs.push(h);
        }
    }
    if herbs.is_empty() {
        return Err(Error::Data(format!(
            "no herbs left after cleaning `{}`",
            raw.herbs.join(" ")
        )));
    }
    let symptoms = raw.symptoms.trim();
    if symptoms.is_empty() {
        return Err(Error::Data("record has no symptom text".into()));
    }
    Ok(Record::new(symptoms, herbs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(herbs: &[&str]) -> Record {
        Record::new("症状", herbs.iter().map(|s| s.to_string()).collect())
    }

    fn table(aliases: &[(&str, &str)], rx: &[(&str, &[&str])]) -> Result<AliasTable> {
        AliasTable::from_entries(
            aliases.iter().map(|(a, b)| (a.to_string(), b.to_string())),
            rx.iter().map(|(n, hs)| (n.to_string(), hs.iter().map(|s| s.to_string()).collect())),
        )
    }

    #[test]
    fn empty_table_only_collapses_duplicates() {
        let out = normalize_record(&rec(&["A", "B", "A", "C"]), &AliasTable::new()).unwrap();
        assert_eq!(out.herbs, vec!["A", "B", "C"]);
    }

    #[test]
    fn single_expansion() {
        let t = table(&[], &[("X", &["A", "B"])]).unwrap();
        assert_eq!(normalize_record(&rec(&["X"]), &t).unwrap().herbs, vec!["A", "B"]);
    }

    #[test]
    fn nested_expansion_collapses_repeats() {
        let t = table(&[], &[("X", &["A", "Y"]), ("Y", &["B", "A"])]).unwrap();
        assert_eq!(normalize_record(&rec(&["X"]), &t).unwrap().herbs, vec!["A", "B"]);
    }

    #[test]
    fn cycles_are_named() {
        let err = table(&[], &[("X", &["A", "Y"]), ("Y", &["X"])]).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Data(_)));
        assert!(msg.contains("X → Y → X") || msg.contains("Y → X → Y"), "{msg}");
    }

    #[test]
    fn alias_chains_are_rejected() {
        assert!(table(&[("a", "b"), ("b", "c")], &[]).is_err());
        let t = table(&[("生甘草", "甘草"), ("炙甘草", "甘草")], &[]).unwrap();
        let out = normalize_record(&rec(&["生甘草", "炙甘草", "白术"]), &t).unwrap();
        assert_eq!(out.herbs, vec!["甘草", "白术"]);
    }

    #[test]
    fn aliases_apply_inside_prescriptions() {
        let t = table(&[("v", "A")], &[("P", &["v", "B"])]).unwrap();
        assert_eq!(normalize_record(&rec(&["B", "P"]), &t).unwrap().herbs, vec!["B", "A"]);
    }

    #[test]
    fn dose_text_is_dropped() {
        assert_eq!(strip_dose("黄芪30g"), "黄芪");
        assert_eq!(strip_dose("甘草(炙)10克"), "甘草");
        assert_eq!(strip_dose("当归（酒洗）三钱"), "当归");
        assert_eq!(strip_dose("h07"), "h07");
        assert_eq!(strip_dose("15g"), "");
        let out = normalize_record(&rec(&["黄芪", "30g", "黄芪15g"]), &AliasTable::new()).unwrap();
        assert_eq!(out.herbs, vec!["黄芪"]);
    }

    #[test]
    fn empty_result_is_rejected() {
        let err = normalize_record(&rec(&["10g", "(炒)"]), &AliasTable::new()).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn parses_the_file_format() {
        let text = "生姜\t姜\n@桂枝汤\t桂枝 芍药 生姜 大枣 甘草\n";
        let t = AliasTable::parse(text.as_bytes()).unwrap();
        let out = normalize_record(&rec(&["桂枝汤"]), &t).unwrap();
        assert_eq!(out.herbs, vec!["桂枝", "芍药", "姜", "大枣", "甘草"]);
        assert!(AliasTable::parse("no tab\n".as_bytes()).is_err());
    }

    fn herb_name() -> impl Strategy<Value = String> {
        prop_oneof![
            prop::sample::select(vec!["A", "B", "C", "D", "X", "Y", "v", "w"]).prop_map(String::from),
            (prop::sample::select(vec!["A", "X", "v"]), 1u32..40)
                .prop_map(|(h, d)| format!("{h}{d}g")),
            prop::sample::select(vec!["A(炒)", "10g", "Y（酒）"]).prop_map(String::from),
        ]
    }

    proptest! {
        #[test]
        fn normalization_is_idempotent(herbs in prop::collection::vec(herb_name(), 1..10)) {
            let t = table(
                &[("v", "A"), ("w", "X")],
                &[("X", &["A", "Y"]), ("Y", &["B", "A", "C"])],
            ).unwrap();
            let raw = Record::new("s", herbs);
            if let Ok(once) = normalize_record(&raw, &t) {
                prop_assert!(once.validate().is_ok());
                let twice = normalize_record(&once, &t).unwrap();
                prop_assert_eq!(once, twice);
            }
        }
    }
}
