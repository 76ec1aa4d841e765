use super::Record;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Parameters of the synthetic symptom → herb task.
///
/// Each symptom token maps to a fixed set of `fanout_min..=fanout_max`
/// herbs. A record draws `tokens_min..=tokens_max` distinct symptoms, and
/// its herbs are the union of their sets in first-mention order, capped at
/// `max_herbs`. Symptoms are written `s00 s17 ...` and herbs `h03 ...`, so
/// the output is meant for whitespace tokenization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub symptom_vocab: usize,
    pub herb_vocab: usize,
    pub fanout_min: usize,
    pub fanout_max: usize,
    pub tokens_min: usize,
    pub tokens_max: usize,
    pub max_herbs: usize,
    pub records: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            symptom_vocab: 30,
            herb_vocab: 40,
            fanout_min: 1,
            fanout_max: 2,
            tokens_min: 3,
            tokens_max: 6,
            max_herbs: 16,
            records: 2200,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("infeasible synthetic spec: {msg}")));
        if self.symptom_vocab == 0 || self.herb_vocab == 0 || self.max_herbs == 0 {
            return bad("vocabulary sizes and max_herbs must be positive".into());
        }
        if self.fanout_min == 0 || self.fanout_min > self.fanout_max {
            return bad(format!("fan-out range {}..={}", self.fanout_min, self.fanout_max));
        }
        if self.fanout_max > self.herb_vocab {
            return bad(format!(
                "fan-out {} exceeds herb vocabulary {}",
                self.fanout_max, self.herb_vocab
            ));
        }
        if self.tokens_min == 0 || self.tokens_min > self.tokens_max {
            return bad(format!("token range {}..={}", self.tokens_min, self.tokens_max));
        }
        if self.tokens_max > self.symptom_vocab {
            return bad(format!(
                "{} distinct symptoms per record from a vocabulary of {}",
                self.tokens_max, self.symptom_vocab
            ));
        }
        Ok(())
    }

    fn width(n: usize) -> usize {
        n.saturating_sub(1).to_string().len().max(2)
    }

    pub fn symptom_name(&self, i: usize) -> String {
        format!("s{i:0w$}", w = Self::width(self.symptom_vocab))
    }

    pub fn herb_name(&self, i: usize) -> String {
        format!("h{i:0w$}", w = Self::width(self.herb_vocab))
    }

    /// The symptom → herb-id table for this spec.
    pub fn mapping(&self) -> Result<Vec<Vec<usize>>> {
        self.validate()?;
        let mut rng = Rng::new(self.seed);
        let mut pool: Vec<usize> = (0..self.herb_vocab).collect();
        rng.shuffle(&mut pool);
        let mut cursor = 0;
        let mut map = Vec::with_capacity(self.symptom_vocab);
        for _ in 0..self.symptom_vocab {
            let f = rng.inclusive(self.fanout_min, self.fanout_max);
            let herbs = (0..f).map(|j| pool[(cursor + j) % pool.len()]).collect();
            cursor = (cursor + f) % pool.len();
            map.push(herbs);
        }
        Ok(map)
    }
}

pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Vec<Record>> {
    let map = spec.mapping()?;
    // records use a stream separate from the mapping
    let mut rng = Rng::new(spec.seed ^ 0x5EED_0F_5EC0_u64);
    let mut out = Vec::with_capacity(spec.records);
    for _ in 0..spec.records {
        let k = rng.inclusive(spec.tokens_min, spec.tokens_max);
        let symptoms = rng.sample_distinct(spec.symptom_vocab, k);
        let mut herbs: Vec<usize> = Vec::new();
        for &s in &symptoms {
            for &h in &map[s] {
                if !herbs.contains(&h) {
                    herbs.push(h);
                }
            }
        }
        herbs.truncate(spec.max_herbs);
        out.push(Record::new(
            symptoms.iter().map(|&s| spec.symptom_name(s)).collect::<Vec<_>>().join(" "),
            herbs.iter().map(|&h| spec.herb_name(h)).collect(),
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::{BTreeSet, HashMap};

    #[test]
    fn one_symptom_with_fanout_one_gives_one_herb() {
        let spec = SyntheticSpec {
            fanout_max: 1,
            tokens_min: 1,
            tokens_max: 1,
            records: 50,
            ..SyntheticSpec::default()
        };
        assert!(gen_synthetic(&spec).unwrap().iter().all(|r| r.herbs.len() == 1));
    }

    #[test]
    fn same_seed_same_data() {
        let spec = SyntheticSpec { records: 30, seed: 9, ..SyntheticSpec::default() };
        assert_eq!(gen_synthetic(&spec).unwrap(), gen_synthetic(&spec).unwrap());
        let other = SyntheticSpec { seed: 10, ..spec.clone() };
        assert_ne!(gen_synthetic(&spec).unwrap(), gen_synthetic(&other).unwrap());
    }

    #[test]
    fn default_mean_length_near_seven() {
        let spec = SyntheticSpec { records: 10_000, seed: 1, ..SyntheticSpec::default() };
        let recs = gen_synthetic(&spec).unwrap();
        let mean = recs.iter().map(|r| r.herbs.len()).sum::<usize>() as f64 / recs.len() as f64;
        assert!((6.0..=8.0).contains(&mean), "mean {mean}");
        assert!(recs.iter().all(|r| r.validate().is_ok() && r.herbs.len() <= 16));
    }

    #[test]
    fn herb_set_is_a_function_of_the_symptom_set() {
        let spec = SyntheticSpec { records: 3000, seed: 4, ..SyntheticSpec::default() };
        let mut seen: HashMap<BTreeSet<String>, BTreeSet<String>> = HashMap::new();
        for r in gen_synthetic(&spec).unwrap() {
            let key = r.symptoms.split(' ').map(String::from).collect();
            let val: BTreeSet<String> = r.herbs.into_iter().collect();
            assert_eq!(seen.entry(key).or_insert_with(|| val.clone()), &val);
        }
    }

    #[test]
    fn infeasible_specs() {
        for spec in [
            SyntheticSpec { herb_vocab: 1, ..SyntheticSpec::default() },
            SyntheticSpec { tokens_max: 31, ..SyntheticSpec::default() },
            SyntheticSpec { fanout_min: 0, ..SyntheticSpec::default() },
        ] {
            assert!(matches!(gen_synthetic(&spec), Err(Error::Config(_))));
        }
    }
}
