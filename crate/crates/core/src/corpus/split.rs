use crate::error::{Error, Result};
use crate::rng::Rng;

pub const MIN_RECORDS: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub dev: Vec<T>,
    pub test: Vec<T>,
}

/// Seeded shuffle, then `round(5%)` each for dev and test; the rest is train.
pub fn split_dataset<T: Clone>(records: &[T], seed: u64) -> Result<Split<T>> {
    let n = records.len();
    if n < MIN_RECORDS {
        return Err(Error::Data(format!("need at least {MIN_RECORDS} records to split, got {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    Rng::new(seed).shuffle(&mut order);
    let held = (n as f64 * 0.05).round() as usize;
    let pick = |ids: &[usize]| ids.iter().map(|&i| records[i].clone()).collect::<Vec<_>>();
    Ok(Split {
        dev: pick(&order[..held]),
        test: pick(&order[held..2 * held]),
        train: pick(&order[2 * held..]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn proportions() {
        let s = split_dataset(&(0..100).collect::<Vec<_>>(), 3).unwrap();
        assert_eq!((s.train.len(), s.dev.len(), s.test.len()), (90, 5, 5));
        let s = split_dataset(&vec![(); 82_044], 3).unwrap();
        assert_eq!((s.train.len(), s.dev.len(), s.test.len()), (73_840, 4_102, 4_102));
    }

    #[test]
    fn deterministic_disjoint_and_exhaustive() {
        let items: Vec<u32> = (0..57).collect();
        let a = split_dataset(&items, 11).unwrap();
        assert_eq!(a, split_dataset(&items, 11).unwrap());
        assert_ne!(a, split_dataset(&items, 12).unwrap());
        let mut all: Vec<u32> = a.train.iter().chain(&a.dev).chain(&a.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, items);
    }

    #[test]
    fn too_few_records() {
        assert!(matches!(split_dataset(&[1; 19], 0), Err(Error::Data(_))));
        let s = split_dataset(&[1; 20], 0).unwrap();
        assert_eq!((s.train.len(), s.dev.len(), s.test.len()), (18, 1, 1));
    }
}
