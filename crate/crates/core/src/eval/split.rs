use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{McdError, Result};

/// Train / validation / test shares, in percent.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitRatios {
    pub train: u32,
    pub val: u32,
    pub test: u32,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 40,
            val: 10,
            test: 50,
        }
    }
}

impl std::str::FromStr for SplitRatios {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let parts: Vec<u32> = s
            .split(',')
            .map(|p| p.trim().parse::<u32>().map_err(|e| format!("{p:?}: {e}")))
            .collect::<std::result::Result<_, _>>()?;
        match parts[..] {
            [train, val, test] if train + val + test == 100 => Ok(Self { train, val, test }),
            [_, _, _] => Err("split percentages must sum to 100".into()),
            _ => Err("expected three comma-separated percentages".into()),
        }
    }
}

impl std::fmt::Display for SplitRatios {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{},{},{}", self.train, self.val, self.test)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorpusSplit<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
}

/// Seeded random partition. Repetition `r` draws from its own stream so
/// the five repetitions of one seed are independent but reproducible.
/// Train and validation sizes are rounded to nearest; the test set takes
/// the rest.
pub fn split_corpus<T: Clone>(items: &[T], ratios: SplitRatios, seed: u64, repetition: u64) -> Result<CorpusSplit<T>> {
    if items.is_empty() {
        return Err(McdError::InvalidArgument("cannot split an empty corpus".into()));
    }
    let n = items.len();
    let n_train = ((n as u64 * ratios.train as u64 + 50) / 100) as usize;
    let n_val = (((n as u64 * ratios.val as u64 + 50) / 100) as usize).min(n - n_train);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(repetition);
    order.shuffle(&mut rng);
    let pick = |idx: &[usize]| {
        let mut idx = idx.to_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| items[i].clone()).collect::<Vec<_>>()
    };
    Ok(CorpusSplit {
        train: pick(&order[..n_train]),
        val: pick(&order[n_train..n_train + n_val]),
        test: pick(&order[n_train + n_val..]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_split_sizes() {
        let ids: Vec<u32> = (0..200).collect();
        let s = split_corpus(&ids, SplitRatios::default(), 7, 0).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (80, 20, 100));
        let mut all: Vec<u32> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort();
        assert_eq!(all, ids);
    }

    #[test]
    fn repetitions_differ_and_are_reproducible() {
        let ids: Vec<u32> = (0..50).collect();
        let a = split_corpus(&ids, SplitRatios::default(), 1, 0).unwrap();
        let b = split_corpus(&ids, SplitRatios::default(), 1, 1).unwrap();
        assert_ne!(a, b);
        assert_eq!(a, split_corpus(&ids, SplitRatios::default(), 1, 0).unwrap());
    }

    #[test]
    fn parse_ratios() {
        assert_eq!("40,10,50".parse::<SplitRatios>().unwrap(), SplitRatios::default());
        assert!("40,10,40".parse::<SplitRatios>().is_err());
        assert!("40,60".parse::<SplitRatios>().is_err());
    }
}
