//! Parameter-free routing by a fixed function of the token id.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum HashStrategy {
    /// `token_id mod E`.
    Modulo,
    /// A seeded permutation of the vocabulary, then `mod E`.
    Random,
    /// Tokens in descending frequency order, each to the expert with the least
    /// frequency mass so far.
    GreedyFrequency,
}

impl core::str::FromStr for HashStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "modulo" => Ok(HashStrategy::Modulo),
            "random" => Ok(HashStrategy::Random),
            "greedy" | "greedy-frequency" | "greedyfrequency" => Ok(HashStrategy::GreedyFrequency),
            other => Err(Error::Domain(alloc::format!("unknown hash strategy `{other}`"))),
        }
    }
}

/// A token → expert table, fixed at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct HashRouter {
    strategy: HashStrategy,
    experts: usize,
    /// Precomputed expert per vocabulary entry; empty for `Modulo`.
    table: Vec<usize>,
}

impl HashRouter {
    /// `freq` is required for [`HashStrategy::GreedyFrequency`] and must cover
    /// the whole vocabulary; `seed` only matters for [`HashStrategy::Random`].
    pub fn new(strategy: HashStrategy, experts: usize, vocab_size: usize, freq: Option<&[f64]>, seed: u64) -> Result<Self> {
        if experts == 0 {
            return Err(Error::Domain("need at least one expert".into()));
        }
        let table = match strategy {
            HashStrategy::Modulo => Vec::new(),
            HashStrategy::Random => {
                let mut perm: Vec<usize> = (0..vocab_size).collect();
                perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
                perm.into_iter().map(|p| p % experts).collect()
            }
            HashStrategy::GreedyFrequency => {
                let freq = freq.ok_or_else(|| {
                    Error::Data("greedy-frequency hashing needs a frequency table".into())
                })?;
                if freq.len() != vocab_size {
                    return Err(Error::Data(alloc::format!(
                        "frequency table covers {} tokens, vocabulary has {vocab_size}",
                        freq.len()
                    )));
                }
                greedy_table(freq, experts)
            }
        };
        Ok(HashRouter { strategy, experts, table })
    }

    pub fn strategy(&self) -> HashStrategy {
        self.strategy
    }

    pub fn experts(&self) -> usize {
        self.experts
    }

    pub fn route(&self, token: usize) -> Result<usize> {
        match self.strategy {
            HashStrategy::Modulo => Ok(token % self.experts),
            _ => self
                .table
                .get(token)
                .copied()
                .ok_or_else(|| Error::Data(alloc::format!("token {token} outside the vocabulary"))),
        }
    }

    /// Frequency mass each expert receives under this table.
    pub fn expert_mass(&self, freq: &[f64]) -> Result<Vec<f64>> {
        let mut mass = alloc::vec![0.0; self.experts];
        for (tok, &f) in freq.iter().enumerate() {
            mass[self.route(tok)?] += f;
        }
        Ok(mass)
    }
}

fn greedy_table(freq: &[f64], experts: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..freq.len()).collect();
    order.sort_by(|&a, &b| freq[b].total_cmp(&freq[a]));
    let mut load = alloc::vec![0.0f64; experts];
    let mut table = alloc::vec![0; freq.len()];
    for tok in order {
        let mut best = 0;
        for (e, &l) in load.iter().enumerate().skip(1) {
            if l < load[best] {
                best = e;
            }
        }
        table[tok] = best;
        load[best] += freq[tok];
    }
    table
}

/// Routes a batch of token ids; see [`HashRouter::new`] for the arguments.
pub fn hash_route(
    token_ids: &[usize],
    experts: usize,
    strategy: HashStrategy,
    vocab_size: usize,
    freq_table: Option<&[f64]>,
    seed: u64,
) -> Result<Vec<usize>> {
    let router = HashRouter::new(strategy, experts, vocab_size, freq_table, seed)?;
    token_ids.iter().map(|&t| router.route(t)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modulo() {
        assert_eq!(hash_route(&[7], 4, HashStrategy::Modulo, 8, None, 0).unwrap(), [3]);
        for e in 1..10 {
            assert_eq!(hash_route(&[0], e, HashStrategy::Modulo, 1, None, 0).unwrap(), [0]);
        }
    }

    #[test]
    fn greedy_frequency_hand_example() {
        // a:6, b:3, c:2, d:1 over two experts → loads (6,0) (6,3) (6,5) (6,6).
        let freq = [6.0, 3.0, 2.0, 1.0];
        let out = hash_route(&[0, 1, 2, 3], 2, HashStrategy::GreedyFrequency, 4, Some(&freq), 0).unwrap();
        assert_eq!(out, [0, 1, 1, 1]);
    }

    #[test]
    fn greedy_needs_table() {
        assert!(matches!(
            HashRouter::new(HashStrategy::GreedyFrequency, 2, 4, None, 0),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn random_is_seeded_and_balanced_in_count() {
        let a = HashRouter::new(HashStrategy::Random, 4, 100, None, 5).unwrap();
        let b = HashRouter::new(HashStrategy::Random, 4, 100, None, 5).unwrap();
        assert_eq!(a, b);
        let mut counts = [0; 4];
        for t in 0..100 {
            counts[a.route(t).unwrap()] += 1;
        }
        assert_eq!(counts, [25; 4]);
        assert!(a.route(100).is_err());
    }
}
