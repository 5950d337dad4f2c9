//! Expert-parallel dispatch: worker shuffling, capacity limits and dropping.
//!
//! Capacity is `⌈(T/E)·C⌉` tokens per expert, where `T` is the number of
//! tokens in the step. Accounting is global per expert. When
//! `share_within_device` is set, an oversubscribed expert first borrows the
//! unused slots of experts on the same device (lower expert index borrows
//! first) and only then drops.

use alloc::vec::Vec;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::math::{ceil, powf};
use crate::routing::{HashRouter, HashStrategy};
use crate::{Error, Result};

/// Which of an oversubscribed expert's tokens are dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum DropPolicy {
    /// Uniformly at random, seeded by [`DispatchConfig::seed`].
    #[default]
    Random,
    /// The tokens that arrived last.
    HighestIndex,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DispatchConfig {
    pub tokens: usize,
    pub experts: usize,
    pub capacity_factor: f64,
    pub experts_per_device: usize,
    pub share_within_device: bool,
    pub drop_policy: DropPolicy,
    pub seed: u64,
}

impl DispatchConfig {
    /// One expert per device, `C = 2`, random drops, seed 0.
    pub fn new(tokens: usize, experts: usize) -> Self {
        DispatchConfig {
            tokens,
            experts,
            capacity_factor: 2.0,
            experts_per_device: 1,
            share_within_device: false,
            drop_policy: DropPolicy::Random,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tokens == 0 || self.experts == 0 {
            return Err(Error::Domain("tokens and experts must be positive".into()));
        }
        if self.experts_per_device == 0 || !self.experts.is_multiple_of(self.experts_per_device) {
            return Err(Error::Domain(alloc::format!(
                "{} experts cannot be split into devices of {}",
                self.experts, self.experts_per_device
            )));
        }
        if !(self.capacity_factor > 0.0 && self.capacity_factor.is_finite()) {
            return Err(Error::Domain(alloc::format!(
                "capacity factor must be positive, got {}",
                self.capacity_factor
            )));
        }
        Ok(())
    }

    pub fn devices(&self) -> usize {
        self.experts / self.experts_per_device
    }

    /// Slots per expert for a step of `tokens` tokens.
    pub fn capacity_for(&self, tokens: usize) -> usize {
        ceil(tokens as f64 / self.experts as f64 * self.capacity_factor) as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DispatchReport {
    pub tokens: usize,
    /// Tokens assigned to each expert before dropping.
    pub loads: Vec<usize>,
    /// Tokens each expert actually processes.
    pub kept: Vec<usize>,
    pub dropped_per_expert: Vec<usize>,
    /// Slots per expert. Summed over batches in aggregated reports.
    pub capacity: usize,
    pub dropped_count: usize,
    pub drop_rate: f64,
    /// Largest expert load divided by the mean load.
    pub max_mean_ratio: f64,
    /// Slots each device lent from idle experts to oversubscribed ones.
    pub absorbed_per_device: Vec<usize>,
}

impl DispatchReport {
    fn empty(experts: usize, devices: usize) -> Self {
        DispatchReport {
            tokens: 0,
            loads: alloc::vec![0; experts],
            kept: alloc::vec![0; experts],
            dropped_per_expert: alloc::vec![0; experts],
            capacity: 0,
            dropped_count: 0,
            drop_rate: 0.0,
            max_mean_ratio: 0.0,
            absorbed_per_device: alloc::vec![0; devices],
        }
    }

    fn accumulate(&mut self, other: &DispatchReport) {
        self.tokens += other.tokens;
        self.capacity += other.capacity;
        self.dropped_count += other.dropped_count;
        for (a, b) in self.loads.iter_mut().zip(&other.loads) {
            *a += b;
        }
        for (a, b) in self.kept.iter_mut().zip(&other.kept) {
            *a += b;
        }
        for (a, b) in self.dropped_per_expert.iter_mut().zip(&other.dropped_per_expert) {
            *a += b;
        }
        for (a, b) in self.absorbed_per_device.iter_mut().zip(&other.absorbed_per_device) {
            *a += b;
        }
        self.refresh_ratios();
    }

    fn refresh_ratios(&mut self) {
        self.drop_rate = if self.tokens == 0 { 0.0 } else { self.dropped_count as f64 / self.tokens as f64 };
        let mean = self.tokens as f64 / self.loads.len() as f64;
        let max = self.loads.iter().copied().max().unwrap_or(0) as f64;
        self.max_mean_ratio = if mean > 0.0 { max / mean } else { 0.0 };
    }

    /// Per-expert rows ordered by descending load (ties by expert index).
    pub fn load_curve(&self) -> Vec<LoadRow> {
        let mut order: Vec<usize> = (0..self.loads.len()).collect();
        order.sort_by(|&a, &b| self.loads[b].cmp(&self.loads[a]));
        order
            .into_iter()
            .enumerate()
            .map(|(rank, e)| LoadRow {
                expert_rank: rank,
                expert: e,
                load: self.loads[e],
                capacity: self.capacity,
                dropped: self.dropped_per_expert[e],
            })
            .collect()
    }
}

/// One row of a sorted load curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LoadRow {
    pub expert_rank: usize,
    pub expert: usize,
    pub load: usize,
    pub capacity: usize,
    pub dropped: usize,
}

/// Worker index for every token after a seeded shuffle of token order.
///
/// With `tokens < workers` some workers receive nothing; that is allowed.
pub fn shuffle_workers(tokens: usize, workers: usize, seed: u64) -> Result<Vec<usize>> {
    let mut perm: Vec<usize> = (0..tokens).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    shuffle_workers_with(&perm, workers)
}

/// Like [`shuffle_workers`] with an explicit permutation: token `perm[t]`
/// lands at position `t` and goes to worker `⌊t·W/T⌋`.
pub fn shuffle_workers_with(perm: &[usize], workers: usize) -> Result<Vec<usize>> {
    if workers == 0 {
        return Err(Error::Domain("need at least one worker".into()));
    }
    let t = perm.len();
    let mut out = alloc::vec![usize::MAX; t];
    for (pos, &tok) in perm.iter().enumerate() {
        if tok >= t || out[tok] != usize::MAX {
            return Err(Error::Data("not a permutation".into()));
        }
        out[tok] = pos * workers / t;
    }
    Ok(out)
}

/// Applies per-expert capacity to one step of assignments.
///
/// Returns a keep-mask aligned with `assignments` and the step report. The
/// capacity uses the actual number of assignments, so a short final batch
/// gets proportionally fewer slots.
pub fn apply_capacity(assignments: &[usize], config: &DispatchConfig) -> Result<(Vec<bool>, DispatchReport)> {
    config.validate()?;
    let e = config.experts;
    let t = assignments.len();
    let mut members: Vec<Vec<usize>> = alloc::vec![Vec::new(); e];
    for (tok, &x) in assignments.iter().enumerate() {
        if x >= e {
            return Err(Error::Data(alloc::format!("token {tok} assigned to expert {x} of {e}")));
        }
        members[x].push(tok);
    }
    let capacity = config.capacity_for(t);
    let mut report = DispatchReport::empty(e, config.devices());
    report.tokens = t;
    report.capacity = capacity;
    report.loads = members.iter().map(Vec::len).collect();

    let mut allowance = alloc::vec![capacity; e];
    if config.share_within_device {
        for (dev, range) in (0..e).step_by(config.experts_per_device).enumerate() {
            let experts = range..range + config.experts_per_device;
            let mut spare: usize = experts.clone().map(|x| capacity.saturating_sub(report.loads[x])).sum();
            for x in experts {
                let excess = report.loads[x].saturating_sub(capacity);
                let borrowed = excess.min(spare);
                spare -= borrowed;
                allowance[x] += borrowed;
                report.absorbed_per_device[dev] += borrowed;
            }
        }
    }

    let mut keep = alloc::vec![true; t];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for x in 0..e {
        let excess = report.loads[x].saturating_sub(allowance[x]);
        if excess > 0 {
            let toks = &mut members[x];
            let dropped: &[usize] = match config.drop_policy {
                DropPolicy::HighestIndex => &toks[toks.len() - excess..],
                DropPolicy::Random => toks.partial_shuffle(&mut rng, excess).0,
            };
            for &tok in dropped {
                keep[tok] = false;
            }
        }
        report.dropped_per_expert[x] = excess;
        report.kept[x] = report.loads[x] - excess;
        report.dropped_count += excess;
    }
    report.refresh_ratios();
    Ok((keep, report))
}

/// Zipf frequencies `∝ 1/(rank+1)^s`, normalized, most frequent first.
pub fn zipf_frequencies(vocab: usize, s: f64) -> Vec<f64> {
    let raw: Vec<f64> = (1..=vocab).map(|r| 1.0 / powf(r as f64, s)).collect();
    let z: f64 = raw.iter().sum();
    raw.into_iter().map(|f| f / z).collect()
}

/// Result of a hash-routing balance study.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HashBalance {
    /// Sum over all batches.
    pub report: DispatchReport,
    /// Rows ordered by descending load.
    pub curve: Vec<LoadRow>,
    pub batches: usize,
}

/// Samples `stream_len` tokens i.i.d. from `freq`, hashes them to experts and
/// applies capacity in batches of `config.tokens`.
///
/// The token stream depends only on `config.seed`, so different strategies
/// with the same seed see the same tokens.
pub fn simulate_hash_balance(
    freq: &[f64],
    strategy: HashStrategy,
    config: &DispatchConfig,
    stream_len: usize,
) -> Result<HashBalance> {
    config.validate()?;
    if freq.is_empty() {
        return Err(Error::Data("empty frequency table".into()));
    }
    let sampler = WeightedIndex::new(freq).map_err(|e| Error::Data(alloc::format!("frequency table: {e}")))?;
    let router = HashRouter::new(strategy, config.experts, freq.len(), Some(freq), config.seed ^ 0x9e37_79b9_7f4a_7c15)?;
    let mut stream_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut total = DispatchReport::empty(config.experts, config.devices());
    let mut batch = Vec::with_capacity(config.tokens);
    let mut batches = 0;
    let mut remaining = stream_len;
    while remaining > 0 {
        let n = remaining.min(config.tokens);
        remaining -= n;
        batch.clear();
        for _ in 0..n {
            batch.push(router.route(sampler.sample(&mut stream_rng))?);
        }
        let step = DispatchConfig { seed: config.seed.wrapping_add(batches as u64 + 1), ..config.clone() };
        let (_, report) = apply_capacity(&batch, &step)?;
        total.accumulate(&report);
        batches += 1;
    }
    let curve = total.load_curve();
    Ok(HashBalance { report: total, curve, batches })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(tokens: usize, experts: usize, c: f64) -> DispatchConfig {
        DispatchConfig { capacity_factor: c, ..DispatchConfig::new(tokens, experts) }
    }

    #[test]
    fn identity_permutation_splits_in_order() {
        assert_eq!(shuffle_workers_with(&[0, 1, 2, 3], 2).unwrap(), [0, 0, 1, 1]);
    }

    #[test]
    fn shuffled_workers_are_balanced_and_seeded() {
        let w = shuffle_workers(103, 8, 5).unwrap();
        let mut counts = [0usize; 8];
        for &x in &w {
            counts[x] += 1;
        }
        assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
        assert_eq!(w, shuffle_workers(103, 8, 5).unwrap());
        assert_ne!(w, shuffle_workers(103, 8, 6).unwrap());
    }

    #[test]
    fn fewer_tokens_than_workers() {
        let w = shuffle_workers(3, 8, 0).unwrap();
        assert!(w.iter().all(|&x| x < 8));
    }

    #[test]
    fn six_of_eight_to_one_expert() {
        let (keep, r) = apply_capacity(&[0, 0, 0, 0, 0, 0, 1, 1], &cfg(8, 2, 1.0)).unwrap();
        assert_eq!(r.capacity, 4);
        assert_eq!(r.dropped_count, 2);
        assert_eq!(keep.iter().filter(|k| !**k).count(), 2);
        assert!(keep[6] && keep[7]);
    }

    #[test]
    fn uniform_assignment_never_drops() {
        let a: Vec<usize> = (0..64).map(|t| t % 8).collect();
        for c in [1.0, 1.5, 2.0] {
            assert_eq!(apply_capacity(&a, &cfg(64, 8, c)).unwrap().1.dropped_count, 0);
        }
    }

    #[test]
    fn device_sharing_hand_case() {
        // loads (4, 0, 2, 2), capacity 2, devices {0,1} and {2,3}
        let a = [0, 0, 0, 0, 2, 2, 3, 3];
        let mut c = DispatchConfig { experts_per_device: 2, ..cfg(8, 4, 1.0) };
        c.share_within_device = true;
        let (_, on) = apply_capacity(&a, &c).unwrap();
        assert_eq!(on.dropped_count, 0);
        assert_eq!(on.absorbed_per_device, [2, 0]);
        assert_eq!(on.kept, [4, 0, 2, 2]);
        c.share_within_device = false;
        let (_, off) = apply_capacity(&a, &c).unwrap();
        assert_eq!(off.dropped_count, 2);
    }

    #[test]
    fn highest_index_policy_drops_latest() {
        let mut c = cfg(4, 2, 1.0);
        c.drop_policy = DropPolicy::HighestIndex;
        let (keep, _) = apply_capacity(&[0, 0, 0, 1], &c).unwrap();
        assert_eq!(keep, [true, true, false, true]);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(apply_capacity(&[0], &DispatchConfig { experts_per_device: 3, ..cfg(1, 4, 1.0) }).is_err());
        assert!(apply_capacity(&[0], &cfg(1, 4, 0.0)).is_err());
        assert!(apply_capacity(&[4], &cfg(1, 4, 1.0)).is_err());
    }

    #[test]
    fn zipf_is_normalized_and_decreasing() {
        let f = zipf_frequencies(100, 1.0);
        assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(f.windows(2).all(|w| w[0] > w[1]));
        assert!((f[0] / f[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_vocabulary_modulo_is_flat() {
        // Deterministic stream: every token equally likely, but sampling still
        // fluctuates, so use the exact per-token mass instead.
        let freq = alloc::vec![1.0 / 8.0; 8];
        let router = HashRouter::new(HashStrategy::Modulo, 8, 8, None, 0).unwrap();
        let mass = router.expert_mass(&freq).unwrap();
        assert!(mass.iter().all(|m| (m - 0.125).abs() < 1e-15));
    }

    #[test]
    fn hash_study_is_seeded() {
        let freq = zipf_frequencies(500, 1.0);
        let c = cfg(256, 16, 2.0);
        let a = simulate_hash_balance(&freq, HashStrategy::Random, &c, 2000).unwrap();
        assert_eq!(a, simulate_hash_balance(&freq, HashStrategy::Random, &c, 2000).unwrap());
        assert_eq!(a.batches, 8);
        assert_eq!(a.report.tokens, 2000);
        assert!(a.curve.windows(2).all(|w| w[0].load >= w[1].load));
    }

    fn assignments() -> impl Strategy<Value = (Vec<usize>, usize, usize)> {
        (1usize..=4, 1usize..=4).prop_flat_map(|(devices, per)| {
            let e = devices * per;
            (proptest::collection::vec(0..e, 1..200), Just(e), Just(per))
        })
    }

    proptest! {
        #[test]
        fn conservation_and_capacity((a, e, per) in assignments(), c in 0.1f64..3.0, seed in any::<u64>(), share in any::<bool>()) {
            let conf = DispatchConfig { experts_per_device: per, share_within_device: share, seed, ..cfg(a.len(), e, c) };
            let (keep, r) = apply_capacity(&a, &conf).unwrap();
            let kept: usize = r.kept.iter().sum();
            prop_assert_eq!(kept + r.dropped_count, a.len());
            prop_assert_eq!(keep.iter().filter(|k| **k).count(), kept);
            prop_assert!((0.0..=1.0).contains(&r.drop_rate));
            for d in 0..e / per {
                let dev: usize = r.kept[d * per..(d + 1) * per].iter().sum();
                prop_assert!(dev <= per * r.capacity);
            }
            if !share {
                prop_assert!(r.kept.iter().all(|&k| k <= r.capacity));
            }
        }

        #[test]
        fn sharing_never_hurts((a, e, per) in assignments(), c in 0.1f64..3.0, seed in any::<u64>()) {
            let off = DispatchConfig { experts_per_device: per, seed, ..cfg(a.len(), e, c) };
            let on = DispatchConfig { share_within_device: true, ..off.clone() };
            prop_assert!(apply_capacity(&a, &on).unwrap().1.dropped_count <= apply_capacity(&a, &off).unwrap().1.dropped_count);
        }

        #[test]
        fn more_capacity_fewer_drops((a, e, per) in assignments(), c in 0.1f64..3.0, extra in 0.0f64..2.0, share in any::<bool>()) {
            let lo = DispatchConfig { experts_per_device: per, share_within_device: share, ..cfg(a.len(), e, c) };
            let hi = DispatchConfig { capacity_factor: c + extra, ..lo.clone() };
            prop_assert!(apply_capacity(&a, &hi).unwrap().1.drop_rate <= apply_capacity(&a, &lo).unwrap().1.drop_rate);
        }

        #[test]
        fn same_seed_same_report((a, e, per) in assignments(), seed in any::<u64>()) {
            let conf = DispatchConfig { experts_per_device: per, seed, ..cfg(a.len(), e, 1.0) };
            prop_assert_eq!(apply_capacity(&a, &conf).unwrap(), apply_capacity(&a, &conf).unwrap());
        }
    }
}
