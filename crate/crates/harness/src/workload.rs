//! Seeded synthetic streams.

use std::collections::BTreeSet;

use hidden_sketch::Key;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::trace::TraceRecord;

/// `n_keys` distinct random 32-bit keys, in rank order.
fn draw_keys(rng: &mut ChaCha8Rng, n_keys: usize) -> Vec<Key> {
    let mut seen = BTreeSet::new();
    let mut keys = Vec::with_capacity(n_keys);
    while keys.len() < n_keys {
        let k: u32 = rng.random();
        if seen.insert(k) {
            keys.push(Key::from(k));
        }
    }
    keys
}

fn sample(rng: &mut ChaCha8Rng, keys: &[Key], n_items: usize, skew: f64) -> Vec<TraceRecord> {
    let weights = (1..=keys.len()).map(|r| (r as f64).powf(-skew));
    let dist = WeightedIndex::new(weights).expect("at least one key with positive weight");
    (0..n_items)
        .map(|_| TraceRecord::new(keys[dist.sample(rng)]))
        .collect()
}

/// `n_items` records whose key popularity follows Zipf(`skew`) over
/// `n_keys` random 32-bit keys.
pub fn generate_zipf(n_items: usize, n_keys: usize, skew: f64, seed: u64) -> Vec<TraceRecord> {
    assert!(
        skew >= 0.0 && n_keys >= 1,
        "need skew >= 0 and at least one key"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keys = draw_keys(&mut rng, n_keys);
    sample(&mut rng, &keys, n_items, skew)
}

/// Two consecutive windows over the same keys. The second window shuffles
/// the popularity ranks of a `permute_fraction` share of the keys; each
/// window is sampled independently.
pub fn generate_change_pair(
    n_items: usize,
    n_keys: usize,
    skew: f64,
    permute_fraction: f64,
    seed: u64,
) -> (Vec<TraceRecord>, Vec<TraceRecord>) {
    let first = generate_zipf(n_items, n_keys, skew, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keys = draw_keys(&mut rng, n_keys);

    let mut swap_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c4a9_6e00_0001);
    let moved = ((n_keys as f64 * permute_fraction).round() as usize).min(n_keys);
    let mut ranks: Vec<usize> = (0..n_keys).collect();
    ranks.shuffle(&mut swap_rng);
    let chosen = &ranks[..moved];
    let mut targets = chosen.to_vec();
    targets.shuffle(&mut swap_rng);
    let mut permuted = keys.clone();
    for (&from, &to) in chosen.iter().zip(&targets) {
        permuted[to] = keys[from];
    }
    let second = sample(&mut swap_rng, &permuted, n_items, skew);
    (first, second)
}
