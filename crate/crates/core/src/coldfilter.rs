//! Cold filter: a conservative-update sketch with small saturating counters.
//!
//! Every offer raises only the buckets that hold the current minimum. An item
//! passes through once its post-increment minimum exceeds the threshold `T`,
//! and from then on always passes, since counters never decrease.

use crate::codec::{Reader, Writer};
use crate::error::{CodecError, ConfigError};
use crate::hash::{mix128, SeedSequence};
use crate::keyspace::Key;

const MAGIC: &[u8; 4] = b"HCUF";

pub const DEFAULT_THRESHOLD: u8 = 200;
pub const DEFAULT_DEPTH: usize = 3;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CuFilter {
    width: usize,
    counter_max: u8,
    threshold: u8,
    hash_seeds: Vec<u64>,
    /// `depth` rows of `width` counters, row-major.
    counters: Vec<u8>,
}

impl CuFilter {
    /// Hash seeds are derived from `seed` exactly as [`crate::CmSketch`] does,
    /// so a CM sketch with the same depth, width and seed sees the same
    /// buckets.
    pub fn new(
        depth: usize,
        width: usize,
        threshold: u8,
        counter_max: u8,
        seed: u64,
    ) -> Result<Self, ConfigError> {
        if depth == 0 || width == 0 {
            return Err(ConfigError::new(
                "cold filter needs depth and width of at least 1",
            ));
        }
        if threshold >= counter_max {
            return Err(ConfigError::new(format!(
                "threshold {threshold} must be below counter_max {counter_max} or nothing ever passes"
            )));
        }
        Ok(Self {
            width,
            counter_max,
            threshold,
            hash_seeds: SeedSequence::new(seed).take(depth),
            counters: vec![0; depth * width],
        })
    }

    /// Widest filter of `depth` 8-bit rows that fits in `bits`.
    pub fn with_memory(
        bits: u64,
        depth: usize,
        threshold: u8,
        seed: u64,
    ) -> Result<Self, ConfigError> {
        let width = (bits / (depth.max(1) as u64 * 8)) as usize;
        Self::new(depth, width, threshold, u8::MAX, seed)
    }

    pub fn depth(&self) -> usize {
        self.hash_seeds.len()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn threshold(&self) -> u8 {
        self.threshold
    }

    pub fn counter_max(&self) -> u8 {
        self.counter_max
    }

    pub fn memory_bits(&self) -> u64 {
        self.counters.len() as u64 * 8
    }

    fn index(&self, row: usize, key: Key) -> usize {
        row * self.width + (mix128(self.hash_seeds[row], key.0) % self.width as u64) as usize
    }

    /// Records one occurrence; true when the item should go on to the next
    /// stage.
    pub fn offer(&mut self, key: Key) -> bool {
        let depth = self.depth();
        let min = (0..depth)
            .map(|r| self.counters[self.index(r, key)])
            .min()
            .unwrap();
        if min < self.counter_max {
            for r in 0..depth {
                let i = self.index(r, key);
                if self.counters[i] == min {
                    self.counters[i] = min + 1;
                }
            }
        }
        min.saturating_add(1).min(self.counter_max) > self.threshold
    }

    pub fn estimate(&self, key: Key) -> u64 {
        (0..self.depth())
            .map(|r| self.counters[self.index(r, key)])
            .min()
            .unwrap() as u64
    }

    pub fn clear(&mut self) {
        self.counters.fill(0);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(MAGIC);
        w.u16(self.depth() as u16);
        w.u64(self.width as u64);
        w.u8(self.counter_max);
        w.u8(self.threshold);
        for &s in &self.hash_seeds {
            w.u64(s);
        }
        w.bytes(&self.counters);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::new(bytes, MAGIC)?;
        let depth = r.u16()? as usize;
        let width = usize::try_from(r.u64()?).map_err(|_| CodecError::Corrupt("width".into()))?;
        let counter_max = r.u8()?;
        let threshold = r.u8()?;
        let seeds = (0..depth).map(|_| r.u64()).collect::<Result<Vec<_>, _>>()?;
        let len = depth.checked_mul(width).ok_or(CodecError::Truncated)?;
        let counters = r.take(len)?.to_vec();
        r.finish()?;
        if counters.iter().any(|&c| c > counter_max) {
            return Err(CodecError::Corrupt("counter above counter_max".into()));
        }
        let mut f = Self::new(depth, width, threshold, counter_max, 0)?;
        f.hash_seeds = seeds;
        f.counters = counters;
        Ok(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmsketch::{CmSketch, IncrementMode};
    use proptest::prelude::*;
    use std::collections::HashMap;

    fn filter(width: usize, threshold: u8) -> CuFilter {
        CuFilter::new(3, width, threshold, 255, 17).unwrap()
    }

    #[test]
    fn first_offer_does_not_pass() {
        let mut f = filter(64, 200);
        assert!(!f.offer(Key(1)));
        assert_eq!(f.estimate(Key(1)), 1);
        assert_eq!(f.estimate(Key(2)), 0);
    }

    #[test]
    fn lone_key_crosses_on_offer_t_plus_one() {
        let mut f = filter(64, 200);
        let passes: Vec<bool> = (0..260).map(|_| f.offer(Key(5))).collect();
        assert!(passes[..200].iter().all(|&p| !p));
        assert!(passes[200..].iter().all(|&p| p));
        assert_eq!(f.estimate(Key(5)), 255);
    }

    #[test]
    fn exact_count_without_collisions() {
        let mut f = filter(64, 200);
        for _ in 0..5 {
            f.offer(Key(3));
        }
        assert_eq!(f.estimate(Key(3)), 5);
    }

    #[test]
    fn threshold_must_sit_below_saturation() {
        assert!(CuFilter::new(3, 10, 255, 255, 0).is_err());
        assert!(CuFilter::new(3, 10, 20, 20, 0).is_err());
        assert!(CuFilter::new(3, 10, 254, 255, 0).is_ok());
        assert!(CuFilter::new(0, 10, 1, 255, 0).is_err());
    }

    #[test]
    fn sizing_from_memory() {
        let f = CuFilter::with_memory(8 * 3 * 1000 + 7, 3, 18, 0).unwrap();
        assert_eq!(f.width(), 1000);
        assert_eq!(f.memory_bits(), 24_000);
    }

    #[test]
    fn image_round_trip() {
        let mut f = filter(50, 30);
        for k in 0..500u32 {
            f.offer(Key::from(k % 97));
        }
        let bytes = f.to_bytes();
        assert_eq!(CuFilter::from_bytes(&bytes).unwrap(), f);
        assert!(CuFilter::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    proptest! {
        #[test]
        fn cu_against_cm_and_oracle(stream in prop::collection::vec(0u32..300, 0..2000), width in 8usize..64) {
            let mut cu = CuFilter::new(3, width, 100, 255, 5).unwrap();
            let mut cm = CmSketch::new(3, width, IncrementMode::Unit, 5).unwrap();
            let mut truth: HashMap<u32, u64> = HashMap::new();
            let mut passed: HashMap<u32, usize> = HashMap::new();
            for (i, &k) in stream.iter().enumerate() {
                let key = Key::from(k);
                let seen = *truth.get(&k).unwrap_or(&0);
                let p = cu.offer(key);
                cm.insert(key, 1).unwrap();
                *truth.entry(k).or_default() += 1;
                if let Some(&first) = passed.get(&k) {
                    prop_assert!(p, "key {} passed at {} then stopped at {}", k, first, i);
                } else if p {
                    passed.insert(k, i);
                    // At most T offers precede the first pass.
                    prop_assert!(seen <= 100);
                }
                if !p {
                    prop_assert!(seen < 100);
                }
            }
            for (&k, &f) in &truth {
                let e = cu.estimate(Key::from(k));
                prop_assert!(e >= f.min(255));
                prop_assert!(e <= cm.query(Key::from(k)));
            }
        }
    }
}
