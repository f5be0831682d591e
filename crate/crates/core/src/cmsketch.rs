//! Count-Min sketch that can be read back as a linear system.
//!
//! Each key hits one bucket in each of `d` disjoint arrays. In unit mode an
//! insert adds `delta`; in prime mode it adds `delta * p_e`, where `p_e` is a
//! per-key prime picked by a separate hash. Because updates are plain sums the
//! counters equal `Phi * diag(p) * x` for the true count vector `x`, which is
//! what [`CmSketch::to_equation_system`] exports.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::codec::{Reader, Writer};
use crate::error::{CodecError, ConfigError};
use crate::hash::{mix128, SeedSequence};
use crate::keyspace::Key;

pub const PRIME_TABLE_LEN: usize = 256;

/// The 256 smallest primes that are at least 257.
pub static PRIME_TABLE: [u64; PRIME_TABLE_LEN] = build_prime_table();

const fn build_prime_table() -> [u64; PRIME_TABLE_LEN] {
    let mut out = [0u64; PRIME_TABLE_LEN];
    let mut n = 257u64;
    let mut i = 0;
    while i < PRIME_TABLE_LEN {
        let mut d = 2;
        let mut prime = true;
        while d * d <= n {
            if n.is_multiple_of(d) {
                prime = false;
                break;
            }
            d += 1;
        }
        if prime {
            out[i] = n;
            i += 1;
        }
        n += 1;
    }
    out
}

/// Counters never exceed this value.
pub const COUNTER_LIMIT: u64 = i64::MAX as u64;

const MAGIC: &[u8; 4] = b"HCMS";

/// Bucket-to-key ratio `c_d` above which peeling succeeds with high
/// probability, per hash count.
pub fn peeling_ratio(depth: usize) -> Option<f64> {
    match depth {
        3 => Some(1.222),
        4 => Some(1.295),
        5 => Some(1.425),
        _ => None,
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum IncrementMode {
    Unit,
    Prime,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CmError {
    #[error("counter overflow in bucket {bucket}: {current} + {add} exceeds 2^63-1")]
    Overflow {
        bucket: usize,
        current: u64,
        add: u128,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CmSketch {
    mode: IncrementMode,
    widths: Vec<usize>,
    /// Start of each array in `counters`.
    offsets: Vec<usize>,
    hash_seeds: Vec<u64>,
    prime_seed: u64,
    counters: Vec<u64>,
}

impl CmSketch {
    /// `depth` arrays of `width` buckets each.
    pub fn new(
        depth: usize,
        width: usize,
        mode: IncrementMode,
        seed: u64,
    ) -> Result<Self, ConfigError> {
        if width == 0 {
            return Err(ConfigError::new("width must be at least 1"));
        }
        Self::with_widths(vec![width; depth], mode, seed)
    }

    /// `total` buckets split across `depth` arrays as evenly as possible; the
    /// first `total % depth` arrays get one extra bucket.
    pub fn with_buckets(
        depth: usize,
        total: usize,
        mode: IncrementMode,
        seed: u64,
    ) -> Result<Self, ConfigError> {
        if depth == 0 || total < depth {
            return Err(ConfigError::new(format!(
                "need at least one bucket per array: depth {depth}, total {total}"
            )));
        }
        let widths = (0..depth)
            .map(|i| total / depth + usize::from(i < total % depth))
            .collect();
        Self::with_widths(widths, mode, seed)
    }

    /// Sized so `n` keys decode by peeling: `w = ceil(c_d * n / d)`.
    pub fn for_capacity(
        n: usize,
        depth: usize,
        mode: IncrementMode,
        seed: u64,
    ) -> Result<Self, ConfigError> {
        let c = peeling_ratio(depth).ok_or_else(|| {
            ConfigError::new(format!("no peeling ratio for depth {depth}; use 3, 4 or 5"))
        })?;
        let width = ((c * n as f64) / depth as f64).ceil().max(1.0) as usize;
        Self::new(depth, width, mode, seed)
    }

    fn with_widths(
        widths: Vec<usize>,
        mode: IncrementMode,
        seed: u64,
    ) -> Result<Self, ConfigError> {
        if widths.is_empty() {
            return Err(ConfigError::new("depth must be at least 1"));
        }
        if widths.contains(&0) {
            return Err(ConfigError::new("every array needs at least one bucket"));
        }
        let mut offsets = Vec::with_capacity(widths.len());
        let mut total = 0;
        for &w in &widths {
            offsets.push(total);
            total += w;
        }
        let mut seeds = SeedSequence::new(seed);
        let hash_seeds = seeds.take(widths.len());
        let prime_seed = seeds.next_seed();
        Ok(Self {
            mode,
            widths,
            offsets,
            hash_seeds,
            prime_seed,
            counters: vec![0; total],
        })
    }

    pub fn depth(&self) -> usize {
        self.widths.len()
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    /// Total bucket count `m`.
    pub fn num_buckets(&self) -> usize {
        self.counters.len()
    }

    pub fn mode(&self) -> IncrementMode {
        self.mode
    }

    /// Counters flattened row-major, array 0 first.
    pub fn counters(&self) -> &[u64] {
        &self.counters
    }

    pub fn memory_bits(&self) -> u64 {
        self.counters.len() as u64 * 64
    }

    /// The key's increment coefficient: 1, or `p_e` in prime mode.
    #[inline]
    pub fn coefficient(&self, key: Key) -> u64 {
        match self.mode {
            IncrementMode::Unit => 1,
            IncrementMode::Prime => {
                PRIME_TABLE[(mix128(self.prime_seed, key.0) % PRIME_TABLE_LEN as u64) as usize]
            }
        }
    }

    /// Global bucket index in each array, array 0 first.
    pub fn buckets(&self, key: Key) -> impl Iterator<Item = usize> + '_ {
        self.hash_seeds
            .iter()
            .zip(self.widths.iter().zip(&self.offsets))
            .map(move |(&s, (&w, &off))| off + (mix128(s, key.0) % w as u64) as usize)
    }

    pub fn insert(&mut self, key: Key, delta: u64) -> Result<(), CmError> {
        let add = delta as u128 * self.coefficient(key) as u128;
        let idx: Vec<usize> = self.buckets(key).collect();
        for &b in &idx {
            if self.counters[b] as u128 + add > COUNTER_LIMIT as u128 {
                return Err(CmError::Overflow {
                    bucket: b,
                    current: self.counters[b],
                    add,
                });
            }
        }
        for b in idx {
            self.counters[b] += add as u64;
        }
        Ok(())
    }

    pub fn query(&self, key: Key) -> u64 {
        let min = self
            .buckets(key)
            .map(|b| self.counters[b])
            .min()
            .unwrap_or(0);
        min / self.coefficient(key)
    }

    /// Exports `Phi * x = y` over `candidates`: columns in ascending key order,
    /// one row per bucket.
    pub fn to_equation_system<I>(&self, candidates: I) -> EquationSystem
    where
        I: IntoIterator<Item = Key>,
    {
        let columns: Vec<Key> = candidates
            .into_iter()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let coefficients = columns.iter().map(|&k| self.coefficient(k)).collect();
        let column_rows = columns.iter().map(|&k| self.buckets(k).collect()).collect();
        EquationSystem {
            columns,
            coefficients,
            column_rows,
            row_buckets: (0..self.counters.len()).collect(),
            rhs: self.counters.clone(),
        }
    }

    /// Adds another sketch's counters into this one. Layouts and seeds must
    /// match.
    pub fn merge(&mut self, other: &CmSketch) -> Result<(), ConfigError> {
        if self.widths != other.widths
            || self.hash_seeds != other.hash_seeds
            || self.prime_seed != other.prime_seed
            || self.mode != other.mode
        {
            return Err(ConfigError::new(
                "cannot merge sketches with different layouts",
            ));
        }
        for (a, &b) in self.counters.iter_mut().zip(&other.counters) {
            *a = a
                .checked_add(b)
                .filter(|&v| v <= COUNTER_LIMIT)
                .ok_or_else(|| ConfigError::new("counter overflow while merging"))?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(MAGIC);
        w.u8(match self.mode {
            IncrementMode::Unit => 0,
            IncrementMode::Prime => 1,
        });
        w.u16(self.widths.len() as u16);
        for (&width, &seed) in self.widths.iter().zip(&self.hash_seeds) {
            w.u64(width as u64);
            w.u64(seed);
        }
        w.u64(self.prime_seed);
        for &c in &self.counters {
            w.u64(c);
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::new(bytes, MAGIC)?;
        let mode = match r.u8()? {
            0 => IncrementMode::Unit,
            1 => IncrementMode::Prime,
            other => return Err(CodecError::Corrupt(format!("increment mode {other}"))),
        };
        let depth = r.u16()? as usize;
        let mut widths = Vec::with_capacity(depth);
        let mut seeds = Vec::with_capacity(depth);
        for _ in 0..depth {
            widths
                .push(usize::try_from(r.u64()?).map_err(|_| CodecError::Corrupt("width".into()))?);
            seeds.push(r.u64()?);
        }
        let total: u128 = widths.iter().map(|&w| w as u128).sum();
        if total * 8 > bytes.len() as u128 {
            return Err(CodecError::Truncated);
        }
        let mut sk = Self::with_widths(widths, mode, 0)?;
        sk.hash_seeds = seeds;
        sk.prime_seed = r.u64()?;
        for c in sk.counters.iter_mut() {
            *c = r.u64()?;
            if *c > COUNTER_LIMIT {
                return Err(CodecError::Corrupt("counter above 2^63-1".into()));
            }
        }
        r.finish()?;
        Ok(sk)
    }
}

/// Sparse system `Phi * x = y` over candidate keys.
///
/// Column `j` has the value `coefficients[j]` in each row of
/// `column_rows[j]` and zero elsewhere. `row_buckets` maps row indices back
/// to sketch buckets, which matters once a residual drops rows.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EquationSystem {
    pub columns: Vec<Key>,
    pub coefficients: Vec<u64>,
    pub column_rows: Vec<Vec<usize>>,
    pub row_buckets: Vec<usize>,
    pub rhs: Vec<u64>,
}

impl EquationSystem {
    pub fn num_rows(&self) -> usize {
        self.rhs.len()
    }

    pub fn num_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty() && self.rhs.iter().all(|&v| v == 0)
    }

    /// `Phi * x` in exact arithmetic.
    pub fn apply(&self, x: &[u64]) -> Vec<u128> {
        let mut out = vec![0u128; self.rhs.len()];
        for ((rows, &c), &v) in self.column_rows.iter().zip(&self.coefficients).zip(x) {
            for &r in rows {
                out[r] += c as u128 * v as u128;
            }
        }
        out
    }

    /// True when `Phi * x = y` holds exactly.
    pub fn is_solution(&self, x: &[u64]) -> bool {
        x.len() == self.columns.len()
            && self
                .apply(x)
                .iter()
                .zip(&self.rhs)
                .all(|(&a, &b)| a == b as u128)
    }

    /// Keys present in each row.
    pub fn row_columns(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.rhs.len()];
        for (j, rows) in self.column_rows.iter().enumerate() {
            for &r in rows {
                out[r].push(j);
            }
        }
        out
    }

    /// Dense row-major copy of `Phi`.
    pub fn dense(&self) -> Vec<f64> {
        let n = self.columns.len();
        let mut out = vec![0.0; self.rhs.len() * n];
        for (j, (rows, &c)) in self.column_rows.iter().zip(&self.coefficients).enumerate() {
            for &r in rows {
                out[r * n + j] += c as f64;
            }
        }
        out
    }

    /// Sub-system on the given columns, keeping only rows that those columns
    /// touch or whose right-hand side is nonzero.
    pub fn restrict(&self, keep_cols: &[usize], rhs: &[u64]) -> EquationSystem {
        let mut keep_row = rhs.iter().map(|&v| v != 0).collect::<Vec<_>>();
        for &j in keep_cols {
            for &r in &self.column_rows[j] {
                keep_row[r] = true;
            }
        }
        let mut new_index = vec![usize::MAX; rhs.len()];
        let mut row_buckets = Vec::new();
        let mut new_rhs = Vec::new();
        for (r, &keep) in keep_row.iter().enumerate() {
            if keep {
                new_index[r] = new_rhs.len();
                row_buckets.push(self.row_buckets[r]);
                new_rhs.push(rhs[r]);
            }
        }
        EquationSystem {
            columns: keep_cols.iter().map(|&j| self.columns[j]).collect(),
            coefficients: keep_cols.iter().map(|&j| self.coefficients[j]).collect(),
            column_rows: keep_cols
                .iter()
                .map(|&j| self.column_rows[j].iter().map(|&r| new_index[r]).collect())
                .collect(),
            row_buckets,
            rhs: new_rhs,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    #[test]
    fn prime_table_shape() {
        assert_eq!(&PRIME_TABLE[..4], &[257, 263, 269, 271]);
        assert!(PRIME_TABLE.windows(2).all(|w| w[0] < w[1]));
        // Primes #55 through #310.
        assert_eq!(PRIME_TABLE[255], 2053);
    }

    #[test]
    fn balanced_widths() {
        let sk = CmSketch::with_buckets(3, 130, IncrementMode::Unit, 0).unwrap();
        assert_eq!(sk.widths(), &[44, 43, 43]);
        assert_eq!(sk.num_buckets(), 130);
        let sk = CmSketch::for_capacity(100, 3, IncrementMode::Unit, 0).unwrap();
        assert_eq!(sk.widths(), &[41, 41, 41]);
        assert!(CmSketch::with_buckets(3, 2, IncrementMode::Unit, 0).is_err());
        assert!(CmSketch::for_capacity(10, 7, IncrementMode::Unit, 0).is_err());
    }

    #[test]
    fn buckets_land_in_their_own_array() {
        let sk = CmSketch::with_buckets(3, 100, IncrementMode::Unit, 1).unwrap();
        for k in 0..1000u32 {
            let b: Vec<_> = sk.buckets(Key::from(k)).collect();
            assert!(b[0] < 34 && (34..67).contains(&b[1]) && (67..100).contains(&b[2]));
        }
    }

    #[test]
    fn unit_insert_fills_every_array() {
        let mut sk = CmSketch::new(3, 16, IncrementMode::Unit, 2).unwrap();
        let k = Key(42);
        sk.insert(k, 1).unwrap();
        for b in sk.buckets(k) {
            assert_eq!(sk.counters()[b], 1);
        }
        assert_eq!(sk.counters().iter().sum::<u64>(), 3);
    }

    #[test]
    fn prime_insert_scales_by_key_prime() {
        let mut sk = CmSketch::new(3, 16, IncrementMode::Prime, 3).unwrap();
        let k = (0..10_000u32)
            .map(Key::from)
            .find(|&k| sk.coefficient(k) == 257)
            .unwrap();
        sk.insert(k, 3).unwrap();
        for b in sk.buckets(k) {
            assert_eq!(sk.counters()[b], 771);
        }
        assert_eq!(sk.query(k), 3);
    }

    #[test]
    fn collisions_add() {
        let mut sk = CmSketch::new(1, 1, IncrementMode::Unit, 0).unwrap();
        sk.insert(Key(1), 1).unwrap();
        sk.insert(Key(2), 1).unwrap();
        assert_eq!(sk.counters(), &[2]);
    }

    #[test]
    fn single_key_query_is_exact() {
        let mut sk = CmSketch::new(3, 8, IncrementMode::Prime, 4).unwrap();
        assert_eq!(sk.query(Key(9)), 0);
        for _ in 0..37 {
            sk.insert(Key(9), 1).unwrap();
        }
        assert_eq!(sk.query(Key(9)), 37);
    }

    #[test]
    fn overflow_is_an_error_and_leaves_counters_alone() {
        let mut sk = CmSketch::new(2, 4, IncrementMode::Unit, 0).unwrap();
        sk.insert(Key(1), COUNTER_LIMIT).unwrap();
        let before = sk.clone();
        assert!(matches!(
            sk.insert(Key(1), 1),
            Err(CmError::Overflow { .. })
        ));
        assert_eq!(sk, before);
    }

    #[test]
    fn single_candidate_column() {
        let mut sk = CmSketch::new(3, 10, IncrementMode::Prime, 5).unwrap();
        sk.insert(Key(7), 2).unwrap();
        let sys = sk.to_equation_system([Key(7)]);
        let dense = sys.dense();
        assert_eq!(dense.iter().filter(|&&v| v != 0.0).count(), 3);
        assert_eq!(sys.column_rows[0].len(), 3);
        assert!(sys.is_solution(&[2]));
    }

    #[test]
    fn oracle_counts_satisfy_the_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for mode in [IncrementMode::Unit, IncrementMode::Prime] {
            let mut sk = CmSketch::with_buckets(3, 130, mode, 7).unwrap();
            let mut truth: HashMap<Key, u64> = HashMap::new();
            for _ in 0..5000 {
                let k = Key(rng.random_range(0..100u128));
                sk.insert(k, 1).unwrap();
                *truth.entry(k).or_default() += 1;
            }
            // Extra never-inserted candidates get x = 0.
            let cands: Vec<Key> = (0..110u128).map(Key).collect();
            let sys = sk.to_equation_system(cands);
            let x: Vec<u64> = sys
                .columns
                .iter()
                .map(|k| truth.get(k).copied().unwrap_or(0))
                .collect();
            assert!(sys.is_solution(&x));
            for (j, rows) in sys.column_rows.iter().enumerate() {
                assert_eq!(rows.len(), 3);
                assert_eq!(sys.coefficients[j], sk.coefficient(sys.columns[j]));
            }
            for (k, &f) in &truth {
                assert!(sk.query(*k) >= f);
            }
        }
    }

    #[test]
    fn image_round_trip() {
        let mut sk = CmSketch::with_buckets(3, 50, IncrementMode::Prime, 8).unwrap();
        for k in 0..200u32 {
            sk.insert(Key::from(k), (k % 7 + 1) as u64).unwrap();
        }
        let bytes = sk.to_bytes();
        assert_eq!(CmSketch::from_bytes(&bytes).unwrap(), sk);
        assert!(CmSketch::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }

    proptest! {
        #[test]
        fn linearity(a in prop::collection::vec((0u32..500, 1u64..20), 0..60),
                     b in prop::collection::vec((0u32..500, 1u64..20), 0..60),
                     prime in any::<bool>()) {
            let mode = if prime { IncrementMode::Prime } else { IncrementMode::Unit };
            let fresh = CmSketch::with_buckets(3, 40, mode, 9).unwrap();
            let mut both = fresh.clone();
            let mut sa = fresh.clone();
            let mut sb = fresh;
            for &(k, d) in &a {
                both.insert(Key::from(k), d).unwrap();
                sa.insert(Key::from(k), d).unwrap();
            }
            for &(k, d) in &b {
                both.insert(Key::from(k), d).unwrap();
                sb.insert(Key::from(k), d).unwrap();
            }
            let sum: Vec<u64> = sa.counters().iter().zip(sb.counters()).map(|(x, y)| x + y).collect();
            prop_assert_eq!(both.counters(), &sum[..]);
            sa.merge(&sb).unwrap();
            prop_assert_eq!(sa.counters(), both.counters());
        }
    }
}
