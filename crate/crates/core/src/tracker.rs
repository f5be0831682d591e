//! Two-stage tracker: a cold filter in front of a Hidden Sketch.
//!
//! Items first hit the cold filter. Once an item's filter estimate exceeds
//! `T`, every later occurrence goes to the Hidden Sketch, a reversible Bloom
//! filter paired with a CM sketch. At the end of a window the filter is
//! recovered to get candidate keys, the CM sketch is decoded over them, and a
//! key's frequency is reported as its decoded count plus `T`.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::cmsketch::{CmError, CmSketch, IncrementMode};
use crate::codec::{Reader, Writer};
use crate::coldfilter::CuFilter;
use crate::decoder::{decode, DecodeResult, DecodeStatus, DecoderConfig, Diagnostics};
use crate::error::{CodecError, ConfigError};
use crate::hash::SeedSequence;
use crate::keyspace::{Key, SegTree};
use crate::rbf::{plan_memory_with, PlanOptions, Rbf};

const MAGIC: &[u8; 4] = b"HSWN";

#[derive(Debug, Error)]
pub enum TrackerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Overflow(#[from] CmError),
    #[error("key {0} does not fit the configured key width")]
    KeyTooWide(Key),
    #[error("window {0} failed to decode")]
    WindowFailed(u64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackerConfig {
    pub key_bits: u32,
    pub leaf_bits: u32,
    pub arity: usize,
    /// Distinct keys the Hidden Sketch is sized for.
    pub capacity: u64,
    /// Filter-stage false-positive target; `None` means `2^(k - l)`.
    pub rbf_epsilon: Option<f64>,
    pub root_filter: bool,
    pub cm_depth: usize,
    pub cm_mode: IncrementMode,
    /// Total CM buckets; `None` sizes from `capacity` with the peeling ratio.
    pub cm_buckets: Option<usize>,
    pub cold_depth: usize,
    pub cold_bits: u64,
    pub threshold: u8,
    pub counter_max: u8,
    pub decoder: DecoderConfig,
    pub seed: u64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            key_bits: 32,
            leaf_bits: 8,
            arity: 2,
            capacity: 1800,
            rbf_epsilon: None,
            root_filter: true,
            cm_depth: 3,
            cm_mode: IncrementMode::Prime,
            cm_buckets: None,
            cold_depth: 3,
            cold_bits: 8 * 3 * 8192,
            threshold: 200,
            counter_max: u8::MAX,
            decoder: DecoderConfig::default(),
            seed: 0,
        }
    }
}

impl TrackerConfig {
    pub fn tree(&self) -> Result<SegTree, ConfigError> {
        SegTree::build(self.key_bits, self.leaf_bits, self.arity)
    }

    /// Bits used by the Hidden Sketch's bit and counter arrays.
    pub fn hidden_bits(&self) -> Result<u64, ConfigError> {
        let h = HiddenSketch::new(self)?;
        Ok(h.memory_bits())
    }

    /// Gives the cold filter whatever `total_bits` leaves after the Hidden
    /// Sketch.
    pub fn with_total_memory(mut self, total_bits: u64) -> Result<Self, ConfigError> {
        let hidden = self.hidden_bits()?;
        if total_bits <= hidden {
            return Err(ConfigError::new(format!(
                "memory budget of {total_bits} bits leaves nothing for the cold filter (hidden sketch uses {hidden})"
            )));
        }
        self.cold_bits = total_bits - hidden;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.tree()?;
        self.decoder.validate()?;
        if self.capacity == 0 {
            return Err(ConfigError::new("capacity must be at least 1"));
        }
        if self.threshold >= self.counter_max {
            return Err(ConfigError::new("threshold must be below counter_max"));
        }
        Ok(())
    }

    fn seeds(&self) -> (u64, u64, u64) {
        let mut s = SeedSequence::new(self.seed);
        (s.next_seed(), s.next_seed(), s.next_seed())
    }
}

/// A reversible Bloom filter and a CM sketch updated in lockstep.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenSketch {
    pub rbf: Rbf,
    pub cm: CmSketch,
    pub decoder: DecoderConfig,
    pub capacity: u64,
    /// Keys that were new to the filter when inserted.
    pub distinct: u64,
}

impl HiddenSketch {
    pub fn new(cfg: &TrackerConfig) -> Result<Self, ConfigError> {
        let tree = cfg.tree()?;
        let (rbf_seed, cm_seed, _) = cfg.seeds();
        let eps = cfg
            .rbf_epsilon
            .unwrap_or_else(|| 2f64.powi(tree.leaf_count() as i32 - cfg.key_bits as i32));
        let opts = PlanOptions {
            root_filter: cfg.root_filter,
            shares: None,
        };
        let plan = plan_memory_with(cfg.capacity, eps, &tree, &opts)?;
        let rbf = Rbf::from_plan(tree, &plan, rbf_seed)?;
        let cm = match cfg.cm_buckets {
            Some(m) => CmSketch::with_buckets(cfg.cm_depth, m, cfg.cm_mode, cm_seed)?,
            None => {
                CmSketch::for_capacity(cfg.capacity as usize, cfg.cm_depth, cfg.cm_mode, cm_seed)?
            }
        };
        Ok(Self {
            rbf,
            cm,
            decoder: cfg.decoder.clone(),
            capacity: cfg.capacity,
            distinct: 0,
        })
    }

    pub fn insert(&mut self, key: Key) -> Result<(), CmError> {
        self.cm.insert(key, 1)?;
        if !self.rbf.contains(key) {
            self.distinct += 1;
            self.rbf.insert(key);
        }
        Ok(())
    }

    pub fn over_capacity(&self) -> bool {
        self.distinct > self.capacity
    }

    pub fn memory_bits(&self) -> u64 {
        self.rbf.total_bits() + self.cm.memory_bits()
    }

    /// Recovers candidates and decodes. Errors are reported as text; the
    /// window is then treated as failed.
    pub fn decode(&self) -> Result<DecodeResult, String> {
        let candidates = self.rbf.recover().map_err(|e| e.to_string())?;
        decode(candidates, &self.cm, &self.decoder).map_err(|e| e.to_string())
    }
}

pub struct Tracker {
    cfg: TrackerConfig,
    window_id: u64,
    total_items: u64,
    cold: CuFilter,
    hidden: HiddenSketch,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let (cold, hidden) = Self::fresh(&cfg)?;
        Ok(Self {
            cfg,
            window_id: 0,
            total_items: 0,
            cold,
            hidden,
        })
    }

    fn fresh(cfg: &TrackerConfig) -> Result<(CuFilter, HiddenSketch), ConfigError> {
        let (_, _, cold_seed) = cfg.seeds();
        let width = (cfg.cold_bits / (cfg.cold_depth.max(1) as u64 * 8)) as usize;
        let cold = CuFilter::new(
            cfg.cold_depth,
            width,
            cfg.threshold,
            cfg.counter_max,
            cold_seed,
        )?;
        Ok((cold, HiddenSketch::new(cfg)?))
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    pub fn window_id(&self) -> u64 {
        self.window_id
    }

    pub fn total_items(&self) -> u64 {
        self.total_items
    }

    pub fn cold(&self) -> &CuFilter {
        &self.cold
    }

    pub fn hidden(&self) -> &HiddenSketch {
        &self.hidden
    }

    pub fn memory_bits(&self) -> u64 {
        self.cold.memory_bits() + self.hidden.memory_bits()
    }

    pub fn process(&mut self, key: Key) -> Result<(), TrackerError> {
        if !self.hidden.rbf.tree().fits(key) {
            return Err(TrackerError::KeyTooWide(key));
        }
        self.total_items += 1;
        if self.cold.offer(key) {
            self.hidden.insert(key)?;
        }
        Ok(())
    }

    pub fn process_weighted(&mut self, key: Key, weight: u64) -> Result<(), TrackerError> {
        for _ in 0..weight {
            self.process(key)?;
        }
        Ok(())
    }

    /// Ends the current window and starts a fresh one with the same seeds.
    pub fn close_window(&mut self) -> ClosedWindow {
        let (cold, hidden) = Self::fresh(&self.cfg).expect("config validated at construction");
        let closed = ClosedWindow {
            window_id: self.window_id,
            total_items: self.total_items,
            cold: std::mem::replace(&mut self.cold, cold),
            hidden: std::mem::replace(&mut self.hidden, hidden),
        };
        self.window_id += 1;
        self.total_items = 0;
        closed
    }
}

/// Sketch state of a finished window.
#[derive(Clone, Debug, PartialEq)]
pub struct ClosedWindow {
    pub window_id: u64,
    pub total_items: u64,
    pub cold: CuFilter,
    pub hidden: HiddenSketch,
}

impl ClosedWindow {
    pub fn threshold(&self) -> u64 {
        self.cold.threshold() as u64
    }

    pub fn decode(self) -> DecodedWindow {
        let t = self.threshold();
        match self.hidden.decode() {
            Ok(res) if res.status != DecodeStatus::Failed => DecodedWindow {
                reported: res.frequencies.iter().map(|(&k, &f)| (k, f + t)).collect(),
                status: res.status,
                failure: None,
                diagnostics: Some(res.diagnostics),
                window: self,
            },
            Ok(res) => DecodedWindow {
                reported: BTreeMap::new(),
                status: DecodeStatus::Failed,
                failure: Some(format!("{} keys left unresolved", res.unresolved.len())),
                diagnostics: Some(res.diagnostics),
                window: self,
            },
            Err(e) => DecodedWindow {
                reported: BTreeMap::new(),
                status: DecodeStatus::Failed,
                failure: Some(e),
                diagnostics: None,
                window: self,
            },
        }
    }

    /// Snapshot image: header, then the cold filter, RBF and CM images.
    pub fn to_bytes(&self) -> Vec<u8> {
        let d = &self.hidden.decoder;
        let mut w = Writer::new(MAGIC);
        w.u64(self.window_id);
        w.u64(self.total_items);
        w.u64(self.hidden.capacity);
        w.u64(self.hidden.distinct);
        w.u64(d.rank_tolerance.to_bits());
        w.u64(d.round_tolerance.to_bits());
        w.u8(d.svd_enabled as u8);
        w.u8(d.ilp_enabled as u8);
        w.u64(d.ilp_node_budget);
        w.blob(&self.cold.to_bytes());
        w.blob(&self.hidden.rbf.to_bytes());
        w.blob(&self.hidden.cm.to_bytes());
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::new(bytes, MAGIC)?;
        let window_id = r.u64()?;
        let total_items = r.u64()?;
        let capacity = r.u64()?;
        let distinct = r.u64()?;
        let decoder = DecoderConfig {
            rank_tolerance: f64::from_bits(r.u64()?),
            round_tolerance: f64::from_bits(r.u64()?),
            svd_enabled: r.u8()? != 0,
            ilp_enabled: r.u8()? != 0,
            ilp_node_budget: r.u64()?,
            ..DecoderConfig::default()
        };
        decoder.validate()?;
        let cold = CuFilter::from_bytes(r.blob()?)?;
        let rbf = Rbf::from_bytes(r.blob()?)?;
        let cm = CmSketch::from_bytes(r.blob()?)?;
        r.finish()?;
        Ok(Self {
            window_id,
            total_items,
            cold,
            hidden: HiddenSketch {
                rbf,
                cm,
                decoder,
                capacity,
                distinct,
            },
        })
    }
}

/// A closed window after decoding.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodedWindow {
    pub window: ClosedWindow,
    pub status: DecodeStatus,
    /// Decoded count plus `T`, for every key with a nonzero decode.
    pub reported: BTreeMap<Key, u64>,
    pub failure: Option<String>,
    pub diagnostics: Option<Diagnostics>,
}

/// Heavy hitters of one window.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowReport {
    pub window_id: u64,
    pub heavy_hitters: BTreeMap<Key, u64>,
    pub status: DecodeStatus,
    pub failure: Option<String>,
    pub diagnostics: Option<Diagnostics>,
    pub total_items: u64,
    pub distinct_inserted: u64,
    pub over_capacity: bool,
}

impl DecodedWindow {
    pub fn is_failed(&self) -> bool {
        self.status == DecodeStatus::Failed
    }

    /// Keys whose reported frequency is at least `threshold`.
    pub fn heavy_hitters(&self, threshold: u64) -> WindowReport {
        WindowReport {
            window_id: self.window.window_id,
            heavy_hitters: self
                .reported
                .iter()
                .filter(|&(_, &f)| f >= threshold)
                .map(|(&k, &f)| (k, f))
                .collect(),
            status: self.status,
            failure: self.failure.clone(),
            diagnostics: self.diagnostics.clone(),
            total_items: self.window.total_items,
            distinct_inserted: self.window.hidden.distinct,
            over_capacity: self.window.hidden.over_capacity(),
        }
    }

    /// Frequency estimate: decoded count plus `T` when the key was decoded,
    /// the cold filter's estimate otherwise.
    pub fn estimate(&self, key: Key) -> u64 {
        self.reported
            .get(&key)
            .copied()
            .unwrap_or_else(|| self.window.cold.estimate(key))
    }
}

/// Keys whose estimated frequency differs by more than `delta` between two
/// windows, with the signed change `f_b - f_a`. Candidates are the heavy
/// hitters (at `hh_threshold`) of either window.
pub fn heavy_changers(
    a: &DecodedWindow,
    b: &DecodedWindow,
    hh_threshold: u64,
    delta: u64,
) -> Result<BTreeMap<Key, i64>, TrackerError> {
    for w in [a, b] {
        if w.is_failed() {
            return Err(TrackerError::WindowFailed(w.window.window_id));
        }
    }
    let candidates: BTreeSet<Key> = a
        .heavy_hitters(hh_threshold)
        .heavy_hitters
        .into_keys()
        .chain(b.heavy_hitters(hh_threshold).heavy_hitters.into_keys())
        .collect();
    Ok(candidates
        .into_iter()
        .filter_map(|k| {
            let change = b.estimate(k) as i64 - a.estimate(k) as i64;
            (change.unsigned_abs() > delta).then_some((k, change))
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg(threshold: u8) -> TrackerConfig {
        TrackerConfig {
            capacity: 50,
            cold_bits: 8 * 3 * 512,
            threshold,
            seed: 3,
            ..TrackerConfig::default()
        }
    }

    #[test]
    fn rare_keys_never_reach_the_hidden_sketch() {
        let mut t = Tracker::new(small_cfg(200)).unwrap();
        for _ in 0..200 {
            t.process(Key(7)).unwrap();
        }
        assert_eq!(t.hidden().distinct, 0);
        assert!(t.hidden().cm.counters().iter().all(|&c| c == 0));
    }

    #[test]
    fn single_item_stream_leaves_hidden_sketch_empty() {
        let mut t = Tracker::new(small_cfg(200)).unwrap();
        t.process(Key(1)).unwrap();
        let w = t.close_window().decode();
        assert_eq!(w.status, DecodeStatus::Full);
        assert!(w.reported.is_empty());
        assert_eq!(w.window.total_items, 1);
    }

    #[test]
    fn lone_heavy_key_is_reported_exactly() {
        let mut t = Tracker::new(small_cfg(200)).unwrap();
        t.process_weighted(Key(0xC0A8_8501), 2000).unwrap();
        let closed = t.close_window();
        // Offers 1..=200 stay in the filter; the remaining 1800 pass.
        assert_eq!(closed.hidden.cm.query(Key(0xC0A8_8501)), 1800);
        let w = closed.decode();
        let rep = w.heavy_hitters(1000);
        assert_eq!(rep.heavy_hitters.get(&Key(0xC0A8_8501)), Some(&2000));
        assert!(w.heavy_hitters(2001).heavy_hitters.is_empty());
    }

    #[test]
    fn empty_window_reports_nothing() {
        let mut t = Tracker::new(small_cfg(20)).unwrap();
        let w = t.close_window().decode();
        assert_eq!(w.status, DecodeStatus::Full);
        assert!(w.heavy_hitters(1).heavy_hitters.is_empty());
    }

    #[test]
    fn windows_reset_and_keep_seeds() {
        let mut t = Tracker::new(small_cfg(20)).unwrap();
        t.process_weighted(Key(5), 100).unwrap();
        let first = t.close_window();
        assert_eq!(t.window_id(), 1);
        assert_eq!(t.total_items(), 0);
        assert_eq!(t.cold().estimate(Key(5)), 0);
        t.process_weighted(Key(5), 100).unwrap();
        let second = t.close_window();
        assert_eq!(first.hidden.cm.counters(), second.hidden.cm.counters());
        assert_eq!(first.hidden.rbf, second.hidden.rbf);
    }

    #[test]
    fn changer_between_single_key_windows() {
        let mut t = Tracker::new(small_cfg(200)).unwrap();
        t.process_weighted(Key(9), 1000).unwrap();
        let a = t.close_window().decode();
        let b = t.close_window().decode();
        let changes = heavy_changers(&a, &b, 400, 500).unwrap();
        // Decoded exactly in the first window; absent from the second.
        assert_eq!(changes[&Key(9)], -1000);
        assert!(heavy_changers(&a, &a, 400, 0).unwrap().is_empty());
    }

    #[test]
    fn memory_split() {
        let cfg = TrackerConfig {
            threshold: 18,
            ..TrackerConfig::default()
        };
        let hidden = cfg.hidden_bits().unwrap();
        let cfg = cfg.with_total_memory(100 * 8192).unwrap();
        assert_eq!(cfg.cold_bits + hidden, 100 * 8192);
        assert!(TrackerConfig::default().with_total_memory(1000).is_err());
        let t = Tracker::new(cfg).unwrap();
        assert!(t.memory_bits() <= 100 * 8192);
    }

    #[test]
    fn rejects_bad_config_and_wide_keys() {
        assert!(Tracker::new(TrackerConfig {
            threshold: 255,
            ..small_cfg(0)
        })
        .is_err());
        let mut t = Tracker::new(small_cfg(20)).unwrap();
        assert!(matches!(
            t.process(Key(1 << 40)),
            Err(TrackerError::KeyTooWide(_))
        ));
    }

    #[test]
    fn snapshot_round_trip() {
        let mut t = Tracker::new(small_cfg(5)).unwrap();
        for k in 0..40u32 {
            t.process_weighted(Key::from(k * 7919), (k % 9 + 1) as u64 * 3)
                .unwrap();
        }
        let closed = t.close_window();
        let bytes = closed.to_bytes();
        let back = ClosedWindow::from_bytes(&bytes).unwrap();
        assert_eq!(back, closed);
        assert_eq!(back.decode().reported, closed.decode().reported);
        assert!(ClosedWindow::from_bytes(&bytes[..bytes.len() - 2]).is_err());
    }
}
