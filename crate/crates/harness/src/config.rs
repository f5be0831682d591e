//! Experiment configuration, read from TOML. Every field has a default, so an
//! empty file is a valid configuration.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use hidden_sketch::cmsketch::IncrementMode;
use hidden_sketch::{DecoderConfig, TrackerConfig};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, PartialEq, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub tree: TreeSection,
    pub rbf: RbfSection,
    pub cm: CmSection,
    pub coldfilter: ColdFilterSection,
    pub decoder: DecoderSection,
    pub workload: WorkloadSection,
    pub tasks: TaskSection,
    pub seeds: SeedSection,
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeSection {
    /// Key width in bits.
    pub key_bits: u32,
    /// Leaf segment width; each leaf bitmap has `2^leaf_bits` bits.
    pub leaf_bits: u32,
    /// Children per internal node.
    pub arity: usize,
}

impl Default for TreeSection {
    fn default() -> Self {
        Self {
            key_bits: 32,
            leaf_bits: 8,
            arity: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct RbfSection {
    /// Distinct keys the Hidden Sketch is sized for.
    pub capacity: u64,
    /// Filter-stage false-positive target; omitted means `2^(k - key_bits)`.
    pub epsilon: Option<f64>,
    /// Whether the root segment gets its own Bloom filter.
    pub root_filter: bool,
}

impl Default for RbfSection {
    fn default() -> Self {
        Self {
            capacity: 1800,
            epsilon: None,
            root_filter: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct CmSection {
    pub depth: usize,
    /// `"prime"` or `"unit"`.
    pub mode: String,
    /// Total buckets; omitted means `ceil(c_d * capacity / d)` per array.
    pub buckets: Option<usize>,
}

impl Default for CmSection {
    fn default() -> Self {
        Self {
            depth: 3,
            mode: "prime".into(),
            buckets: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColdFilterSection {
    pub depth: usize,
    /// Items pass on once their estimate exceeds this value.
    pub threshold: u8,
    pub counter_max: u8,
}

impl Default for ColdFilterSection {
    fn default() -> Self {
        Self {
            depth: 3,
            threshold: 18,
            counter_max: 255,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderSection {
    pub rank_tolerance: f64,
    pub round_tolerance: f64,
    pub svd: bool,
    pub ilp: bool,
    pub ilp_node_budget: u64,
}

impl Default for DecoderSection {
    fn default() -> Self {
        let d = DecoderConfig::default();
        Self {
            rank_tolerance: d.rank_tolerance,
            round_tolerance: d.round_tolerance,
            svd: d.svd_enabled,
            ilp: d.ilp_enabled,
            ilp_node_budget: d.ilp_node_budget,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadSection {
    /// Trace files: one per window, or a single file whose first half is
    /// window one. When omitted, both windows are generated from the
    /// parameters below.
    pub traces: Vec<PathBuf>,
    pub items: usize,
    pub keys: usize,
    pub skew: f64,
    /// Share of keys whose popularity ranks are shuffled in window two.
    pub permute_fraction: f64,
}

impl Default for WorkloadSection {
    fn default() -> Self {
        Self {
            traces: Vec::new(),
            items: 200_000,
            keys: 6000,
            skew: 1.0,
            permute_fraction: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSection {
    /// Heavy-hitter threshold as a share of the window's items.
    pub hh_fraction: f64,
    /// Heavy-changer threshold as a share of the total change.
    pub hc_fraction: f64,
    /// Memory budgets to sweep, in KiB.
    pub memory_kb: Vec<u64>,
}

impl Default for TaskSection {
    fn default() -> Self {
        Self {
            hh_fraction: 1e-4,
            hc_fraction: 5e-4,
            memory_kb: vec![50, 75, 100, 150, 200],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedSection {
    pub sketch: u64,
    pub workload: u64,
}

impl Default for SeedSection {
    fn default() -> Self {
        Self {
            sketch: 1,
            workload: 42,
        }
    }
}

impl ExperimentConfig {
    /// Reads a config file; relative trace paths resolve against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg = Self::parse(&text).with_context(|| format!("in {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for t in &mut cfg.workload.traces {
            if t.is_relative() {
                *t = base.join(&*t);
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.cm.mode.as_str(), "prime" | "unit") {
            bail!(
                "cm.mode must be \"prime\" or \"unit\", got {:?}",
                self.cm.mode
            );
        }
        if self.workload.traces.len() > 2 {
            bail!("workload.traces takes at most two files, one per window");
        }
        if self.tasks.memory_kb.is_empty() {
            bail!("tasks.memory_kb must list at least one budget");
        }
        if !(self.tasks.hh_fraction > 0.0 && self.tasks.hc_fraction > 0.0) {
            bail!("task fractions must be positive");
        }
        if self.workload.traces.is_empty() && (self.workload.keys == 0 || self.workload.skew < 0.0)
        {
            bail!("workload needs at least one key and a non-negative skew");
        }
        self.tracker().validate()?;
        Ok(())
    }

    pub fn decoder(&self) -> DecoderConfig {
        DecoderConfig {
            rank_tolerance: self.decoder.rank_tolerance,
            round_tolerance: self.decoder.round_tolerance,
            svd_enabled: self.decoder.svd,
            ilp_enabled: self.decoder.ilp,
            ilp_node_budget: self.decoder.ilp_node_budget,
            ..DecoderConfig::default()
        }
    }

    /// Tracker settings with the cold filter left at its default size; see
    /// [`TrackerConfig::with_total_memory`].
    pub fn tracker(&self) -> TrackerConfig {
        TrackerConfig {
            key_bits: self.tree.key_bits,
            leaf_bits: self.tree.leaf_bits,
            arity: self.tree.arity,
            capacity: self.rbf.capacity,
            rbf_epsilon: self.rbf.epsilon,
            root_filter: self.rbf.root_filter,
            cm_depth: self.cm.depth,
            cm_mode: if self.cm.mode == "unit" {
                IncrementMode::Unit
            } else {
                IncrementMode::Prime
            },
            cm_buckets: self.cm.buckets,
            cold_depth: self.coldfilter.depth,
            threshold: self.coldfilter.threshold,
            counter_max: self.coldfilter.counter_max,
            decoder: self.decoder(),
            seed: self.seeds.sketch,
            ..TrackerConfig::default()
        }
    }
}
