//! Reversible Bloom filter.
//!
//! Leaf segments live in a bitmap block array: the full key picks a block
//! with `h(key)`, and inside that block each leaf segment sets one bit of its
//! own `2^leaf_bits`-bit bitmap. Every internal node of the [`SegTree`] owns an
//! ordinary Bloom filter over its segment. Membership needs all of those bits;
//! recovery walks each block bottom-up, taking Cartesian products of child
//! candidate sets and filtering them through the node's Bloom filter, so the
//! recovered set is exactly the set of keys for which [`Rbf::contains`] holds.
//!
//! The structure is insert-only.

use std::f64::consts::LN_2;

use thiserror::Error;

use crate::bits::BitArray;
use crate::codec::{Reader, Writer};
use crate::error::{CodecError, ConfigError};
use crate::hash::{mix128, SeedSequence};
use crate::keyspace::{Key, NodeId, SegTree};

/// Default cap on any intermediate Cartesian product during recovery.
pub const DEFAULT_RECOVER_CAP: usize = 1 << 22;

const MAGIC: &[u8; 4] = b"HRBF";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RecoverError {
    #[error("candidate explosion at node {node} in block {block}: product of {size} entries exceeds cap {cap}")]
    Explosion {
        node: NodeId,
        block: usize,
        size: u128,
        cap: usize,
    },
}

/// Bits for a Bloom filter holding `n` items at false-positive rate `eps`,
/// `-n ln(eps) / ln(2)^2`, rounded up.
pub fn bloom_bits(n: u64, eps: f64) -> u64 {
    (-(n as f64) * eps.ln() / (LN_2 * LN_2)).ceil() as u64
}

/// Optimal hash count for false-positive rate `eps`, `-ln(eps) / ln 2`, rounded
/// to the nearest integer and at least one.
pub fn bloom_hashes(eps: f64) -> u32 {
    ((-eps.ln() / LN_2).round() as u32).max(1)
}

/// Number of bitmap blocks that keeps the block array's own false-positive
/// fraction at `2^-k`: `ceil(n / (W ln 2))`.
pub fn block_count_for(n: u64, leaf_space: usize) -> usize {
    ((n as f64 / (leaf_space as f64 * LN_2)).ceil() as usize).max(1)
}

/// Expected fraction of the keyspace that passes the block array when `n`
/// keys are spread over `blocks` blocks, `(1 - e^{-n/(W B)})^k`.
pub fn block_pass_rate(n: u64, leaf_space: usize, blocks: usize, leaves: usize) -> f64 {
    let load = n as f64 / (leaf_space as f64 * blocks as f64);
    (1.0 - (-load).exp()).powi(leaves as i32)
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodePlan {
    pub node: NodeId,
    pub bits: u64,
    pub hashes: u32,
    pub fpr: f64,
}

/// Sizing of one RBF for a design capacity.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryPlan {
    pub capacity_n: u64,
    /// Target false-positive rate of the internal-node filter stage.
    pub target_fpr: f64,
    pub block_count: usize,
    pub block_bits: u64,
    /// Predicted pass rate of the block array at `capacity_n` keys.
    pub block_pass_rate: f64,
    /// Combined false-positive rate the node filters are sized for.
    pub filter_fpr: f64,
    pub per_node: Vec<NodePlan>,
    pub total_bits: u64,
}

impl MemoryPlan {
    pub fn filter_bits(&self) -> u64 {
        self.per_node.iter().map(|p| p.bits).sum()
    }

    /// Predicted false-positive rate of a full membership test.
    pub fn predicted_fpr(&self) -> f64 {
        self.block_pass_rate * self.filter_fpr
    }
}

/// Knobs for [`plan_memory_with`].
#[derive(Clone, Debug, PartialEq)]
pub struct PlanOptions {
    /// Give the root its own filter (when the root is an internal node).
    pub root_filter: bool,
    /// Relative share of filter memory per filtered node, in
    /// `SegTree::internals()` order (root last, skipped when `root_filter` is
    /// off). `None` splits equally.
    pub shares: Option<Vec<f64>>,
}

impl Default for PlanOptions {
    fn default() -> Self {
        Self {
            root_filter: true,
            shares: None,
        }
    }
}

/// Sizes an RBF for `n` keys with filter-stage false-positive target
/// `epsilon`, equal memory split and a root filter.
pub fn plan_memory(n: u64, epsilon: f64, tree: &SegTree) -> Result<MemoryPlan, ConfigError> {
    plan_memory_with(n, epsilon, tree, &PlanOptions::default())
}

/// Sizes an RBF.
///
/// The block array gets `ceil(n / (W ln 2))` blocks. At exactly
/// `n / (W ln 2)` blocks the array passes `2^-k` of the keyspace; rounding the
/// block count up passes less, and that surplus is credited to the filters:
/// they are sized for `epsilon * 2^-k / pass_rate` so the end-to-end rate stays
/// `epsilon * 2^-k`. With `epsilon = 2^{k-l}` the whole structure stays close
/// to `l * n / ln 2` bits.
///
/// Node `i` with share `s_i` (shares sum to one) targets `fpr^{s_i}`, so the
/// product over nodes meets the stage target, and is sized with the
/// single-filter optimum: `-n ln(eps_i) / ln(2)^2` bits and
/// `-ln(eps_i) / ln 2` hashes.
pub fn plan_memory_with(
    n: u64,
    epsilon: f64,
    tree: &SegTree,
    opts: &PlanOptions,
) -> Result<MemoryPlan, ConfigError> {
    if n == 0 {
        return Err(ConfigError::new("capacity must be at least 1"));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(ConfigError::new(format!(
            "epsilon must lie in (0, 1), got {epsilon}"
        )));
    }
    let w = tree.leaf_space();
    let k = tree.leaf_count();
    let block_count = block_count_for(n, w);
    let block_bits = (block_count * k * w) as u64;
    let pass = block_pass_rate(n, w, block_count, k);
    let nominal = 0.5f64.powi(k as i32);

    let filtered = filtered_nodes(tree, opts.root_filter);
    let shares = match &opts.shares {
        None => vec![1.0 / filtered.len().max(1) as f64; filtered.len()],
        Some(s) => {
            if s.len() != filtered.len() {
                return Err(ConfigError::new(format!(
                    "{} filter shares given for {} filtered nodes",
                    s.len(),
                    filtered.len()
                )));
            }
            if s.iter().any(|&x| x.is_nan() || x <= 0.0) {
                return Err(ConfigError::new("filter shares must be positive"));
            }
            let total: f64 = s.iter().sum();
            s.iter().map(|x| x / total).collect()
        }
    };

    let filter_fpr = (epsilon * nominal / pass).min(0.5);
    let mut per_node = Vec::with_capacity(filtered.len());
    for (&node, share) in filtered.iter().zip(&shares) {
        let eps_node = filter_fpr.powf(*share).min(0.5);
        let hashes = bloom_hashes(eps_node);
        if hashes > 64 {
            return Err(ConfigError::new(format!(
                "node {node} would need {hashes} hash functions (limit 64); epsilon too small"
            )));
        }
        per_node.push(NodePlan {
            node,
            bits: bloom_bits(n, eps_node).max(8),
            hashes,
            fpr: eps_node,
        });
    }
    let achieved: f64 = per_node.iter().map(|p| p.fpr).product();

    let total_bits = block_bits + per_node.iter().map(|p| p.bits).sum::<u64>();
    Ok(MemoryPlan {
        capacity_n: n,
        target_fpr: epsilon,
        block_count,
        block_bits,
        block_pass_rate: pass,
        filter_fpr: if per_node.is_empty() { 1.0 } else { achieved },
        per_node,
        total_bits,
    })
}

fn filtered_nodes(tree: &SegTree, root_filter: bool) -> Vec<NodeId> {
    tree.internals()
        .iter()
        .copied()
        .filter(|&n| root_filter || n != tree.root())
        .collect()
}

/// Bloom filter attached to one internal tree node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeBloomFilter {
    node: NodeId,
    bits: BitArray,
    seeds: Vec<u64>,
}

impl NodeBloomFilter {
    fn new(node: NodeId, bits: u64, seeds: Vec<u64>) -> Self {
        Self {
            node,
            bits: BitArray::new(bits),
            seeds,
        }
    }

    pub fn node(&self) -> NodeId {
        self.node
    }

    pub fn num_bits(&self) -> u64 {
        self.bits.len()
    }

    pub fn num_hashes(&self) -> usize {
        self.seeds.len()
    }

    fn positions(&self, segment: u128) -> impl Iterator<Item = u64> + '_ {
        let m = self.bits.len();
        self.seeds.iter().map(move |&s| mix128(s, segment) % m)
    }

    fn insert(&mut self, segment: u128) {
        let m = self.bits.len();
        for &s in &self.seeds {
            self.bits.set(mix128(s, segment) % m);
        }
    }

    #[inline]
    pub fn contains(&self, segment: u128) -> bool {
        self.positions(segment).all(|p| self.bits.get(p))
    }
}

/// Reversible Bloom filter over the keys of a [`SegTree`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rbf {
    tree: SegTree,
    block_count: usize,
    block_seed: u64,
    /// `block_count * leaf_count` bitmaps of `2^leaf_bits` bits, block-major.
    blocks: BitArray,
    filters: Vec<NodeBloomFilter>,
    /// Index into `filters` by node id.
    filter_of: Vec<Option<usize>>,
    recover_cap: usize,
}

impl Rbf {
    /// Builds an empty filter laid out per `plan`. Seeds are drawn from
    /// `seed`; the block hash gets the first one so it never coincides with a
    /// node-filter seed.
    pub fn from_plan(tree: SegTree, plan: &MemoryPlan, seed: u64) -> Result<Self, ConfigError> {
        let specs: Vec<(NodeId, u64, u32)> = plan
            .per_node
            .iter()
            .map(|p| (p.node, p.bits, p.hashes))
            .collect();
        Self::with_layout(tree, plan.block_count, &specs, seed)
    }

    /// Builds an empty filter from explicit `(node, bits, hashes)` filter
    /// specs. Every internal node except possibly the root must have a spec.
    pub fn with_layout(
        tree: SegTree,
        block_count: usize,
        filters: &[(NodeId, u64, u32)],
        seed: u64,
    ) -> Result<Self, ConfigError> {
        if block_count == 0 {
            return Err(ConfigError::new("block_count must be at least 1"));
        }
        let mut seeds = SeedSequence::new(seed);
        let block_seed = seeds.next_seed();
        let mut filter_of = vec![None; tree.nodes().len()];
        let mut built = Vec::with_capacity(filters.len());
        for &(node, bits, hashes) in filters {
            if node >= tree.nodes().len() || tree.node(node).is_leaf() {
                return Err(ConfigError::new(format!(
                    "node {node} is not an internal node"
                )));
            }
            if filter_of[node].is_some() {
                return Err(ConfigError::new(format!("node {node} given two filters")));
            }
            if bits == 0 || hashes == 0 || hashes > 64 {
                return Err(ConfigError::new(format!(
                    "node {node}: need bits >= 1 and 1..=64 hashes"
                )));
            }
            filter_of[node] = Some(built.len());
            built.push(NodeBloomFilter::new(
                node,
                bits,
                seeds.take(hashes as usize),
            ));
        }
        for &n in tree.internals() {
            if filter_of[n].is_none() && n != tree.root() {
                return Err(ConfigError::new(format!("internal node {n} has no filter")));
            }
        }
        let block_bits = block_count as u64 * tree.leaf_count() as u64 * tree.leaf_space() as u64;
        Ok(Self {
            block_count,
            block_seed,
            blocks: BitArray::new(block_bits),
            filters: built,
            filter_of,
            tree,
            recover_cap: DEFAULT_RECOVER_CAP,
        })
    }

    pub fn set_recover_cap(&mut self, cap: usize) {
        self.recover_cap = cap.max(1);
    }

    pub fn tree(&self) -> &SegTree {
        &self.tree
    }

    pub fn block_count(&self) -> usize {
        self.block_count
    }

    pub fn filters(&self) -> &[NodeBloomFilter] {
        &self.filters
    }

    pub fn has_root_filter(&self) -> bool {
        self.filter_of[self.tree.root()].is_some()
    }

    /// Bits held by the bitmap blocks and node filters.
    pub fn total_bits(&self) -> u64 {
        self.blocks.len() + self.filters.iter().map(|f| f.num_bits()).sum::<u64>()
    }

    /// Block index `h(key)`.
    #[inline]
    pub fn block_of(&self, key: Key) -> usize {
        (mix128(self.block_seed, key.0) % self.block_count as u64) as usize
    }

    #[inline]
    fn bitmap_start(&self, block: usize, leaf_index: usize) -> u64 {
        ((block * self.tree.leaf_count() + leaf_index) * self.tree.leaf_space()) as u64
    }

    pub fn insert(&mut self, key: Key) {
        debug_assert!(self.tree.fits(key), "key {key} wider than the tree");
        let block = self.block_of(key);
        for (i, &leaf) in self.tree.leaves().iter().enumerate() {
            let seg = self.tree.segment(key, leaf) as u64;
            let at = self.bitmap_start(block, i) + seg;
            self.blocks.set(at);
        }
        for f in &mut self.filters {
            f.insert(self.tree.segment(key, f.node));
        }
    }

    pub fn contains(&self, key: Key) -> bool {
        if !self.tree.fits(key) {
            return false;
        }
        let block = self.block_of(key);
        let leaves_set = self.tree.leaves().iter().enumerate().all(|(i, &leaf)| {
            let seg = self.tree.segment(key, leaf) as u64;
            self.blocks.get(self.bitmap_start(block, i) + seg)
        });
        leaves_set
            && self
                .filters
                .iter()
                .all(|f| f.contains(self.tree.segment(key, f.node)))
    }

    /// Enumerates every key the filter reports as present, in ascending order.
    pub fn recover(&self) -> Result<Vec<Key>, RecoverError> {
        let mut out = Vec::new();
        for block in 0..self.block_count {
            let candidates = self.candidates(self.tree.root(), block)?;
            out.extend(
                candidates
                    .into_iter()
                    .map(Key)
                    .filter(|&k| self.block_of(k) == block),
            );
        }
        out.sort_unstable();
        Ok(out)
    }

    /// Candidate segment values for `node` induced by one block.
    fn candidates(&self, node: NodeId, block: usize) -> Result<Vec<u128>, RecoverError> {
        let seg_node = self.tree.node(node);
        if seg_node.is_leaf() {
            let leaf_index = seg_node.range.offset / self.tree.leaf_bits();
            let start = self.bitmap_start(block, leaf_index as usize);
            return Ok(self
                .blocks
                .ones_in(start, self.tree.leaf_space() as u64)
                .map(|b| b as u128)
                .collect());
        }

        let mut acc: Vec<u128> = vec![0];
        for &child in &seg_node.children {
            let part = self.candidates(child, block)?;
            let size = acc.len() as u128 * part.len() as u128;
            if size > self.recover_cap as u128 {
                return Err(RecoverError::Explosion {
                    node,
                    block,
                    size,
                    cap: self.recover_cap,
                });
            }
            if size == 0 {
                return Ok(Vec::new());
            }
            let shift = self.tree.node(child).range.len;
            let mut next = Vec::with_capacity(size as usize);
            for &prefix in &acc {
                next.extend(part.iter().map(|&s| (prefix << shift) | s));
            }
            acc = next;
        }
        if let Some(f) = self.filter_of[node] {
            let filter = &self.filters[f];
            acc.retain(|&s| filter.contains(s));
        }
        Ok(acc)
    }

    /// True when every bit set here is also set in `other` (same layout and
    /// seeds required).
    pub fn is_subset_of(&self, other: &Rbf) -> bool {
        self.tree == other.tree
            && self.block_count == other.block_count
            && self.block_seed == other.block_seed
            && self.blocks.is_subset_of(&other.blocks)
            && self.filters.len() == other.filters.len()
            && self.filters.iter().zip(&other.filters).all(|(a, b)| {
                a.node == b.node && a.seeds == b.seeds && a.bits.is_subset_of(&b.bits)
            })
    }

    /// Flat little-endian image: header, bitmap block array, then one bit
    /// array per node filter.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(MAGIC);
        w.u16(self.tree.key_bits() as u16);
        w.u8(self.tree.leaf_bits() as u8);
        w.u8(self.tree.arity() as u8);
        w.u64(self.block_count as u64);
        w.u64(self.block_seed);
        w.u64(self.recover_cap as u64);
        w.u16(self.filters.len() as u16);
        for f in &self.filters {
            w.u16(f.node as u16);
            w.u64(f.num_bits());
            w.u8(f.seeds.len() as u8);
            for &s in &f.seeds {
                w.u64(s);
            }
        }
        w.bytes(&self.blocks.to_bytes());
        for f in &self.filters {
            w.bytes(&f.bits.to_bytes());
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::new(bytes, MAGIC)?;
        let key_bits = r.u16()? as u32;
        let leaf_bits = r.u8()? as u32;
        let arity = r.u8()? as usize;
        let tree = SegTree::build(key_bits, leaf_bits, arity)?;
        let block_count = usize::try_from(r.u64()?).map_err(|_| CodecError::Truncated)?;
        let block_seed = r.u64()?;
        let recover_cap = r.u64()? as usize;
        let nfilters = r.u16()? as usize;
        let mut headers = Vec::with_capacity(nfilters);
        for _ in 0..nfilters {
            let node = r.u16()? as usize;
            let bits = r.u64()?;
            let nseeds = r.u8()? as usize;
            let seeds = (0..nseeds)
                .map(|_| r.u64())
                .collect::<Result<Vec<_>, _>>()?;
            headers.push((node, bits, seeds));
        }
        let specs: Vec<_> = headers
            .iter()
            .map(|(n, b, s)| (*n, *b, s.len() as u32))
            .collect();
        let mut rbf = Self::with_layout(tree, block_count, &specs, 0)?;
        rbf.block_seed = block_seed;
        rbf.recover_cap = recover_cap.max(1);
        let block_len = rbf.blocks.len();
        rbf.blocks = BitArray::from_bytes(block_len, r.take(block_len.div_ceil(8) as usize)?)
            .ok_or_else(|| CodecError::Corrupt("bitmap block array".into()))?;
        for (f, (_, bits, seeds)) in rbf.filters.iter_mut().zip(headers) {
            f.seeds = seeds;
            f.bits = BitArray::from_bytes(bits, r.take(bits.div_ceil(8) as usize)?)
                .ok_or_else(|| CodecError::Corrupt(format!("filter for node {}", f.node)))?;
        }
        r.finish()?;
        Ok(rbf)
    }
}
