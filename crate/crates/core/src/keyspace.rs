//! Key bit layout and the segmentation tree shared by the reversible Bloom
//! filter.
//!
//! A key of `key_bits` bits is cut into `key_bits / leaf_bits` leaf segments,
//! read most-significant first (so `192.168.133.1` has leaves `192, 168, 133,
//! 1`). Internal nodes cover the concatenation of their children. Keys are
//! stored as [`Key`], a 128-bit value, which bounds `key_bits` at 128.

use std::fmt;
use std::net::Ipv4Addr;

use crate::error::ConfigError;

/// Largest leaf segment accepted; a leaf bitmap holds `2^leaf_bits` bits.
pub const MAX_LEAF_BITS: u32 = 24;
pub const MAX_KEY_BITS: u32 = 128;

/// A stream item key, right-aligned in 128 bits.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Key(pub u128);

impl Key {
    pub fn value(self) -> u128 {
        self.0
    }
}

impl From<u32> for Key {
    fn from(v: u32) -> Self {
        Key(v as u128)
    }
}

impl From<u64> for Key {
    fn from(v: u64) -> Self {
        Key(v as u128)
    }
}

impl From<Ipv4Addr> for Key {
    fn from(ip: Ipv4Addr) -> Self {
        Key(u32::from(ip) as u128)
    }
}

impl fmt::Display for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#x}", self.0)
    }
}

pub type NodeId = usize;

/// Bit span inside a key; `offset` counts from the most significant bit.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct BitRange {
    pub offset: u32,
    pub len: u32,
}

impl BitRange {
    pub fn end(&self) -> u32 {
        self.offset + self.len
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegNode {
    pub range: BitRange,
    pub children: Vec<NodeId>,
}

impl SegNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// Hierarchical key segmentation. Immutable once built.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegTree {
    key_bits: u32,
    leaf_bits: u32,
    arity: usize,
    nodes: Vec<SegNode>,
    root: NodeId,
    leaves: Vec<NodeId>,
    internals: Vec<NodeId>,
}

impl SegTree {
    /// Builds the tree bottom-up, grouping `arity` consecutive nodes per
    /// parent. When a level does not divide evenly the last parent takes the
    /// remainder; a lone remainder is promoted to the next level unchanged.
    pub fn build(key_bits: u32, leaf_bits: u32, arity: usize) -> Result<Self, ConfigError> {
        if key_bits == 0 || key_bits > MAX_KEY_BITS {
            return Err(ConfigError::new(format!(
                "key_bits must be in 1..={MAX_KEY_BITS}, got {key_bits}"
            )));
        }
        if leaf_bits == 0 || leaf_bits > MAX_LEAF_BITS {
            return Err(ConfigError::new(format!(
                "leaf_bits must be in 1..={MAX_LEAF_BITS}, got {leaf_bits}"
            )));
        }
        if !key_bits.is_multiple_of(leaf_bits) {
            return Err(ConfigError::new(format!(
                "key_bits ({key_bits}) is not a multiple of leaf_bits ({leaf_bits})"
            )));
        }
        if arity < 2 {
            return Err(ConfigError::new("arity must be at least 2"));
        }

        let leaf_count = (key_bits / leaf_bits) as usize;
        let mut nodes: Vec<SegNode> = (0..leaf_count)
            .map(|i| SegNode {
                range: BitRange {
                    offset: i as u32 * leaf_bits,
                    len: leaf_bits,
                },
                children: Vec::new(),
            })
            .collect();
        let leaves: Vec<NodeId> = (0..leaf_count).collect();
        let mut internals = Vec::new();

        let mut level = leaves.clone();
        while level.len() > 1 {
            let mut next = Vec::with_capacity(level.len().div_ceil(arity));
            for group in level.chunks(arity) {
                if group.len() == 1 {
                    next.push(group[0]);
                    continue;
                }
                let first = nodes[group[0]].range;
                let last = nodes[*group.last().unwrap()].range;
                let id = nodes.len();
                nodes.push(SegNode {
                    range: BitRange {
                        offset: first.offset,
                        len: last.end() - first.offset,
                    },
                    children: group.to_vec(),
                });
                internals.push(id);
                next.push(id);
            }
            level = next;
        }

        Ok(Self {
            key_bits,
            leaf_bits,
            arity,
            root: level[0],
            nodes,
            leaves,
            internals,
        })
    }

    pub fn key_bits(&self) -> u32 {
        self.key_bits
    }

    pub fn leaf_bits(&self) -> u32 {
        self.leaf_bits
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    /// Number of leaf segments (`k`).
    pub fn leaf_count(&self) -> usize {
        self.leaves.len()
    }

    /// Size of one leaf segment space, `2^leaf_bits`.
    pub fn leaf_space(&self) -> usize {
        1usize << self.leaf_bits
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn node(&self, id: NodeId) -> &SegNode {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[SegNode] {
        &self.nodes
    }

    /// Leaf ids in key order.
    pub fn leaves(&self) -> &[NodeId] {
        &self.leaves
    }

    /// Internal node ids, children before parents; the root (when internal)
    /// is last.
    pub fn internals(&self) -> &[NodeId] {
        &self.internals
    }

    pub fn fits(&self, key: Key) -> bool {
        self.key_bits == 128 || key.0 >> self.key_bits == 0
    }

    /// Value of the key's bits within `node`'s range.
    #[inline]
    pub fn segment(&self, key: Key, node: NodeId) -> u128 {
        let r = self.nodes[node].range;
        let shift = self.key_bits - r.end();
        (key.0 >> shift) & mask(r.len)
    }

    /// The key's leaf segments in key order.
    pub fn leaf_segments(&self, key: Key) -> Vec<u128> {
        self.leaves.iter().map(|&l| self.segment(key, l)).collect()
    }
}

#[inline]
pub(crate) fn mask(len: u32) -> u128 {
    if len >= 128 {
        u128::MAX
    } else {
        (1u128 << len) - 1
    }
}
