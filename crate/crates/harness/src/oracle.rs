//! Exact per-key counts.

use std::collections::BTreeMap;

use hidden_sketch::Key;

use crate::trace::TraceRecord;

pub fn oracle_count(stream: &[TraceRecord]) -> BTreeMap<Key, u64> {
    let mut counts = BTreeMap::new();
    for r in stream {
        *counts.entry(r.key).or_default() += r.weight;
    }
    counts
}

/// `|f_b - f_a|` for every key seen in either window.
pub fn oracle_changes(a: &BTreeMap<Key, u64>, b: &BTreeMap<Key, u64>) -> BTreeMap<Key, u64> {
    let mut out = BTreeMap::new();
    for (&k, &fa) in a {
        out.insert(k, fa.abs_diff(b.get(&k).copied().unwrap_or(0)));
    }
    for (&k, &fb) in b {
        out.entry(k).or_insert(fb);
    }
    out
}
