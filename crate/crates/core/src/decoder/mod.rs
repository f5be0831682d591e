//! Exact frequency recovery from a sketch and its candidate keys.
//!
//! Stages run in order on what the previous one left: pure-bucket peeling,
//! a least-norm SVD solve, then an integer feasibility search. Keys that
//! decode to zero are false positives from the filter and are dropped.

mod ilp;
mod pure;
mod svd;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::cmsketch::{CmSketch, EquationSystem};
use crate::error::ConfigError;
use crate::keyspace::Key;

pub use ilp::{ilp_solve, IlpError, IlpOutcome, IlpReport};
pub use pure::pure_extract;
pub use svd::{svd_solve, SvdOutcome, MAX_DENSE_DIM};

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Stage {
    Pure,
    Svd,
    Ilp,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Pure => "pure extraction",
            Stage::Svd => "svd",
            Stage::Ilp => "ilp",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("inconsistent system during {stage} (bucket {bucket}): {detail}")]
    Inconsistent {
        stage: Stage,
        bucket: usize,
        detail: String,
    },
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("residual of {rows}x{cols} exceeds the dense limit {limit}")]
    TooLarge {
        rows: usize,
        cols: usize,
        limit: usize,
    },
}

impl DecodeError {
    pub(crate) fn inconsistent(stage: Stage, bucket: usize, detail: String) -> Self {
        DecodeError::Inconsistent {
            stage,
            bucket,
            detail,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderConfig {
    /// Singular values below `rank_tolerance * s_max` count as zero.
    pub rank_tolerance: f64,
    /// Largest accepted distance from an integer after the SVD solve.
    pub round_tolerance: f64,
    pub svd_enabled: bool,
    pub ilp_enabled: bool,
    pub ilp_node_budget: u64,
    /// Peeling threshold `c_k` per hash count.
    pub c_k_table: BTreeMap<usize, f64>,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            rank_tolerance: 1e-9,
            round_tolerance: 1e-6,
            svd_enabled: true,
            ilp_enabled: true,
            ilp_node_budget: 100_000,
            c_k_table: [(3, 1.222), (4, 1.295), (5, 1.425)].into_iter().collect(),
        }
    }
}

impl DecoderConfig {
    pub fn pure_only() -> Self {
        Self {
            svd_enabled: false,
            ilp_enabled: false,
            ..Self::default()
        }
    }

    pub fn with_svd() -> Self {
        Self {
            ilp_enabled: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.rank_tolerance > 0.0 && self.rank_tolerance < 1.0) {
            return Err(ConfigError::new("rank_tolerance must lie in (0, 1)"));
        }
        if !(self.round_tolerance > 0.0 && self.round_tolerance < 0.5) {
            return Err(ConfigError::new("round_tolerance must lie in (0, 0.5)"));
        }
        if self.ilp_node_budget == 0 {
            return Err(ConfigError::new("ilp_node_budget must be positive"));
        }
        for (k, c) in [(3, 1.222), (4, 1.295), (5, 1.425)] {
            if self.c_k_table.get(&k) != Some(&c) {
                return Err(ConfigError::new(format!("c_k_table must map {k} to {c}")));
            }
        }
        Ok(())
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum DecodeStatus {
    /// Every candidate resolved and every bucket explained exactly.
    Full,
    Partial,
    /// Nothing beyond pure extraction resolved and a residual remains.
    Failed,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Diagnostics {
    pub candidates: usize,
    pub pure_solved: usize,
    pub svd_solved: usize,
    pub ilp_solved: usize,
    pub residual_rows: usize,
    pub residual_cols: usize,
    /// Residual column count minus numerical rank, when the SVD ran.
    pub rank_deficiency: usize,
    pub svd_failure: Option<String>,
    pub ilp_nodes: u64,
    pub ilp_budget_exceeded: bool,
    pub ilp_multiple: bool,
    /// Keys whose values came from an ILP solution not proven unique.
    pub unverified: BTreeSet<Key>,
    pub false_positives: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecodeResult {
    /// Nonzero decoded frequencies.
    pub frequencies: BTreeMap<Key, u64>,
    pub status: DecodeStatus,
    /// Candidates left without a value.
    pub unresolved: BTreeSet<Key>,
    pub diagnostics: Diagnostics,
}

/// Decodes `sk` over the filter's candidate keys.
pub fn decode<I>(
    candidates: I,
    sk: &CmSketch,
    cfg: &DecoderConfig,
) -> Result<DecodeResult, DecodeError>
where
    I: IntoIterator<Item = Key>,
{
    decode_system(&sk.to_equation_system(candidates), cfg)
}

pub fn decode_system(
    sys: &EquationSystem,
    cfg: &DecoderConfig,
) -> Result<DecodeResult, DecodeError> {
    let mut diag = Diagnostics {
        candidates: sys.num_cols(),
        ..Diagnostics::default()
    };
    let (pure, residual) = pure_extract(sys)?;
    diag.pure_solved = pure.len();
    diag.residual_rows = residual.num_rows();
    diag.residual_cols = residual.num_cols();

    let mut values: BTreeMap<Key, u64> = pure.into_iter().collect();
    let mut resolved_all = residual.num_cols() == 0;
    let mut svd_partial: Vec<(usize, u64)> = Vec::new();

    if !resolved_all && cfg.svd_enabled {
        match svd_solve(&residual, cfg) {
            Ok(SvdOutcome::Unique(x)) => {
                diag.svd_solved = x.len();
                values.extend(residual.columns.iter().copied().zip(x));
                resolved_all = true;
            }
            Ok(SvdOutcome::Multiple { rank, determined }) => {
                diag.rank_deficiency = residual.num_cols() - rank;
                svd_partial = determined;
            }
            Err(e @ (DecodeError::NumericalFailure(_) | DecodeError::TooLarge { .. })) => {
                diag.svd_failure = Some(e.to_string());
            }
            Err(e) => return Err(e),
        }
    }

    if !resolved_all && cfg.ilp_enabled {
        match ilp_solve(&residual, cfg) {
            Ok(rep) => {
                diag.ilp_nodes = rep.nodes;
                match rep.outcome {
                    IlpOutcome::Unique(x) => {
                        diag.ilp_solved = x.len();
                        values.extend(residual.columns.iter().copied().zip(x));
                        resolved_all = true;
                    }
                    IlpOutcome::Unverified(x) => {
                        diag.ilp_budget_exceeded = true;
                        diag.ilp_solved = x.len();
                        diag.unverified = residual.columns.iter().copied().collect();
                        values.extend(residual.columns.iter().copied().zip(x));
                        svd_partial.clear();
                    }
                    IlpOutcome::Multiple(..) => diag.ilp_multiple = true,
                }
            }
            Err(IlpError::Infeasible) => {
                return Err(DecodeError::inconsistent(
                    Stage::Ilp,
                    residual.row_buckets.first().copied().unwrap_or(0),
                    "residual has no non-negative integer solution".into(),
                ))
            }
            Err(IlpError::BudgetExceeded(nodes)) => {
                diag.ilp_nodes = nodes;
                diag.ilp_budget_exceeded = true;
            }
        }
    }

    if !resolved_all {
        diag.svd_solved = svd_partial.len();
        for &(j, v) in &svd_partial {
            values.insert(residual.columns[j], v);
        }
    }

    let unresolved: BTreeSet<Key> = sys
        .columns
        .iter()
        .copied()
        .filter(|k| !values.contains_key(k))
        .collect();
    let status = if resolved_all && diag.unverified.is_empty() {
        let x: Vec<u64> = sys.columns.iter().map(|k| values[k]).collect();
        if !sys.is_solution(&x) {
            return Err(DecodeError::NumericalFailure(
                "merged solution does not reproduce the counters".into(),
            ));
        }
        DecodeStatus::Full
    } else if diag.svd_solved + diag.ilp_solved > 0 {
        DecodeStatus::Partial
    } else {
        DecodeStatus::Failed
    };

    let before = values.len();
    values.retain(|_, v| *v != 0);
    diag.false_positives = before - values.len();
    Ok(DecodeResult {
        frequencies: values,
        status,
        unresolved,
        diagnostics: diag,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::cmsketch::IncrementMode;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// System with column `j` = key `j`, given `(coefficient, rows)` per column.
    pub(crate) fn system(cols: &[(u64, &[usize])], rhs: &[u64]) -> EquationSystem {
        EquationSystem {
            columns: (0..cols.len() as u128).map(Key).collect(),
            coefficients: cols.iter().map(|c| c.0).collect(),
            column_rows: cols.iter().map(|c| c.1.to_vec()).collect(),
            row_buckets: (0..rhs.len()).collect(),
            rhs: rhs.to_vec(),
        }
    }

    fn random_trial(
        rng: &mut ChaCha8Rng,
        n: usize,
        m: usize,
        seed: u64,
    ) -> (CmSketch, BTreeMap<Key, u64>) {
        let mut sk = CmSketch::with_buckets(3, m, IncrementMode::Prime, seed).unwrap();
        let mut truth = BTreeMap::new();
        while truth.len() < n {
            truth.insert(
                Key(rng.random::<u32>() as u128),
                rng.random_range(1..=1000u64),
            );
        }
        for (&k, &f) in &truth {
            sk.insert(k, f).unwrap();
        }
        (sk, truth)
    }

    #[test]
    fn default_config_is_valid() {
        DecoderConfig::default().validate().unwrap();
        let mut bad = DecoderConfig::default();
        bad.c_k_table.remove(&4);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn empty_is_full() {
        let sk = CmSketch::with_buckets(3, 30, IncrementMode::Prime, 0).unwrap();
        let res = decode(Vec::new(), &sk, &DecoderConfig::default()).unwrap();
        assert_eq!(res.status, DecodeStatus::Full);
        assert!(res.frequencies.is_empty());
    }

    #[test]
    fn hundred_keys_at_130_buckets_decode_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        let mut full = 0;
        for t in 0..20 {
            let (sk, truth) = random_trial(&mut rng, 100, 130, t);
            let res = decode(truth.keys().copied(), &sk, &DecoderConfig::default()).unwrap();
            if res.status == DecodeStatus::Full {
                assert_eq!(res.frequencies, truth);
                full += 1;
            }
        }
        assert!(full >= 17, "only {full}/20 full decodes");
    }

    #[test]
    fn false_positive_candidate_decodes_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (sk, truth) = random_trial(&mut rng, 40, 90, 1);
        let fp = Key(0x1_0000_0000);
        let res = decode(
            truth.keys().copied().chain([fp]),
            &sk,
            &DecoderConfig::default(),
        )
        .unwrap();
        assert_eq!(res.status, DecodeStatus::Full);
        assert!(!res.frequencies.contains_key(&fp));
        assert_eq!(res.frequencies, truth);
        assert_eq!(res.diagnostics.false_positives, 1);
    }

    #[test]
    fn twins_in_unit_mode_fail_cleanly() {
        let sys = system(&[(1, &[0, 1]), (1, &[0, 1]), (1, &[2])], &[7, 7, 4]);
        let res = decode_system(&sys, &DecoderConfig::default()).unwrap();
        assert_eq!(res.status, DecodeStatus::Failed);
        assert_eq!(res.frequencies.get(&Key(2)), Some(&4));
        assert_eq!(res.unresolved, [Key(0), Key(1)].into_iter().collect());
        assert!(res.diagnostics.ilp_multiple);
    }

    #[test]
    fn svd_determined_values_make_partial() {
        // A triangle (no pure bucket, but full rank) next to a pair of twins.
        let sys = system(
            &[
                (1, &[0, 1]),
                (1, &[0, 2]),
                (1, &[1, 2]),
                (1, &[3, 4]),
                (1, &[3, 4]),
            ],
            &[3, 4, 5, 5, 5],
        );
        let res = decode_system(&sys, &DecoderConfig::with_svd()).unwrap();
        assert_eq!(res.status, DecodeStatus::Partial);
        assert_eq!(
            res.frequencies,
            [(Key(0), 1), (Key(1), 2), (Key(2), 3)]
                .into_iter()
                .collect()
        );
        assert_eq!(res.unresolved, [Key(3), Key(4)].into_iter().collect());
    }

    #[test]
    fn modes_are_nested() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for t in 0..30 {
            let (sk, truth) = random_trial(&mut rng, 100, 110, t);
            let full = |cfg: &DecoderConfig| {
                decode(truth.keys().copied(), &sk, cfg).unwrap().status == DecodeStatus::Full
            };
            let p = full(&DecoderConfig::pure_only());
            let s = full(&DecoderConfig::with_svd());
            let i = full(&DecoderConfig::default());
            assert!(!p || s, "pure succeeded where svd did not");
            assert!(!s || i, "svd succeeded where ilp did not");
        }
    }

    #[test]
    fn inconsistent_ilp_is_attributed() {
        let sys = system(&[(257, &[0, 1]), (263, &[0, 1])], &[257, 263]);
        let err = decode_system(&sys, &DecoderConfig::default()).unwrap_err();
        assert!(
            matches!(
                err,
                DecodeError::Inconsistent {
                    stage: Stage::Ilp,
                    ..
                }
            ),
            "{err}"
        );
    }
}
