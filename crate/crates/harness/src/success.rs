//! Decode success rate against CM sketch size.
//!
//! Each trial inserts `n_keys` random keys with random frequencies into a
//! fresh depth-3 prime-mode sketch and decodes it with the true key set as the
//! candidate set. A trial succeeds when the decode is Full.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use hidden_sketch::{decode, CmSketch, DecodeStatus, DecoderConfig, IncrementMode, Key};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const DEPTH: usize = 3;
pub const MAX_FREQUENCY: u64 = 1000;

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Mode {
    Pure,
    Svd,
    Ilp,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Pure, Mode::Svd, Mode::Ilp];

    pub fn decoder(self) -> DecoderConfig {
        match self {
            Mode::Pure => DecoderConfig::pure_only(),
            Mode::Svd => DecoderConfig::with_svd(),
            Mode::Ilp => DecoderConfig::default(),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Pure => "pure",
            Mode::Svd => "pure+svd",
            Mode::Ilp => "pure+svd+ilp",
        })
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "pure" => Ok(Mode::Pure),
            "svd" | "pure+svd" => Ok(Mode::Svd),
            "ilp" | "pure+svd+ilp" => Ok(Mode::Ilp),
            _ => Err(format!(
                "unknown decoder mode {s:?} (expected pure, svd or ilp)"
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuccessRow {
    pub buckets: usize,
    pub mode: Mode,
    pub successes: usize,
    pub trials: usize,
    /// Full decodes whose values differ from the inserted frequencies.
    pub mismatches: usize,
}

impl SuccessRow {
    pub fn rate(&self) -> f64 {
        if self.trials == 0 {
            0.0
        } else {
            self.successes as f64 / self.trials as f64
        }
    }
}

/// One row per (bucket count, mode), bucket counts in the given order and
/// modes in pipeline order.
pub fn run_success_rate(
    n_keys: usize,
    bucket_counts: &[usize],
    trials: usize,
    modes: &[Mode],
    seed: u64,
) -> Vec<SuccessRow> {
    let mut modes = modes.to_vec();
    modes.sort();
    modes.dedup();
    let mut rows = Vec::new();
    for &m in bucket_counts {
        let mut tally: BTreeMap<Mode, (usize, usize)> =
            modes.iter().map(|&md| (md, (0, 0))).collect();
        if m >= DEPTH {
            let mut rng =
                ChaCha8Rng::seed_from_u64(seed ^ (m as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            for _ in 0..trials {
                trial(&mut rng, n_keys, m, &modes, &mut tally);
            }
        }
        for (mode, (successes, mismatches)) in tally {
            rows.push(SuccessRow {
                buckets: m,
                mode,
                successes,
                trials,
                mismatches,
            });
        }
    }
    rows
}

fn trial(
    rng: &mut ChaCha8Rng,
    n_keys: usize,
    m: usize,
    modes: &[Mode],
    tally: &mut BTreeMap<Mode, (usize, usize)>,
) {
    let mut sk = CmSketch::with_buckets(DEPTH, m, IncrementMode::Prime, rng.random())
        .expect("bucket count checked against depth");
    let mut truth = BTreeMap::new();
    while truth.len() < n_keys {
        truth.insert(
            Key::from(rng.random::<u32>()),
            rng.random_range(1..=MAX_FREQUENCY),
        );
    }
    for (&k, &f) in &truth {
        sk.insert(k, f).expect("small frequencies cannot overflow");
    }
    // Every stage runs the earlier ones first, so a Full decode carries over
    // to the later modes unchanged.
    let mut full = None;
    for &mode in modes {
        let exact = match full {
            Some(exact) => exact,
            None => {
                let res = decode(truth.keys().copied(), &sk, &mode.decoder());
                match res {
                    Ok(r) if r.status == DecodeStatus::Full => {
                        let exact = r.frequencies == truth;
                        full = Some(exact);
                        exact
                    }
                    _ => continue,
                }
            }
        };
        let t = tally.get_mut(&mode).unwrap();
        t.0 += 1;
        if !exact {
            t.1 += 1;
        }
    }
}

pub fn write_success_csv<W: Write>(mut out: W, rows: &[SuccessRow]) -> std::io::Result<()> {
    writeln!(out, "buckets,mode,successes,trials,rate,mismatches")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{:.4},{}",
            r.buckets,
            r.mode,
            r.successes,
            r.trials,
            r.rate(),
            r.mismatches
        )?;
    }
    Ok(())
}
