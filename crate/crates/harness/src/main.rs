use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use hidden_sketch::{ClosedWindow, Key};
use hs_harness::config::ExperimentConfig;
use hs_harness::experiment::{run_experiment, write_report_csv};
use hs_harness::metrics::evaluate;
use hs_harness::oracle::oracle_count;
use hs_harness::success::{run_success_rate, write_success_csv, Mode};
use hs_harness::trace::{parse_key, read_trace_file, write_trace};
use hs_harness::workload::{generate_change_pair, generate_zipf};

#[derive(Parser)]
#[command(name = "hsketch", version, about = "Hidden Sketch experiment harness")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic Zipf trace.
    Gen {
        #[arg(long, default_value_t = 200_000)]
        items: usize,
        #[arg(long, default_value_t = 6000)]
        keys: usize,
        #[arg(long, default_value_t = 1.0)]
        skew: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Append a second window of `items` records with this share of
        /// popularity ranks shuffled.
        #[arg(long)]
        permute: Option<f64>,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Run the memory sweep described by a config file.
    Run {
        #[arg(short, long)]
        config: PathBuf,
        /// Directory for metrics.csv, diagnostics.json and window snapshots.
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Decode a window snapshot and print `key,frequency` lines.
    Decode {
        snapshot: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Score a `key,frequency` report against a trace.
    Eval {
        #[arg(long)]
        reported: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        /// Minimum true frequency of a heavy hitter.
        #[arg(long)]
        threshold: u64,
        #[arg(long, default_value_t = 32)]
        key_bits: u32,
    },
    /// Decode success rate against CM sketch size.
    SuccessRate {
        #[arg(long, default_value_t = 100)]
        keys: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [80, 90, 100, 110, 120, 130])]
        buckets: Vec<usize>,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [Mode::Pure, Mode::Svd, Mode::Ilp])]
        modes: Vec<Mode>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn read_report(path: &Path) -> Result<BTreeMap<Key, u64>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = BTreeMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.starts_with("key")) {
            continue;
        }
        let parsed = line
            .split_once(',')
            .ok_or("expected key,frequency")
            .and_then(|(k, f)| {
                let key = parse_key(k).map_err(|_| "bad key")?;
                let f = f.trim().parse::<u64>().map_err(|_| "bad frequency")?;
                Ok::<_, &str>((key, f))
            });
        match parsed {
            Ok((k, f)) => {
                out.insert(k, f);
            }
            Err(msg) => bail!("{}: line {}: {msg}", path.display(), i + 1),
        }
    }
    Ok(out)
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Gen {
            items,
            keys,
            skew,
            seed,
            permute,
            out,
        } => {
            if skew < 0.0 || keys == 0 {
                bail!("need skew >= 0 and at least one key");
            }
            let records = match permute {
                None => generate_zipf(items, keys, skew, seed),
                Some(p) => {
                    let (mut a, b) = generate_change_pair(items, keys, skew, p, seed);
                    a.extend(b);
                    a
                }
            };
            let mut w = output(Some(&out))?;
            write_trace(&mut w, &records)?;
            w.flush()?;
        }
        Cmd::Run { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            run_experiment(&cfg, Some(&out))?;
            eprintln!("wrote {}", out.join("metrics.csv").display());
        }
        Cmd::Decode { snapshot, out } => {
            let bytes = std::fs::read(&snapshot)
                .with_context(|| format!("reading {}", snapshot.display()))?;
            let window = ClosedWindow::from_bytes(&bytes)
                .with_context(|| format!("decoding {}", snapshot.display()))?;
            let decoded = window.decode();
            eprintln!(
                "window {}: {:?}, {} keys",
                decoded.window.window_id,
                decoded.status,
                decoded.reported.len()
            );
            if let Some(f) = &decoded.failure {
                eprintln!("failure: {f}");
            }
            let mut w = output(out.as_deref())?;
            write_report_csv(&mut w, &decoded.reported)?;
            w.flush()?;
        }
        Cmd::Eval {
            reported,
            trace,
            threshold,
            key_bits,
        } => {
            let reported = read_report(&reported)?;
            let truth = oracle_count(&read_trace_file(&trace, key_bits)?);
            let m = evaluate(&reported, &truth, threshold);
            println!("{}", serde_json::to_string_pretty(&m)?);
        }
        Cmd::SuccessRate {
            keys,
            buckets,
            trials,
            modes,
            seed,
            out,
        } => {
            let rows = run_success_rate(keys, &buckets, trials, &modes, seed);
            let mut w = output(out.as_deref())?;
            write_success_csv(&mut w, &rows)?;
            w.flush()?;
        }
    }
    Ok(())
}
