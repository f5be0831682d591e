//! Accuracy-versus-memory sweep over two consecutive windows.
//!
//! For each budget the Hidden Sketch keeps its fixed allocation and the cold
//! filter gets the rest. Budgets count counter and bit arrays only; seeds and
//! headers are not charged. Three tasks are scored per budget: heavy hitters
//! and estimation on window one, heavy changers across both windows.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use hidden_sketch::{heavy_changers, DecodedWindow, Key, Tracker, TrackerConfig};
use serde_json::{json, Value};

use crate::config::ExperimentConfig;
use crate::metrics::{estimation_are, evaluate, Metrics};
use crate::oracle::{oracle_changes, oracle_count};
use crate::trace::{read_trace_file, TraceRecord};
use crate::workload::generate_change_pair;

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Task {
    HeavyHitter,
    HeavyChanger,
    Estimation,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::HeavyHitter => "heavy_hitter",
            Task::HeavyChanger => "heavy_changer",
            Task::Estimation => "estimation",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskRow {
    pub memory_kb: u64,
    pub task: Task,
    /// Frequency (or change) a key needs to count as a true positive.
    pub threshold: u64,
    /// Detection scores; `None` for the estimation task.
    pub scores: Option<Metrics>,
    /// Over true positives for detection tasks, over every key for
    /// estimation.
    pub are: f64,
}

/// Both windows of one sweep point after decoding.
pub struct BudgetRun {
    pub memory_kb: u64,
    pub tracker: TrackerConfig,
    pub windows: [DecodedWindow; 2],
    pub truth: [BTreeMap<Key, u64>; 2],
    pub hh_threshold: u64,
    /// Keys must change by more than this to count as heavy changers.
    pub hc_delta: u64,
    pub heavy_changers: BTreeMap<Key, i64>,
    pub rows: Vec<TaskRow>,
}

pub fn load_windows(cfg: &ExperimentConfig) -> Result<(Vec<TraceRecord>, Vec<TraceRecord>)> {
    let w = &cfg.workload;
    let read = |p: &Path| {
        read_trace_file(p, cfg.tree.key_bits)
            .with_context(|| format!("reading trace {}", p.display()))
    };
    Ok(match w.traces.as_slice() {
        [] => generate_change_pair(
            w.items,
            w.keys,
            w.skew,
            w.permute_fraction,
            cfg.seeds.workload,
        ),
        [one] => {
            let mut a = read(one)?;
            let b = a.split_off(a.len() / 2);
            (a, b)
        }
        [a, b] => (read(a)?, read(b)?),
        _ => unreachable!("validated"),
    })
}

fn replay(tracker: &mut Tracker, stream: &[TraceRecord]) -> Result<DecodedWindow> {
    for r in stream {
        tracker.process_weighted(r.key, r.weight)?;
    }
    Ok(tracker.close_window().decode())
}

/// Runs both windows at one memory budget and scores the three tasks.
pub fn run_budget(
    cfg: &ExperimentConfig,
    windows: (&[TraceRecord], &[TraceRecord]),
    memory_kb: u64,
) -> Result<BudgetRun> {
    let tcfg = cfg
        .tracker()
        .with_total_memory(memory_kb * 8 * 1024)
        .with_context(|| format!("memory budget {memory_kb} KB"))?;
    let mut tracker = Tracker::new(tcfg.clone())?;
    let a = replay(&mut tracker, windows.0)?;
    let b = replay(&mut tracker, windows.1)?;
    let truth = [oracle_count(windows.0), oracle_count(windows.1)];

    // The tracker cannot see keys at or below the cold-filter threshold.
    let floor = tcfg.threshold as u64 + 1;
    let total_a: u64 = truth[0].values().sum();
    let hh_threshold = ((cfg.tasks.hh_fraction * total_a as f64).ceil() as u64).max(floor);
    let hh = evaluate(
        &a.heavy_hitters(hh_threshold).heavy_hitters,
        &truth[0],
        hh_threshold,
    );

    let changes = oracle_changes(&truth[0], &truth[1]);
    let total_change: u64 = changes.values().sum();
    let hc_delta = (cfg.tasks.hc_fraction * total_change as f64).floor() as u64;
    let hc_found = heavy_changers(&a, &b, floor, hc_delta).unwrap_or_default();
    let hc_abs = hc_found
        .iter()
        .map(|(&k, &c)| (k, c.unsigned_abs()))
        .collect();
    let hc = evaluate(&hc_abs, &changes, hc_delta + 1);

    let est = estimation_are(&truth[0], |k| a.estimate(k));

    let rows = vec![
        TaskRow {
            memory_kb,
            task: Task::HeavyHitter,
            threshold: hh_threshold,
            are: hh.are,
            scores: Some(hh),
        },
        TaskRow {
            memory_kb,
            task: Task::HeavyChanger,
            threshold: hc_delta + 1,
            are: hc.are,
            scores: Some(hc),
        },
        TaskRow {
            memory_kb,
            task: Task::Estimation,
            threshold: 0,
            are: est,
            scores: None,
        },
    ];
    Ok(BudgetRun {
        memory_kb,
        tracker: tcfg,
        windows: [a, b],
        truth,
        hh_threshold,
        hc_delta,
        heavy_changers: hc_found,
        rows,
    })
}

fn window_json(w: &DecodedWindow) -> Value {
    let d = w.diagnostics.clone().unwrap_or_default();
    json!({
        "window_id": w.window.window_id,
        "status": format!("{:?}", w.status),
        "failure": w.failure,
        "total_items": w.window.total_items,
        "distinct_inserted": w.window.hidden.distinct,
        "over_capacity": w.window.hidden.over_capacity(),
        "reported_keys": w.reported.len(),
        "decoder": {
            "candidates": d.candidates,
            "false_positives": d.false_positives,
            "pure_solved": d.pure_solved,
            "svd_solved": d.svd_solved,
            "ilp_solved": d.ilp_solved,
            "residual_rows": d.residual_rows,
            "residual_cols": d.residual_cols,
            "rank_deficiency": d.rank_deficiency,
            "svd_failure": d.svd_failure,
            "ilp_nodes": d.ilp_nodes,
            "ilp_budget_exceeded": d.ilp_budget_exceeded,
            "ilp_multiple": d.ilp_multiple,
            "unverified": d.unverified.len(),
        },
    })
}

pub fn budget_json(run: &BudgetRun) -> Value {
    let hidden = run.windows[0].window.hidden.memory_bits();
    let cold = run.windows[0].window.cold.memory_bits();
    json!({
        "memory_kb": run.memory_kb,
        "memory_bits": { "hidden_sketch": hidden, "cold_filter": cold, "total": hidden + cold },
        "memory_accounting": "counter and bit arrays only",
        "hh_threshold": run.hh_threshold,
        "hc_delta": run.hc_delta,
        "windows": run.windows.iter().map(window_json).collect::<Vec<_>>(),
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

pub fn write_metrics_csv<W: Write>(mut out: W, rows: &[TaskRow]) -> std::io::Result<()> {
    writeln!(
        out,
        "memory_kb,task,threshold,precision,recall,f1,are,reported,truth,true_positives"
    )?;
    for r in rows {
        let s = r.scores.as_ref();
        writeln!(
            out,
            "{},{},{},{},{},{},{:.6},{},{},{}",
            r.memory_kb,
            r.task,
            r.threshold,
            fmt_opt(s.map(|m| m.precision)),
            fmt_opt(s.map(|m| m.recall)),
            fmt_opt(s.map(|m| m.f1)),
            r.are,
            s.map(|m| m.reported.to_string()).unwrap_or_default(),
            s.map(|m| m.truth.to_string()).unwrap_or_default(),
            s.map(|m| m.true_positives.to_string()).unwrap_or_default(),
        )?;
    }
    Ok(())
}

/// Runs the sweep and, when `out_dir` is given, writes `metrics.csv`,
/// `diagnostics.json` and one snapshot per window and budget.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<Vec<TaskRow>> {
    cfg.validate()?;
    let (a, b) = load_windows(cfg)?;
    let mut rows = Vec::new();
    let mut diags = Vec::new();
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    for &kb in &cfg.tasks.memory_kb {
        let run = run_budget(cfg, (&a, &b), kb)?;
        diags.push(budget_json(&run));
        if let Some(dir) = out_dir {
            for w in &run.windows {
                let path = dir.join(format!("window{}_{}kb.hsw", w.window.window_id, kb));
                std::fs::write(&path, w.window.to_bytes())
                    .with_context(|| format!("writing {}", path.display()))?;
            }
        }
        rows.extend(run.rows);
    }
    if let Some(dir) = out_dir {
        let mut csv = Vec::new();
        write_metrics_csv(&mut csv, &rows)?;
        std::fs::write(dir.join("metrics.csv"), csv)?;
        let mut json = serde_json::to_string_pretty(&Value::Array(diags))?;
        json.push('\n');
        std::fs::write(dir.join("diagnostics.json"), json)?;
    }
    Ok(rows)
}

/// Reported frequencies as `key,frequency` lines.
pub fn write_report_csv<W: Write>(
    mut out: W,
    reported: &BTreeMap<Key, u64>,
) -> std::io::Result<()> {
    writeln!(out, "key,frequency")?;
    for (&k, f) in reported {
        writeln!(out, "{},{f}", crate::trace::format_key(k))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use hidden_sketch::DecodeStatus;

    fn small() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.workload.items = 20_000;
        cfg.workload.keys = 800;
        cfg.rbf.capacity = 300;
        cfg.coldfilter.threshold = 8;
        cfg.tasks.memory_kb = vec![12, 24];
        cfg
    }

    #[test]
    fn one_row_per_budget_and_task() {
        let rows = run_experiment(&small(), None).unwrap();
        assert_eq!(rows.len(), 6);
        let tasks: Vec<Task> = rows.iter().map(|r| r.task).collect();
        assert_eq!(
            &tasks[..3],
            &[Task::HeavyHitter, Task::HeavyChanger, Task::Estimation]
        );
        assert!(rows.iter().all(|r| r.are >= 0.0));
    }

    #[test]
    fn budget_below_the_hidden_sketch_is_an_error() {
        let mut cfg = small();
        cfg.tasks.memory_kb = vec![1];
        let err = run_experiment(&cfg, None).unwrap_err();
        assert!(format!("{err:#}").contains("1 KB"), "{err:#}");
    }

    #[test]
    fn reported_heavy_hitters_never_underestimate() {
        let cfg = small();
        let (a, b) = load_windows(&cfg).unwrap();
        let run = run_budget(&cfg, (&a, &b), 24).unwrap();
        assert_ne!(run.windows[0].status, DecodeStatus::Failed);
        for (k, &f) in &run.windows[0].reported {
            assert!(f >= run.truth[0].get(k).copied().unwrap_or(0), "key {k}");
        }
    }
}
