use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hs_harness::config::ExperimentConfig;
use hs_harness::experiment::{run_experiment, Task};

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn hsketch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hsketch"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let [a, b, c] = ["a", "b", "c"].map(|n| dir.path().join(n));
    for (p, seed) in [(&a, "3"), (&b, "3"), (&c, "4")] {
        ok(&hsketch(&[
            "gen",
            "--items",
            "2000",
            "--keys",
            "50",
            "--seed",
            seed,
            "-o",
            path(p),
        ]));
    }
    let read = |p: &Path| std::fs::read(p).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
    assert_eq!(String::from_utf8(read(&a)).unwrap().lines().count(), 2000);
}

#[test]
fn bundled_trace_regenerates() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t");
    let args = [
        "gen",
        "--items",
        "5000",
        "--keys",
        "500",
        "--seed",
        "7",
        "--permute",
        "0.05",
        "-o",
        path(&out),
    ];
    ok(&hsketch(&args));
    assert_eq!(
        std::fs::read(out).unwrap(),
        std::fs::read(root().join("data/sample_10k.trace")).unwrap()
    );
}

#[test]
fn run_decode_eval_round() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = root().join("configs/desk.toml");
    ok(&hsketch(&["run", "-c", path(&cfg), "-o", path(dir.path())]));

    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 5 * 3);
    let diags: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("diagnostics.json")).unwrap())
            .unwrap();
    assert_eq!(diags.as_array().unwrap().len(), 5);

    let report = dir.path().join("report.csv");
    let snap = dir.path().join("window0_12kb.hsw");
    ok(&hsketch(&["decode", path(&snap), "-o", path(&report)]));
    let text = std::fs::read_to_string(&report).unwrap();
    assert!(text.starts_with("key,frequency\n"));

    // Window one is the first half of the bundled trace.
    let trace = std::fs::read_to_string(root().join("data/sample_10k.trace")).unwrap();
    let half: String = trace.lines().take(5000).map(|l| format!("{l}\n")).collect();
    let half_path = dir.path().join("w0.trace");
    std::fs::write(&half_path, half).unwrap();
    let m: serde_json::Value = serde_json::from_str(&ok(&hsketch(&[
        "eval",
        "--reported",
        path(&report),
        "--trace",
        path(&half_path),
        "--threshold",
        "5",
    ])))
    .unwrap();
    assert_eq!(m["recall"], 1.0);
}

#[test]
fn heavy_hitter_f1_grows_with_memory_on_bundled_trace() {
    let cfg = ExperimentConfig::load(&root().join("configs/desk.toml")).unwrap();
    let f1: Vec<f64> = run_experiment(&cfg, None)
        .unwrap()
        .iter()
        .filter(|r| r.task == Task::HeavyHitter)
        .map(|r| r.scores.as_ref().unwrap().f1)
        .collect();
    assert_eq!(f1.len(), 5);
    let inversions: Vec<f64> = f1
        .windows(2)
        .map(|w| w[0] - w[1])
        .filter(|&d| d > 0.0)
        .collect();
    assert!(
        inversions.len() <= 1 && inversions.iter().all(|&d| d <= 0.01),
        "{f1:?}"
    );
}

#[test]
fn success_rate_table() {
    let out = ok(&hsketch(&[
        "success-rate",
        "--keys",
        "20",
        "--buckets",
        "0,30",
        "--trials",
        "10",
        "--modes",
        "pure,ilp",
    ]));
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "buckets,mode,successes,trials,rate,mismatches");
    assert_eq!(lines[1], "0,pure,0,10,0.0000,0");
    assert_eq!(lines[2], "0,pure+svd+ilp,0,10,0.0000,0");
    assert_eq!(lines.len(), 5);
}

#[test]
fn errors_exit_nonzero_with_context() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[rbf]\ncapacity = 100\nepsilonn = 0.1\n").unwrap();
    let out = hsketch(&["run", "-c", path(&cfg), "-o", path(dir.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));

    let trace = dir.path().join("bad.trace");
    std::fs::write(&trace, "1.2.3.4\n1.2.3\n").unwrap();
    std::fs::write(&cfg, format!("[workload]\ntraces = [{:?}]\n", path(&trace))).unwrap();
    let out = hsketch(&["run", "-c", path(&cfg), "-o", path(dir.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    let junk = dir.path().join("junk.hsw");
    std::fs::write(&junk, b"nope").unwrap();
    assert!(!hsketch(&["decode", path(&junk)]).status.success());
}
