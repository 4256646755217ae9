use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use predfilt_cli::trace::read_trace;

const BIN: &str = env!("CARGO_BIN_EXE_predfilt");

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("config.toml");
    fs::write(&path, body).unwrap();
    path
}

fn run(config: &Path, out: &Path, extra: &[&str]) -> Output {
    Command::new(BIN)
        .arg("run")
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .env_remove("PREDFILT_DATA_DIR")
        .output()
        .unwrap()
}

const SMALL_BANDIT: &str = r#"
experiment = "bandit"
filter = "hilofi"
policy = "pbayes"
steps = 30
seeds = [0, 1]

[net]
hidden = [8]

[ranks]
hidden = 4
"#;

#[test]
fn single_arm_single_step_has_zero_regret() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "experiment = \"bandit\"\nsteps = 1\nseeds = [4]\n[bandit]\narms = 1\n[net]\nhidden = [4]\n[ranks]\nhidden = 2\n",
    );
    let out = dir.path().join("out");
    let o = run(&cfg, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let recs = read_trace(fs::read(out.join("trace_seed4.jsonl")).unwrap().as_slice()).unwrap();
    assert_eq!(recs.len(), 1);
    assert_eq!(recs[0].regret, Some(0.0));
    assert_eq!(recs[0].cumulative_regret, Some(0.0));
}

#[test]
fn reruns_give_identical_summaries() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_BANDIT);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run(&cfg, &a, &[]).status.success());
    assert!(run(&cfg, &b, &[]).status.success());
    let sa = fs::read_to_string(a.join("summary.csv")).unwrap();
    assert_eq!(sa, fs::read_to_string(b.join("summary.csv")).unwrap());
    for seed in [0, 1] {
        let name = format!("trace_seed{seed}.jsonl");
        let ra = read_trace(fs::read(a.join(&name)).unwrap().as_slice()).unwrap();
        let rb = read_trace(fs::read(b.join(&name)).unwrap().as_slice()).unwrap();
        for (x, y) in ra.iter().zip(&rb) {
            assert_eq!(
                (&x.action, x.reward, x.pred_mean),
                (&y.action, y.reward, y.pred_mean)
            );
        }
    }
}

#[test]
fn trace_and_summary_agree() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_BANDIT);
    let out = dir.path().join("out");
    assert!(run(&cfg, &out, &[]).status.success());
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines.len(), 1 + 2 + 2);
    for (row, seed) in lines[1..3].iter().zip([0, 1]) {
        let cells: Vec<&str> = row.split(',').collect();
        assert_eq!(cells[0], seed.to_string());
        let recs = read_trace(
            fs::read(out.join(format!("trace_seed{seed}.jsonl")))
                .unwrap()
                .as_slice(),
        )
        .unwrap();
        assert_eq!(recs.len(), 30);
        let total: f64 = recs.iter().map(|r| r.reward).sum();
        let regret: f64 = recs.iter().map(|r| r.regret.unwrap()).sum();
        assert_eq!(cells[2].parse::<f64>().unwrap(), total);
        assert_eq!(cells[3].parse::<f64>().unwrap(), regret);
        assert!(recs.windows(2).all(|w| w[1].t == w[0].t + 1));
    }
    assert!(lines[3].starts_with("mean,30,"));
    assert!(out.join("config.toml").exists());
}

#[test]
fn seed_override_and_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_BANDIT);
    let out = dir.path().join("out");
    let o = run(&cfg, &out, &["--seed-override", "9", "--diagnostics"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!out.join("trace_seed0.jsonl").exists());
    let recs = read_trace(fs::read(out.join("trace_seed9.jsonl")).unwrap().as_slice()).unwrap();
    assert!(recs.iter().all(|r| r.bound.is_some_and(|b| b >= 0.0)));
}

#[test]
fn invalid_config_exits_1_and_names_keys() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "experiment = \"bandit\"\nsteps = 0\nepsilon = 2.0\n[noise]\nr = -1.0\n",
    );
    let o = run(&cfg, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    for key in ["steps", "epsilon", "noise.r"] {
        assert!(err.contains(key), "{key} missing from: {err}");
    }
}

#[test]
fn unknown_key_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "experiment = \"bandit\"\nstepz = 3\n");
    let o = run(&cfg, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("stepz"));
}

#[test]
fn missing_mnist_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("no-such-dir");
    let cfg = write_config(
        dir.path(),
        &format!(
            "experiment = \"mnist_bandit\"\nsteps = 5\n[mnist]\ndata_dir = {:?}\n",
            missing.to_str().unwrap()
        ),
    );
    let o = run(&cfg, &dir.path().join("out"), &[]);
    assert_eq!(
        o.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(!dir.path().join("out").exists());
}

#[test]
fn verify_linalg_reports_each_criterion() {
    let o = Command::new(BIN)
        .args(["verify", "linalg"])
        .output()
        .unwrap();
    assert!(o.status.success());
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(
        stdout
            .lines()
            .any(|l| l.starts_with("PASS kernel_correctness")),
        "{stdout}"
    );
}
