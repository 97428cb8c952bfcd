use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn effgcn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_effgcn"))
        .args(args)
        .env_remove("EFFGCN_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(args: &[&str]) -> String {
    let o = effgcn(args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}{}",
        stdout(&o),
        String::from_utf8_lossy(&o.stderr)
    );
    stdout(&o)
}

fn json(args: &[&str]) -> Value {
    serde_json::from_str(&ok(args)).expect("valid json")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn plan_table_for_b4() {
    let out = ok(&["plan", "--phi", "4"]);
    let rows: Vec<Vec<&str>> = out.lines().skip(2).map(|l| l.split_whitespace().collect()).collect();
    let channels: Vec<&str> = rows[1..].iter().map(|r| r[2]).collect();
    let depths: Vec<&str> = rows[1..].iter().map(|r| r[3]).collect();
    assert_eq!(channels, ["96", "48", "128", "272"]);
    assert_eq!(depths, ["2", "2", "3", "3"]);

    let v = json(&["plan", "--phi", "4", "--json"]);
    assert_eq!(v["plan"]["stage_channels"], serde_json::json!([96, 48, 128, 272]));
    assert_eq!(v["plan"]["stage_depths"], serde_json::json!([2, 2, 3, 3]));
}

#[test]
fn plan_writes_json_and_rejects_bad_scaling() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["plan", "--phi", "2", "--out", p(dir.path())]);
    let plan: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("plan.json")).unwrap()).unwrap();
    assert_eq!(plan["stage_channels"], serde_json::json!([64, 32, 96, 192]));

    let bad = effgcn(&["plan", "--alpha", "1.5", "--beta", "1.5"]);
    assert_eq!(bad.status.code(), Some(1));
    ok(&["plan", "--alpha", "1.5", "--beta", "1.5", "--allow-unconstrained"]);
}

#[test]
fn unknown_flags_and_values_exit_1() {
    let o = effgcn(&["plan", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(String::from_utf8_lossy(&o.stderr).trim().lines().count(), 1);
    assert!(o.stdout.is_empty());
    assert_eq!(effgcn(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(effgcn(&["plan", "--layer", "wide"]).status.code(), Some(1));
    assert_eq!(effgcn(&["plan", "--kernel", "4"]).status.code(), Some(1));
    assert_eq!(effgcn(&["--help"]).status.code(), Some(0));
}

#[test]
fn profile_b0_matches_table_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["profile", "--out", p(dir.path())]);
    let total: Vec<&str> = out.lines().find(|l| l.starts_with("total")).unwrap().split_whitespace().collect();
    let params: f64 = total[1].parse().unwrap();
    assert!((params / 1e6 - 0.29).abs() / 0.29 < 0.05, "{params}");

    let v = json(&["profile", "--json"]);
    assert_eq!(v["total_params"].as_u64().unwrap(), params as u64);
    assert_eq!(v["total_flops"].as_u64().unwrap(), total[2].parse::<u64>().unwrap());

    let csv = std::fs::read_to_string(dir.path().join("profile.csv")).unwrap();
    assert!(csv.starts_with('#'));
    assert!(csv.contains(&format!("total,{},{}", total[1], total[2])));
}

#[test]
fn gradcheck_sep_passes() {
    let out = ok(&["gradcheck", "--layer", "sep", "--dtype", "f64"]);
    assert!(out.lines().any(|l| l.starts_with("PASS tc-sep")));
    assert!(!out.contains("FAIL"));
    let v = json(&["gradcheck", "--probe", "sgc", "--json"]);
    assert_eq!(v["passed"], Value::Bool(true));
    assert_eq!(v["probes"][0]["probe"], "sgc");
}

#[test]
fn gradcheck_failure_exits_1() {
    let o = effgcn(&["gradcheck", "--probe", "fc", "--tolerance", "0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL fc"));
    assert_eq!(effgcn(&["gradcheck", "--probe", "nope"]).status.code(), Some(1));
}

#[test]
fn sweep_grid() {
    let dir = tempfile::tempdir().unwrap();
    let v = json(&[
        "sweep",
        "--distances",
        "1,2,3",
        "--kernels",
        "3,5",
        "--out",
        p(dir.path()),
        "--json",
    ]);
    let cells = v["cells"].as_array().unwrap();
    assert_eq!(cells.len(), 6);
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(2).collect();
    assert_eq!(rows.len(), 6);
    for (row, cell) in rows.iter().zip(cells) {
        let f: Vec<u64> = row.split(',').map(|x| x.parse().unwrap()).collect();
        assert_eq!(f[2], cell["params"].as_u64().unwrap());
        assert_eq!(f[3], cell["flops"].as_u64().unwrap());
    }
}

#[test]
fn synth_preprocess_train_eval_cam() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let v = json(&[
        "synth",
        "--classes",
        "3",
        "--per-class",
        "5",
        "--frames",
        "16",
        "--joints",
        "25",
        "--out",
        p(&data),
        "--json",
    ]);
    assert_eq!((v["train"].as_u64(), v["eval"].as_u64()), (Some(12), Some(3)));

    let pre = dir.path().join("pre");
    let v = json(&["preprocess", "--data", p(&data), "--out", p(&pre), "--frames", "20", "--json"]);
    assert_eq!(v["count"].as_u64(), Some(15));
    assert_eq!(v["files"][0]["shape"], serde_json::json!([3, 6, 20, 25, 1]));
    assert!(pre.join("train/000000.sktn").exists());
    assert!(pre.join("eval/000000.meta.json").exists());

    let run = dir.path().join("run");
    let out = ok(&[
        "train",
        "--data",
        p(&data),
        "--out",
        p(&run),
        "--mini",
        "--epochs",
        "2",
        "--warmup-epochs",
        "1",
        "--batch",
        "4",
    ]);
    assert_eq!(out.lines().filter(|l| l.starts_with("epoch")).count(), 2);
    for f in ["train_log.csv", "checkpoint.skck", "plan.json", "metrics.json"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let log = std::fs::read_to_string(run.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 3);
    let plan: Value = serde_json::from_str(&std::fs::read_to_string(run.join("plan.json")).unwrap()).unwrap();
    assert_eq!(plan["num_classes"].as_u64(), Some(3));

    let ckpt = run.join("checkpoint.skck");
    let report = dir.path().join("report");
    let v = json(&[
        "eval",
        "--data",
        p(&data),
        "--checkpoint",
        p(&ckpt),
        "--out",
        p(&report),
        "--json",
    ]);
    let confusion = v["confusion"].as_array().unwrap();
    assert_eq!(confusion.len(), 3);
    let total: u64 = confusion.iter().flat_map(|r| r.as_array().unwrap()).map(|x| x.as_u64().unwrap()).sum();
    assert_eq!(total, 3);
    let csv = std::fs::read_to_string(report.join("confusion.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    let table = ok(&["eval", "--data", p(&data), "--checkpoint", p(&ckpt)]);
    assert!(table.starts_with(&format!("top1 {:.4}", v["top1_accuracy"].as_f64().unwrap())));

    let threaded = Command::new(env!("CARGO_BIN_EXE_effgcn"))
        .args(["eval", "--data", p(&data), "--checkpoint", p(&ckpt), "--json"])
        .env("EFFGCN_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(serde_json::from_slice::<Value>(&threaded.stdout).unwrap(), v);
    let bad_threads = Command::new(env!("CARGO_BIN_EXE_effgcn"))
        .args(["eval", "--data", p(&data), "--checkpoint", p(&ckpt)])
        .env("EFFGCN_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(bad_threads.status.code(), Some(1));

    let cam_dir = dir.path().join("cam");
    let v = json(&[
        "cam",
        "--data",
        p(&data),
        "--checkpoint",
        p(&ckpt),
        "--index",
        "1",
        "--out",
        p(&cam_dir),
        "--json",
    ]);
    assert_eq!((v["frames"].as_u64(), v["joints"].as_u64()), (Some(4), Some(25)));
    let csv = std::fs::read_to_string(cam_dir.join("cam.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.lines().skip(1).all(|l| l.split(',').skip(1).all(|x| {
        let x: f64 = x.parse().unwrap();
        (0.0..=1.0).contains(&x)
    })));

    let missing = effgcn(&["eval", "--data", p(&data), "--checkpoint", p(&dir.path().join("none.skck"))]);
    assert_eq!(missing.status.code(), Some(2));
    let past_end = effgcn(&[
        "cam",
        "--data",
        p(&data),
        "--checkpoint",
        p(&ckpt),
        "--index",
        "99",
        "--out",
        p(&cam_dir),
    ]);
    assert_eq!(past_end.status.code(), Some(1));
}

#[test]
fn runtime_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = effgcn(&["train", "--data", p(dir.path()), "--out", p(&dir.path().join("run"))]);
    assert_eq!(o.status.code(), Some(2));
    std::fs::write(dir.path().join("broken.sktn"), b"not a tensor").unwrap();
    let o = effgcn(&["preprocess", "--data", p(dir.path()), "--out", p(&dir.path().join("pre"))]);
    assert_eq!(o.status.code(), Some(2));
}
