use std::fs;
use std::process::Command;

fn metabnn() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_metabnn"));
    c.env("RUST_LOG", "error");
    c
}

#[test]
fn toy_output_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let files = ["toy_rows.csv", "toy_detail.csv", "toy_bins.csv", "toy_spearman.csv", "toy_summary.json"];
    let mut snapshots = Vec::new();
    for _ in 0..2 {
        let status = metabnn()
            .args(["toy", "--toy-problems", "4", "--toy-dim", "6", "--seed", "5", "--output"])
            .arg(dir.path())
            .status()
            .unwrap();
        assert!(status.success());
        snapshots.push(files.map(|f| fs::read(dir.path().join(f)).unwrap()));
    }
    assert_eq!(snapshots[0], snapshots[1]);
    let rows = fs::read_to_string(dir.path().join("toy_rows.csv")).unwrap();
    assert_eq!(rows.lines().next().unwrap(), "problem_id,i,delta_L,wh_abs,wh_norm");
    assert_eq!(rows.lines().count(), 1 + 4 * 6);
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"toy_problems": 2, "toy_dim": 3, "seed": 1}"#).unwrap();
    let out = dir.path().join("o");
    let status = metabnn()
        .args(["toy", "--toy-dim", "4", "--config"])
        .arg(&cfg)
        .arg("--output")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let rows = fs::read_to_string(out.join("toy_rows.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 2 * 4);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| metabnn().args(args).status().unwrap().code();
    assert_eq!(code(&["permuted", "--method", "meta", "--m", "0"]), Some(1));
    assert_eq!(code(&["toy", "--toy-dim", "30"]), Some(1));
    // an empty cache and a mirror nobody listens on
    let empty = dir.path().join("cache");
    let mirrors = dir.path().join("mirrors.txt");
    fs::write(&mirrors, "fmnist http://127.0.0.1:9/nothing\n").unwrap();
    let status = metabnn()
        .args(["fetch-data", "--dataset", "fmnist", "--data-dir"])
        .arg(&empty)
        .arg("--mirrors")
        .arg(&mirrors)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
    let missing = dir.path().join("none.csv");
    assert_eq!(code(&["report", missing.to_str().unwrap()]), Some(2));
}

#[test]
fn report_from_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("m.csv");
    fs::write(
        &csv,
        "run_id,seed,method,m,lambda,task_index,eval_task,accuracy,wall_clock_s\n\
         r,1,meta,1.35,0,1,1,0.9,1.0\n\
         r,1,meta,1.35,0,2,1,0.8,2.0\n\
         r,1,meta,1.35,0,2,2,0.9,2.0\n",
    )
    .unwrap();
    let out = dir.path().join("report.json");
    let status = metabnn().arg("report").arg(&csv).arg("--output").arg(&out).status().unwrap();
    assert!(status.success());
    let v: serde_json::Value = serde_json::from_slice(&fs::read(&out).unwrap()).unwrap();
    let curve = v["curves"]["meta"].as_array().unwrap();
    assert_eq!(curve.len(), 2);
    assert!((curve[1]["mean"].as_f64().unwrap() - 0.85).abs() < 1e-12);

    fs::write(&csv, "run_id,seed,method\n").unwrap();
    let bad = dir.path().join("bad.json");
    let status = metabnn().arg("report").arg(&csv).arg("--output").arg(&bad).status().unwrap();
    assert_eq!(status.code(), Some(1));
    assert!(!bad.exists());
}
