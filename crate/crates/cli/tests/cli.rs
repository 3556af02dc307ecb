use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn rampsvm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rampsvm")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = rampsvm(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read(p: impl AsRef<Path>) -> String {
    std::fs::read_to_string(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

fn golden(name: &str) -> String {
    read(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name))
}

fn first_line(text: &str) -> String {
    format!("{}\n", text.lines().next().unwrap())
}

fn write_toy(dir: &Path) -> PathBuf {
    let path = dir.join("toy.txt");
    std::fs::write(&path, "+1 1:1\n-1 1:-1\n").unwrap();
    path
}

/// Model coefficients by training index.
fn coefficients(model_text: &str) -> Vec<(usize, f64)> {
    model_text
        .lines()
        .skip_while(|l| !l.starts_with("n_sv"))
        .skip(1)
        .map(|l| {
            let mut it = l.split_whitespace();
            (it.next().unwrap().parse().unwrap(), it.next().unwrap().parse().unwrap())
        })
        .collect()
}

fn strip_timing(v: &mut Value) {
    match v {
        Value::Object(map) => {
            map.retain(|k, _| !k.contains("wall_time"));
            map.values_mut().for_each(strip_timing);
        }
        Value::Array(items) => items.iter_mut().for_each(strip_timing),
        _ => {}
    }
}

fn sorted_keys(v: &Value) -> Vec<String> {
    let mut keys: Vec<String> = v.as_object().unwrap().keys().cloned().collect();
    keys.sort();
    keys
}

fn sorted_lines(text: &str) -> Vec<String> {
    let mut lines: Vec<String> = text.lines().map(str::to_owned).collect();
    lines.sort();
    lines
}

#[test]
fn toy_training_writes_model_and_metrics() {
    let dir = TempDir::new().unwrap();
    let data = write_toy(dir.path());
    let out = dir.path().join("out");
    ok(&["train", "--data", s(&data), "--kernel", "linear", "--mode", "none", "--out-dir", s(&out)]);
    let model = read(out.join("model.txt"));
    assert!(model.contains("\nn_sv 2\n"), "{model}");
    let metrics: Value = serde_json::from_str(&read(out.join("metrics.json"))).unwrap();
    assert_eq!(metrics["sv_count"], 2);
    assert_eq!(metrics["training_accuracy"], 1.0);
    assert_eq!(sorted_keys(&metrics), sorted_lines(&golden("metrics_keys.txt")));
    assert_eq!(first_line(&read(out.join("trajectory.csv"))), golden("trajectory_header.txt"));
}

#[test]
fn safe_and_none_give_the_same_model() {
    let dir = TempDir::new().unwrap();
    let mut models = Vec::new();
    for mode in ["safe", "none"] {
        let out = dir.path().join(mode);
        ok(&["train", "--synthetic", "150,0.1", "--seed", "4", "--mode", mode, "--out-dir", s(&out)]);
        let metrics: Value = serde_json::from_str(&read(out.join("metrics.json"))).unwrap();
        assert!(metrics["wall_time_s"].as_f64().unwrap() > 0.0);
        assert_eq!(metrics["config"]["mode"], mode);
        models.push(coefficients(&read(out.join("model.txt"))));
    }
    let dense = |m: &[(usize, f64)]| {
        let mut a = vec![0.0; 150];
        for &(i, v) in m {
            a[i] = v;
        }
        a
    };
    let (a, b) = (dense(&models[0]), dense(&models[1]));
    let diff = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(diff <= 1e-6, "{diff}");
}

#[test]
fn zero_c_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let out = rampsvm(&["train", "--synthetic", "20", "--C", "0", "--out-dir", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("C must be positive"));
    assert!(!dir.path().join("model.txt").exists());
}

#[test]
fn invalid_values_are_usage_errors() {
    for args in [
        &["train", "--synthetic", "20", "--s", "0.5"][..],
        &["train", "--synthetic", "20", "--gamma", "0"],
        &["train", "--synthetic", "20", "--eps", "0"],
        &["train", "--synthetic", "20", "--mode", "fast"],
        &["train", "--synthetic", "20,0.9"],
        &["train"],
    ] {
        assert_eq!(rampsvm(args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn predict_on_separable_training_data_is_perfect() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("m");
    ok(&["train", "--synthetic", "80,0,10", "--seed", "3", "--kernel", "linear", "--out-dir", s(&out)]);
    // the same generator call as the training run, written as a file
    let data = dir.path().join("sep.txt");
    std::fs::write(&data, rampsvm::make_synthetic(80, 0.0, 10.0, 3).unwrap().to_libsvm()).unwrap();
    let stdout = ok(&["predict", "--model", s(&out.join("model.txt")), "--data", s(&data), "--out-dir", s(&out)]);
    assert!(stdout.contains("accuracy 1.0000 (80/80)"), "{stdout}");
    let preds = read(out.join("predictions.csv"));
    assert_eq!(first_line(&preds), golden("predictions_header.txt"));
    assert_eq!(preds.lines().count(), 81);
}

#[test]
fn empty_model_scores_the_bias() {
    let dir = TempDir::new().unwrap();
    let model = dir.path().join("empty.txt");
    std::fs::write(
        &model,
        "rampsvm-model v1\nkernel linear\nC 1\ns 0\nbias -0.25\nouter_iterations 0\nfinal_gap 0\nconverged true\nn_sv 0\n",
    )
    .unwrap();
    let data = write_toy(dir.path());
    ok(&["predict", "--model", s(&model), "--data", s(&data), "--out-dir", s(dir.path())]);
    let preds = read(dir.path().join("predictions.csv"));
    for line in preds.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[1].parse::<f64>().unwrap(), -0.25);
        assert_eq!(cols[2], "-1");
    }
}

#[test]
fn missing_files_fail() {
    let dir = TempDir::new().unwrap();
    let out = rampsvm(&["train", "--data", "/definitely/not/here.txt", "--out-dir", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    let data = write_toy(dir.path());
    let out = rampsvm(&["predict", "--model", "/definitely/not/here.model", "--data", s(&data)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn kernel_mismatch_is_rejected() {
    let dir = TempDir::new().unwrap();
    let data = write_toy(dir.path());
    ok(&["train", "--data", s(&data), "--gamma", "0.5", "--out-dir", s(dir.path())]);
    let model = dir.path().join("model.txt");
    for flags in [&["--kernel", "linear"][..], &["--kernel", "rbf", "--gamma", "5"], &["--gamma", "0.05"]] {
        let mut args = vec!["predict", "--model", s(&model), "--data", s(&data), "--out-dir", s(dir.path())];
        args.extend_from_slice(flags);
        let out = rampsvm(&args);
        assert!(!out.status.success(), "{flags:?}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("kernel mismatch"));
    }
    ok(&[
        "predict",
        "--model",
        s(&model),
        "--data",
        s(&data),
        "--kernel",
        "rbf",
        "--gamma",
        "0.5",
        "--out-dir",
        s(dir.path()),
    ]);
}

#[test]
fn identical_runs_are_identical() {
    let dir = TempDir::new().unwrap();
    let mut runs = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(k.to_string());
        ok(&["train", "--synthetic", "200,0.1", "--seed", "9", "--mode", "shrink+safe", "--out-dir", s(&out)]);
        let mut metrics: Value = serde_json::from_str(&read(out.join("metrics.json"))).unwrap();
        strip_timing(&mut metrics);
        runs.push((read(out.join("model.txt")), read(out.join("trajectory.csv")), metrics));
    }
    assert_eq!(runs[0].0, runs[1].0);
    assert_eq!(runs[0].1, runs[1].1);
    assert_eq!(runs[0].2, runs[1].2);
}

#[test]
fn bench_smoke_grid() {
    let dir = TempDir::new().unwrap();
    let stdout = ok(&["bench", "--synthetic", "120,0.1", "--C", "1", "--gamma", "0.5", "--out-dir", s(dir.path())]);
    assert!(stdout.contains("4 cells ok, 0 failed"), "{stdout}");
    let csv = read(dir.path().join("bench.csv"));
    assert_eq!(first_line(&csv), golden("bench_header.txt"));
    let mut reader = csv::Reader::from_reader(csv.as_bytes());
    let headers = reader.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 4);
    let modes: Vec<&str> = rows.iter().map(|r| &r[col("mode")]).collect();
    assert_eq!(modes, ["safe", "shrink", "shrink+safe", "none"]);
    for r in &rows {
        assert_eq!(&r[col("status")], "ok");
        let traj = read(dir.path().join(&r[col("trajectory")]));
        assert_eq!(first_line(&traj), golden("trajectory_header.txt"));
        // screened fraction never decreases within one inner solve
        let mut prev: Option<(String, f64)> = None;
        for line in traj.lines().skip(1) {
            let cols: Vec<&str> = line.split(',').collect();
            if cols[10] == "true" {
                continue;
            }
            let frac: f64 = cols[9].parse().unwrap();
            if let Some((outer, p)) = &prev {
                if outer == cols[0] {
                    assert!(frac >= *p, "{line}");
                }
            }
            prev = Some((cols[0].to_owned(), frac));
        }
    }
    let manifest: Value = serde_json::from_str(&read(dir.path().join("manifest.json"))).unwrap();
    assert_eq!(sorted_keys(&manifest), sorted_lines(&golden("manifest_keys.txt")));
}

#[test]
fn bench_writes_one_row_per_repetition_even_when_capped() {
    let dir = TempDir::new().unwrap();
    let stdout = ok(&[
        "bench",
        "--synthetic",
        "60",
        "--mode",
        "none,safe",
        "--max-iter",
        "1",
        "--reps",
        "2",
        "--out-dir",
        s(dir.path()),
    ]);
    assert!(stdout.contains("4 cells ok"), "{stdout}");
    let csv = read(dir.path().join("bench.csv"));
    assert_eq!(csv.lines().count(), 5);
}
