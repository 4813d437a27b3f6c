use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const FAST: &[&str] = &["--restarts", "1", "--adam_epochs", "40", "--lbfgs_iters", "40", "--m_train", "120", "--m_val", "60", "--m_test", "60"];

fn mpgne(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mpgne"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = mpgne(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn with_fast<'a>(cmd: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![cmd];
    v.extend_from_slice(FAST);
    v.extend_from_slice(extra);
    v
}

fn pipeline(dir: &Path) {
    for cmd in ["gen-game", "gen-data", "train-value", "train-gne", "eval"] {
        ok(dir, &with_fast(cmd, &[]));
    }
}

fn find(dir: &Path, prefix: &str, suffix: &str) -> PathBuf {
    let mut hits: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| {
            let n = p.file_name().unwrap().to_str().unwrap();
            n.starts_with(prefix) && n.ends_with(suffix) && !n.contains(".timed.")
        })
        .collect();
    assert_eq!(hits.len(), 1, "expected one {prefix}*{suffix} in {}", dir.display());
    hits.pop().unwrap()
}

#[test]
fn bench_nonmono18_writes_a_populated_report() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec!["bench", "nonmono18"];
    args.extend_from_slice(FAST);
    ok(tmp.path(), &args);
    let report = find(&tmp.path().join("out/reports"), "bench_nonmono18", ".csv");
    let text = std::fs::read_to_string(report).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    for col in ["mse_br", "mean_violation", "max_violation"] {
        let j = header.iter().position(|h| *h == col).unwrap();
        let v: f64 = row[j].parse().unwrap();
        assert!(v.is_finite() && v >= 0.0, "{col} = {v}");
    }
}

#[test]
fn predict_keeps_row_count_and_order() {
    let tmp = tempfile::tempdir().unwrap();
    pipeline(tmp.path());
    std::fs::write(tmp.path().join("p.csv"), "p_1\n0.5\n-0.25\n0.9\n").unwrap();
    ok(tmp.path(), &with_fast("predict", &["--input", "p.csv", "--output", "x.csv"]));
    let text = std::fs::read_to_string(tmp.path().join("x.csv")).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);

    let model = mpgne::learn::GneModel::load(&find(&tmp.path().join("out/models"), "gne_", ".txt")).unwrap();
    let game = mpgne::games::nonmono18();
    for (row, p) in rows.iter().zip([0.5, -0.25, 0.9]) {
        let want = model.predict(&game, &[p], mpgne::learn::PredictMode::Clip).unwrap();
        let got: Vec<f64> = row.split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(got, want);
    }
}

#[test]
fn identical_train_gne_runs_are_byte_identical_and_rerun_reproduces() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path());
    pipeline(b.path());
    let ma = find(&a.path().join("out/models"), "gne_", ".txt");
    let mb = find(&b.path().join("out/models"), "gne_", ".txt");
    assert_eq!(ma.file_name(), mb.file_name());
    assert_eq!(std::fs::read(&ma).unwrap(), std::fs::read(&mb).unwrap());
    let ea = find(&a.path().join("out/reports"), "eval_", "_clip.csv");
    let eb = find(&b.path().join("out/reports"), "eval_", "_clip.csv");
    assert_eq!(std::fs::read(ea).unwrap(), std::fs::read(eb).unwrap());

    for (dir, prefix) in [("out/models", "gne_"), ("out/models", "values_"), ("out/reports", "eval_"), ("out/data", "data_")] {
        let manifest = find(&a.path().join(dir), prefix, ".manifest");
        ok(a.path(), &["rerun", manifest.to_str().unwrap()]);
    }
}

#[test]
fn errors_map_to_distinct_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| mpgne(tmp.path(), args).status.code().unwrap();
    assert_eq!(code(&["eval", "--no_such_key", "1"]), 2);
    assert_eq!(code(&["train-gne", "--beta", "3"]), 3);
    ok(tmp.path(), &with_fast("gen-data", &[]));
    ok(tmp.path(), &with_fast("train-value", &[]));
    ok(tmp.path(), &with_fast("train-gne", &[]));
    std::fs::write(tmp.path().join("bad.csv"), "1,2\n").unwrap();
    assert_eq!(code(&with_fast("predict", &["--input", "bad.csv"])), 4);
    assert_eq!(code(&["bench"]), 2);
    assert!(mpgne(tmp.path(), &["defaults"]).status.success());
}
