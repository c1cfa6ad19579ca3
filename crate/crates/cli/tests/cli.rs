use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_scribble-da"))
}

fn run(args: &[&str], cwd: &Path) -> Output {
    bin().args(args).current_dir(cwd).output().expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = run(args, cwd);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn small_dataset(dir: &Path) {
    ok(
        &["gen-data", "--seed", "7", "--out-dir", "d", "--n-source", "4", "--n-target", "4", "--n-val", "2", "--n-test", "3", "--size", "32"],
        dir,
    );
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["bogus"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(run(&["train", "--no-such-flag"], dir.path()).status.code(), Some(2));
    assert_eq!(run(&["train", "--data-manifest", "m.json", "--mode", "scrib+magic"], dir.path()).status.code(), Some(2));
    assert_eq!(run(&["eval", "--manifest", "m.json"], dir.path()).status.code(), Some(2));
}

#[test]
fn io_failures_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["train", "--data-manifest", "missing.json", "--out-dir", "r"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn version_prints_build_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let v = ok(&["--version"], dir.path());
    assert!(v.contains(env!("CARGO_PKG_VERSION")) && v.contains("core"));
}

#[test]
fn every_mode_name_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path());
    let modes = ["scrib", "scrib+ireg", "scrib+source", "scrib+source+ireg", "scrib+source+ireg+da", "fullsup-target", "source-only"];
    for (i, m) in modes.iter().enumerate() {
        let out_dir = format!("r{i}");
        ok(&["train", "--data-manifest", "d/manifest.json", "--out-dir", &out_dir, "--mode", m, "--max-epochs", "1"], dir.path());
    }
}

#[test]
fn gen_train_infer_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    small_dataset(p);
    fs::write(p.join("c.json"), r#"{"max_epochs": 3, "da_warmup_epochs": 1, "kernel": {"lambda_i": 0.1}}"#).unwrap();
    ok(&["train", "--config", "c.json", "--data-manifest", "d/manifest.json", "--out-dir", "run", "--set", "lr=0.002"], p);
    let history = fs::read_to_string(p.join("run/history.csv")).unwrap();
    let mut lines = history.lines();
    assert_eq!(lines.next(), Some("epoch,loss,data,ri,rda,val,lr"));
    assert!(lines.count() >= 1);
    let config: serde_json::Value = serde_json::from_str(&fs::read_to_string(p.join("run/config.json")).unwrap()).unwrap();
    assert_eq!(config["train"]["lr"], 0.002);
    assert_eq!(config["train"]["kernel"]["lambda_i"], 0.1);
    assert!(p.join("run/metrics.json").exists());

    ok(&["infer", "--checkpoint", "run/checkpoint", "--manifest", "d/manifest.json", "--out-dir", "pred", "--crf-postprocess"], p);
    ok(&["eval", "--predictions", "pred", "--manifest", "d/manifest.json", "--out", "m.csv"], p);
    let rows = fs::read_to_string(p.join("m.csv")).unwrap();
    assert_eq!(rows.lines().count(), 4);
    ok(&["eval", "--checkpoint", "run/checkpoint", "--manifest", "d/manifest.json", "--split", "val", "--out", "v.csv"], p);
    assert_eq!(fs::read_to_string(p.join("v.csv")).unwrap().lines().count(), 3);
}

#[test]
fn eval_of_perfect_predictions_is_100() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    small_dataset(p);
    fs::create_dir(p.join("pred")).unwrap();
    for entry in fs::read_dir(p.join("d/test-target")).unwrap() {
        let name = entry.unwrap().file_name().into_string().unwrap();
        if let Some(id) = name.strip_suffix("_mask.tg") {
            fs::copy(p.join("d/test-target").join(&name), p.join("pred").join(format!("{id}_pred.tg"))).unwrap();
        }
    }
    ok(&["eval", "--predictions", "pred", "--manifest", "d/manifest.json", "--out", "m.csv"], p);
    let rows = fs::read_to_string(p.join("m.csv")).unwrap();
    for row in rows.lines().skip(1) {
        assert!(row.contains(",100.000000,0.000000,1"), "{row}");
    }
}

#[test]
fn refine_writes_soft_and_crisp_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    small_dataset(p);
    ok(&["train", "--data-manifest", "d/manifest.json", "--out-dir", "run", "--max-epochs", "1"], p);
    ok(&["infer", "--checkpoint", "run/checkpoint", "--manifest", "d/manifest.json", "--out-dir", "pred"], p);
    ok(
        &[
            "refine", "--image", "d/test-target/test-000_image.tg", "--unary", "pred/test-000_soft.tg",
            "--scribbles", "d/test-target/test-000_scribbles.tg", "--iters", "5", "--out", "r.tg",
        ],
        p,
    );
    assert!(p.join("r.tg").exists() && p.join("r_crisp.tg").exists());
}

#[test]
fn filter_bench_emits_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["filter-bench", "--n", "300", "--dim", "2,3", "--oracle"], dir.path());
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "n,dim,lattice_ms,oracle_ms,rel_l2_err");
    assert_eq!(lines.len(), 3);
    for row in &lines[1..] {
        let err: f64 = row.rsplit(',').next().unwrap().parse().unwrap();
        assert!(err < 0.05, "{row}");
    }
}

#[test]
fn deterministic_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    small_dataset(p);
    for run_dir in ["a", "b"] {
        ok(
            &["train", "--data-manifest", "d/manifest.json", "--out-dir", run_dir, "--deterministic", "--seed", "5", "--max-epochs", "3"],
            p,
        );
    }
    for file in ["history.csv", "metrics.csv", "metrics.json"] {
        assert_eq!(fs::read(p.join("a").join(file)).unwrap(), fs::read(p.join("b").join(file)).unwrap(), "{file}");
    }
    let names: Vec<_> = fs::read_dir(p.join("a/checkpoint")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names.len(), 7);
    for name in names {
        assert_eq!(fs::read(p.join("a/checkpoint").join(&name)).unwrap(), fs::read(p.join("b/checkpoint").join(&name)).unwrap());
    }
}
