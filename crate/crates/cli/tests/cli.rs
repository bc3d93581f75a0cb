use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use slicelens::synthetic::{planted_corpus, PlantedSpec};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_slicelens"));
    c.env("RUST_LOG", "error");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn planted(dir: &Path, seed: u64) -> PathBuf {
    let path = dir.join("data.jsonl");
    std::fs::write(&path, planted_corpus(&PlantedSpec::single_bias(), seed).to_jsonl()).unwrap();
    path
}

fn data_set(path: &Path) -> String {
    format!("dataset.path=\"{}\"", path.display())
}

#[test]
fn run_end_to_end_writes_a_report() {
    let tmp = tempfile::tempdir().unwrap();
    let data = planted(tmp.path(), 0);
    let dir = tmp.path().join("run");
    let out = run(&[
        "run",
        "--mock-backends",
        "--seed",
        "0",
        "--run-dir",
        dir.to_str().unwrap(),
        "--set",
        &data_set(&data),
        "--set",
        "augment.total=100",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(dir.join("report.json").is_file());
    assert!(dir.join("manifest.json").is_file());
    assert!(stdout(&out).contains("base accuracy:"));
}

#[test]
fn stage_before_its_input_fails_with_a_named_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let data = planted(tmp.path(), 0);
    let dir = tmp.path().join("run");
    let common = ["--mock-backends", "--run-dir", dir.to_str().unwrap(), "--set"];
    let set = data_set(&data);
    for stage in ["ingest", "embed", "train"] {
        let mut args = vec![stage];
        args.extend(common);
        args.push(&set);
        let out = run(&args);
        assert!(out.status.success(), "{stage}: {}", stderr(&out));
    }
    let out = run(&["explain", "--run-dir", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.starts_with("error[validation]:"), "{err}");
    assert!(err.contains("cluster"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
}

#[test]
fn report_prints_base_and_post_accuracy() {
    let tmp = tempfile::tempdir().unwrap();
    let data = planted(tmp.path(), 1);
    let dir = tmp.path().join("run");
    let d = dir.to_str().unwrap();
    let set = data_set(&data);
    assert!(run(&["run", "--mock-backends", "--run-dir", d, "--set", &set])
        .status
        .success());
    let out = run(&["report", "--run-dir", d]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let line = |prefix: &str| {
        text.lines()
            .find(|l| l.starts_with(prefix))
            .unwrap_or_else(|| panic!("no {prefix:?} line in\n{text}"))
            .to_string()
    };
    for prefix in ["base accuracy: ", "post accuracy: "] {
        let l = line(prefix);
        let value: f64 = l[prefix.len()..].split_whitespace().next().unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&value), "{l}");
        assert!(l.ends_with("%)"), "{l}");
    }
    assert!(text.contains("extension: clusters smaller than 10"), "{text}");
    let csv = stdout(&run(&["report", "--run-dir", d, "--format", "csv"]));
    assert!(csv.starts_with("method,budget,accuracy\n"), "{csv}");
}

/// The top-level `seed` of the stored config.
fn stored_seed(dir: &Path) -> u64 {
    let text = std::fs::read_to_string(dir.join("config.toml")).unwrap();
    text.lines()
        .take_while(|l| !l.starts_with('['))
        .find_map(|l| l.strip_prefix("seed = "))
        .expect("seed key")
        .parse()
        .unwrap()
}

#[test]
fn flag_beats_set_beats_file_beats_default() {
    let tmp = tempfile::tempdir().unwrap();
    let data = planted(tmp.path(), 0);
    let file = tmp.path().join("conf.toml");
    std::fs::write(&file, format!("seed = 5\n[dataset]\npath = \"{}\"\n", data.display())).unwrap();
    let f = file.to_str().unwrap();
    let cases: [(&str, &[&str], u64); 4] = [
        ("default", &[], 0),
        ("file", &["--config", f], 5),
        ("set", &["--config", f, "--set", "seed=7"], 7),
        ("flag", &["--config", f, "--set", "seed=7", "--seed", "9"], 9),
    ];
    let set = data_set(&data);
    for (name, extra, want) in cases {
        let dir = tmp.path().join(name);
        let mut args = vec!["ingest", "--mock-backends", "--run-dir", dir.to_str().unwrap()];
        if extra.is_empty() {
            args.extend(["--set", &set]);
        }
        args.extend(extra);
        let out = run(&args);
        assert!(out.status.success(), "{name}: {}", stderr(&out));
        assert_eq!(stored_seed(&dir), want, "{name}");
    }
}

#[test]
fn unknown_config_key_is_a_validation_error() {
    let out = run(&["run", "--mock-backends", "--set", "clustering.no_such_key=1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).starts_with("error[validation]:"), "{}", stderr(&out));
}

#[test]
fn seeded_runs_give_identical_canonical_json() {
    let tmp = tempfile::tempdir().unwrap();
    let data = planted(tmp.path(), 2);
    let set = data_set(&data);
    let mut reports = Vec::new();
    for name in ["a", "b"] {
        let dir = tmp.path().join(name);
        let d = dir.to_str().unwrap();
        let out = run(&["run", "--mock-backends", "--seed", "2", "--run-dir", d, "--set", &set]);
        assert!(out.status.success(), "{}", stderr(&out));
        let out = run(&["report", "--run-dir", d, "--format", "json", "--canonical"]);
        assert!(out.status.success(), "{}", stderr(&out));
        let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        assert!(json.get("created_at").is_none() && json.get("timing_ms").is_none());
        reports.push(out.stdout);
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn replay_reproduces_the_report() {
    let tmp = tempfile::tempdir().unwrap();
    let data = planted(tmp.path(), 3);
    let set = data_set(&data);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let first = run(&[
        "run",
        "--mock-backends",
        "--seed",
        "3",
        "--run-dir",
        a.to_str().unwrap(),
        "--set",
        &set,
    ]);
    assert!(first.status.success(), "{}", stderr(&first));
    // Mocks switched off: every chat request must be answered from the log.
    let out = run(&[
        "run",
        "--config",
        a.join("config.toml").to_str().unwrap(),
        "--set",
        "llm.mock=false",
        "--replay-from",
        a.to_str().unwrap(),
        "--run-dir",
        b.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    // The config snapshots differ in `llm.mock` by construction; every result must match.
    let results = |d: &Path| {
        let out = run(&[
            "report",
            "--run-dir",
            d.to_str().unwrap(),
            "--format",
            "json",
            "--canonical",
        ]);
        let mut json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        json.as_object_mut().unwrap().remove("config").expect("config snapshot");
        json
    };
    assert_eq!(results(&a), results(&b));
}

#[test]
fn stored_config_loads_from_another_directory() {
    let tmp = tempfile::tempdir().unwrap();
    planted(tmp.path(), 0);
    let first = bin()
        .current_dir(tmp.path())
        .args([
            "ingest",
            "--mock-backends",
            "--run-dir",
            "run",
            "--set",
            "dataset.path=\"data.jsonl\"",
        ])
        .output()
        .unwrap();
    assert!(first.status.success(), "{}", stderr(&first));
    let stored = tmp.path().join("run").join("config.toml");
    let again = run(&[
        "ingest",
        "--config",
        stored.to_str().unwrap(),
        "--run-dir",
        tmp.path().join("again").to_str().unwrap(),
    ]);
    assert!(again.status.success(), "{}", stderr(&again));
}

#[test]
fn missing_dataset_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let out = run(&[
        "ingest",
        "--mock-backends",
        "--run-dir",
        dir.to_str().unwrap(),
        "--set",
        &data_set(&tmp.path().join("absent.jsonl")),
    ]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    assert!(stderr(&out).contains("absent.jsonl"), "{}", stderr(&out));
}
