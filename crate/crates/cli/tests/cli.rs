use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data(name: &str) -> PathBuf {
    [env!("CARGO_MANIFEST_DIR"), "..", "..", "data", name].iter().collect()
}

fn apstream(args: &[&str], envs: &[(&str, &Path)], cwd: &Path) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_apstream"));
    cmd.args(args).current_dir(cwd).env_remove("APSTREAM_OUTPUT_DIR");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn iris_run(dir: &Path, extra: &[&str]) -> Output {
    let iris = data("iris.csv");
    let mut args = vec!["run", "--dataset", iris.to_str().unwrap(), "--seeds", "2", "--steps", "3"];
    args.extend_from_slice(extra);
    apstream(&args, &[], dir)
}

#[test]
fn run_writes_every_result_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = iris_run(dir.path(), &["--output-dir", "res"]);
    ok(&out);
    for f in ["records.csv", "timings.csv", "medians.csv", "labels.csv", "events.jsonl", "schedules.jsonl", "series.json"] {
        assert!(dir.path().join("res").join(f).is_file(), "missing {f}");
    }
    let records = fs::read_to_string(dir.path().join("res/records.csv")).unwrap();
    // header + 2 seeds x 3 algorithms x 3 steps
    assert_eq!(records.lines().count(), 1 + 18);
    assert!(String::from_utf8_lossy(&out.stdout).contains("app"));
}

#[test]
fn config_file_supplies_options_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    fs::write(
        &cfg,
        format!(
            "dataset = {:?}\nalgorithms = [\"app\"]\nseeds = [4, 5, 6]\nsteps = 3\nth_gamma = \"inf\"\ndamping = 0.8\noutput_dir = \"from-file\"\n",
            data("iris.csv")
        ),
    )
    .unwrap();
    ok(&apstream(&["run", "--config", cfg.to_str().unwrap(), "--seeds", "9"], &[], dir.path()));
    let records = fs::read_to_string(dir.path().join("from-file/records.csv")).unwrap();
    assert_eq!(records.lines().count(), 1 + 9 * 3);
    assert!(records.lines().skip(1).all(|l| l.split(',').nth(1) == Some("app")));
}

#[test]
fn environment_overrides_output_dir_only() {
    let dir = tempfile::tempdir().unwrap();
    let env_dir = dir.path().join("env-out");
    let iris = data("iris.csv");
    let args = ["run", "--dataset", iris.to_str().unwrap(), "--seeds", "1", "--steps", "2", "--algorithm", "ap"];
    ok(&apstream(&args, &[("APSTREAM_OUTPUT_DIR", &env_dir)], dir.path()));
    assert!(env_dir.join("records.csv").is_file());

    let flag_dir = dir.path().join("flag-out");
    let mut with_flag = args.to_vec();
    with_flag.extend(["--output-dir", flag_dir.to_str().unwrap()]);
    fs::remove_dir_all(&env_dir).unwrap();
    ok(&apstream(&with_flag, &[("APSTREAM_OUTPUT_DIR", &env_dir)], dir.path()));
    assert!(flag_dir.join("records.csv").is_file());
    assert!(!env_dir.exists());
}

#[test]
fn aggregate_reproduces_medians() {
    let dir = tempfile::tempdir().unwrap();
    ok(&iris_run(dir.path(), &["--output-dir", "res"]));
    let original = fs::read(dir.path().join("res/medians.csv")).unwrap();
    ok(&apstream(&["aggregate", "--input", "res", "--output", "again.csv"], &[], dir.path()));
    assert_eq!(fs::read(dir.path().join("again.csv")).unwrap(), original);
}

#[test]
fn replayed_schedules_reproduce_records() {
    let dir = tempfile::tempdir().unwrap();
    ok(&iris_run(dir.path(), &["--output-dir", "a", "--setting", "variable"]));
    ok(&iris_run(
        dir.path(),
        &["--output-dir", "b", "--setting", "variable", "--schedule-file", "a/schedules.jsonl"],
    ));
    for f in ["records.csv", "events.jsonl", "labels.csv"] {
        assert_eq!(fs::read(dir.path().join("a").join(f)).unwrap(), fs::read(dir.path().join("b").join(f)).unwrap());
    }
}

#[test]
fn validate_schedule_accepts_generated_and_rejects_tampered() {
    let dir = tempfile::tempdir().unwrap();
    ok(&iris_run(dir.path(), &["--output-dir", "res", "--setting", "variable", "--algorithm", "app"]));
    let iris = data("iris.csv");
    let args = ["validate-schedule", "--dataset", iris.to_str().unwrap(), "--schedules", "res/schedules.jsonl"];
    let out = apstream(&args, &[], dir.path());
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains("0 with violations"));

    let path = dir.path().join("res/schedules.jsonl");
    let text = fs::read_to_string(&path).unwrap();
    fs::write(&path, repeat_object(text.lines().next().unwrap())).unwrap();
    let out = apstream(&args, &[], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_inputs_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = apstream(&["run", "--seeds", "1"], &[], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no dataset"));

    let out = apstream(&["run", "--dataset", "nope.csv"], &[], dir.path());
    assert_eq!(out.status.code(), Some(2));

    let out = iris_run(dir.path(), &["--damping", "1.2"]);
    assert_eq!(out.status.code(), Some(2));
}

/// Copies the first object of the second batch into the first batch of a
/// schedules.jsonl line.
fn repeat_object(line: &str) -> String {
    let mut s = line.to_string();
    let start = s.find("\"batches\":[[").unwrap() + "\"batches\":[[".len();
    let second = s[start..].find("],[").unwrap() + start + 3;
    let end = s[second..].find([',', ']']).unwrap() + second;
    let obj = s[second..end].to_string();
    s.insert_str(start, &format!("{obj},"));
    s
}
