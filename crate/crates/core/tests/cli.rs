use std::process::Command;

fn weaktm(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_weaktm"))
        .args(args)
        .output()
        .expect("binary runs")
}

#[test]
fn unknown_override_is_a_config_error() {
    let out = weaktm(&["config", "--no-such-key", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_key"));
}

#[test]
fn invalid_value_names_the_field() {
    let out = weaktm(&["config", "--tau", "-1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("tau"));
    let out = weaktm(&["config", "--record-stride", "7"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("record_stride"));
}

#[test]
fn config_file_syntax_error_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("run.cfg");
    std::fs::write(&p, "# comment\ntau = 0.5\nthis line is wrong\n").unwrap();
    let out = weaktm(&["config", "--config", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
}

#[test]
fn config_file_then_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("run.cfg");
    std::fs::write(&p, "m = 10\nn_steps = 1e5 # short\n").unwrap();
    let out = weaktm(&["config", "--config", p.to_str().unwrap(), "--m=20"]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["m"], 20);
    assert_eq!(v["n_steps"], 100_000);
}

#[test]
fn io_failure_exits_with_runtime_code() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let target = blocker.join("sub");
    let out = weaktm(&["oracle", "--oracle-trials", "5", "--output", target.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn oracle_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = weaktm(&["oracle", "--oracle-trials", "50", "--output", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("oracle.json")).unwrap()).unwrap();
    assert_eq!(v["trials"], 50);
    assert_eq!(v["violations_eigen"], 0);
    assert_eq!(v["config"]["oracle_trials"], 50);
}
