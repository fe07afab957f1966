use std::path::Path;
use std::process::{Command, Output};

use gpipris_core::scenario::SystemConfig;

fn gpipris(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gpipris")).args(args).output().unwrap()
}

fn write_small_config(dir: &Path) {
    let mut c = SystemConfig::default().with_ris_elems(2, 2);
    c.n_bs_antennas = 4;
    c.n_users = 2;
    c.ul_train_len = 8;
    std::fs::write(dir.join("small.json"), serde_json::to_string_pretty(&c).unwrap()).unwrap();
}

fn write_spec(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_writes_csv_and_refuses_duplicates() {
    let dir = tempfile::tempdir().unwrap();
    write_small_config(dir.path());
    let spec = write_spec(
        dir.path(),
        "power.json",
        r#"{"kind": "power_sweep", "sweep_values": [0, 20], "n_seeds": 2,
            "base_config": "small.json", "output_path": "out/power.csv",
            "settings": {"outer_max_iters": 4}}"#,
    );
    let out = dir.path().join("out").join("power.csv");
    let out_s = out.to_str().unwrap();

    let o = gpipris(&["run", &spec, "--out", out_s, "--threads", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("gpi_pris"));
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 2 * 3);
    assert!(out.with_extension("jsonl").exists());

    let o = gpipris(&["run", &spec, "--out", out_s]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("duplicate"));
    assert_eq!(std::fs::read_to_string(&out).unwrap(), text);

    let o = gpipris(&["run", &spec, "--out", out_s, "--seed", "1000"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 1 + 2 * 2 * 2 * 3);
}

#[test]
fn spec_output_path_is_used_without_override() {
    let dir = tempfile::tempdir().unwrap();
    write_small_config(dir.path());
    let target = dir.path().join("res").join("mu.csv");
    let spec = write_spec(
        dir.path(),
        "mu.json",
        &format!(
            r#"{{"kind": "mu_study", "sweep_values": [0, 10], "n_seeds": 1,
                "base_config": "small.json", "output_path": {:?}}}"#,
            target.to_str().unwrap()
        ),
    );
    let o = gpipris(&["run", &spec]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(&target).unwrap().lines().count(), 1 + 2);
}

#[test]
fn validate_accepts_configs_and_specs() {
    let dir = tempfile::tempdir().unwrap();
    write_small_config(dir.path());
    let o = gpipris(&["validate", dir.path().join("small.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("N=4 K=2"));

    let spec = write_spec(
        dir.path(),
        "s.json",
        r#"{"kind": "csit_sweep", "sweep_values": [-10, 0], "n_seeds": 3,
            "base_config": "small.json", "output_path": "x.csv"}"#,
    );
    let o = gpipris(&["validate", &spec]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("csit_sweep"));
}

#[test]
fn shipped_configs_validate() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut paths: Vec<_> = std::fs::read_dir(&root).unwrap().map(|e| e.unwrap().path()).collect();
    paths.extend(std::fs::read_dir(root.join("specs")).unwrap().map(|e| e.unwrap().path()));
    let paths: Vec<_> = paths.into_iter().filter(|p| p.extension().is_some_and(|e| e == "json")).collect();
    assert!(paths.len() >= 10);
    for p in paths {
        let o = gpipris(&["validate", p.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}: {}", p.display(), stderr(&o));
    }
}

#[test]
fn malformed_input_exits_two_with_position() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\n  \"n_users\": 4,\n  \"n_bs_antennas\": oops\n}\n").unwrap();
    let o = gpipris(&["validate", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bad.json:3:"), "{}", stderr(&o));

    write_small_config(dir.path());
    let spec = write_spec(
        dir.path(),
        "unknown.json",
        r#"{"kind": "power_sweep", "sweep_values": [0], "n_seeds": 1, "colour": 3,
            "base_config": "small.json", "output_path": "x.csv"}"#,
    );
    let o = gpipris(&["run", &spec]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("colour"));

    let spec = write_spec(
        dir.path(),
        "empty.json",
        r#"{"kind": "power_sweep", "sweep_values": [], "n_seeds": 1,
            "base_config": "small.json", "output_path": "x.csv"}"#,
    );
    let o = gpipris(&["run", &spec]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!dir.path().join("x.csv").exists());

    let o = gpipris(&["run", dir.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bench_prints_table_and_flags_single_repetition() {
    let dir = tempfile::tempdir().unwrap();
    write_small_config(dir.path());
    let spec = write_spec(
        dir.path(),
        "bench.json",
        r#"{"kind": "bench", "sweep_values": [1, 2, 4], "m_total": 8, "n_seeds": 1,
            "repetitions": 1, "base_config": "small.json", "output_path": "bench.csv",
            "settings": {"ris": {"tol": 1e-6, "max_iters": 3}}}"#,
    );
    let out = dir.path().join("bench.csv");
    let out_s = out.to_str().unwrap();
    let o = gpipris(&["bench", &spec, "--out", out_s]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s = stdout(&o);
    assert_eq!(s.matches("(low confidence)").count(), 3);
    assert!(s.contains("slope"));
    let csv = std::fs::read_to_string(&out).unwrap();
    assert_eq!(csv.lines().count(), 4);

    // reruns replace the timing table
    let o = gpipris(&["bench", &spec, "--out", out_s]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 4);
}

#[test]
fn failed_points_are_recorded_and_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    write_small_config(dir.path());
    let spec = write_spec(
        dir.path(),
        "csit.json",
        r#"{"kind": "csit_sweep", "sweep_values": [-400, 10], "n_seeds": 1,
            "base_config": "small.json", "output_path": "csit.csv"}"#,
    );
    let out = dir.path().join("csit.csv");
    let o = gpipris(&["run", &spec, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("sweep -400"));
    let mut reader = csv::Reader::from_path(&out).unwrap();
    let errors: Vec<String> = reader.records().map(|r| r.unwrap()[15].to_string()).collect();
    assert_eq!(errors.len(), 6);
    assert!(errors[..3].iter().all(|e| !e.is_empty()));
    assert!(errors[3..].iter().all(|e| e.is_empty()));
}
