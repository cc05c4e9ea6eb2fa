use std::path::Path;
use std::process::{Command, Output};

const HEADER: &str = "sweep_var,sweep_value,detector,trial,seed,iters,converged,nmse,pfa,pmd,runtime_ms,status";

const SMALL: &str = "n_users = 300\npilot_len = 150\nn_antennas = 8\nmax_iters = 15\n";

fn ampdet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ampdet")).current_dir(dir).args(args).arg("--quiet").output().unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    dir
}

#[test]
fn run_writes_header_trials_and_aggregates() {
    let dir = setup();
    let out = ampdet(dir.path(), &["run", "-c", "small.toml", "--trials", "2", "--detectors", "gst,ht", "-o", "r.csv"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], HEADER);
    assert_eq!(lines.len(), 1 + 2 * 3);
    assert_eq!(lines.iter().filter(|l| l.split(',').nth(3) == Some("-1")).count(), 2);
}

#[test]
fn flags_override_the_config_file() {
    let dir = setup();
    let out = ampdet(dir.path(), &["config", "-c", "small.toml", "--set", "n_antennas=16", "--seed", "42"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().any(|l| l == "n_antennas = 16"), "{text}");
    assert!(text.lines().any(|l| l == "seed = 42"));
    assert!(text.lines().any(|l| l == "pilot_len = 150"));
}

#[test]
fn sweep_produces_one_block_per_value() {
    let dir = setup();
    let out = ampdet(
        dir.path(),
        &["sweep", "-c", "small.toml", "--var", "snr_db", "--values", "10,30", "--trials", "1", "--detectors", "gst", "-o", "s.csv"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("s.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 2);
    assert!(text.lines().skip(1).all(|l| l.starts_with("snr_db,")));
}

#[test]
fn generate_then_se_on_saved_scenario() {
    let dir = setup();
    let g = ampdet(dir.path(), &["generate", "-c", "small.toml", "-o", "s.bin"]);
    assert!(g.status.success());
    let se = ampdet(dir.path(), &["se", "-c", "small.toml", "--scenario", "s.bin", "--detectors", "gst", "-o", "se.csv"]);
    assert!(se.status.success(), "{}", String::from_utf8_lossy(&se.stderr));
    let text = std::fs::read_to_string(dir.path().join("se.csv")).unwrap();
    assert!(text.starts_with("sweep_var,sweep_value,detector,trial,iteration,trace_theta,predicted_nmse,empirical_nmse"));
    assert!(text.lines().count() > 2);
}

#[test]
fn identical_invocations_give_identical_csv() {
    let dir = setup();
    for name in ["a.csv", "b.csv"] {
        let out = ampdet(dir.path(), &["run", "-c", "small.toml", "--trials", "2", "--detectors", "ht", "-o", name]);
        assert!(out.status.success());
    }
    let read = |n: &str| std::fs::read(dir.path().join(n)).unwrap();
    assert_eq!(read("a.csv"), read("b.csv"));
}

#[test]
fn errors_map_to_nonzero_exit_codes() {
    let dir = setup();
    std::fs::write(dir.path().join("bad.toml"), "no_such_key = 1\n").unwrap();
    assert_eq!(ampdet(dir.path(), &["run", "-c", "bad.toml"]).status.code(), Some(2));
    assert_eq!(ampdet(dir.path(), &["run", "-c", "missing.toml"]).status.code(), Some(3));
    assert_eq!(ampdet(dir.path(), &["run", "-c", "small.toml", "--set", "n_antennas=0"]).status.code(), Some(2));
    assert_eq!(ampdet(dir.path(), &["se", "-c", "small.toml", "--scenario", "missing.bin"]).status.code(), Some(3));
    assert_ne!(ampdet(dir.path(), &["bogus"]).status.code(), Some(0));
}
