use std::process::{Command, Output};

fn probshield(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_probshield")).args(args).env("PROBSHIELD_THREADS", "2").output().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn check_prints_chain_values() {
    let out = probshield(&["check", "--fixture", "chain", "--exact"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("0,s0,1/10,271/1000"), "{text}");
    assert!(text.contains("1,s1,1/10,19/100"), "{text}");
}

#[test]
fn same_seed_gives_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let path = dir.path().join(name);
        let out = probshield(&[
            "simulate", "--fixture", "chain", "--shield", "pess", "--nu", "0.2", "--steps", "3000", "--seed", "9",
            "--csv", path.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read(path).unwrap()
    };
    let first = run("a.csv");
    assert!(!first.is_empty());
    assert_eq!(first, run("b.csv"));
}

#[test]
fn threshold_below_minimum_is_a_precondition_error() {
    let out = probshield(&["evaluate", "--fixture", "chain", "--nu", "0.01", "--shield", "pess"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("precondition"));
}

#[test]
fn unknown_shield_is_rejected() {
    let out = probshield(&["evaluate", "--fixture", "fork", "--shield", "bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown shield kind"));
}

#[test]
fn offline_shield_from_a_log_file() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("pairs.log");
    let dump = dir.path().join("shield.txt");
    let out = probshield(&["simulate", "--fixture", "chain", "--shield", "none", "--steps", "400", "--log", log.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = probshield(&[
        "construct-offline", "--fixture", "chain", "--exact", "--nu", "0.15", "--log", log.to_str().unwrap(),
        "--dump-shield", dump.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(std::fs::read_to_string(&dump).unwrap().starts_with("shield trie"));
    let out = probshield(&["evaluate", "--fixture", "chain", "--exact", "--nu", "0.15", "--shield", "offline", "--log", log.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn small_verify_run_passes() {
    let out = probshield(&["verify", "--random-models", "4", "--stochastic", "40"]);
    assert!(out.status.success(), "{}", stdout(&out));
    assert!(stdout(&out).contains("pess,P-"));
}

#[test]
fn demos_confirm() {
    assert!(probshield(&["demo-per-step-unsafe"]).status.success());
    assert!(probshield(&["demo-impossibility", "--nu", "0.3", "--exact"]).status.success());
}
