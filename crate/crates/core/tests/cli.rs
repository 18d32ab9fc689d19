use std::path::Path;
use std::process::{Command, Output};

const SPEC: &str = r#"{"schema":"mmconc/problem/v1","chain":{"matrix":[[0.7,0.2,0.1],[0.3,0.5,0.2],[0.2,0.3,0.5]]},"observable":{"random_seed_based":{"seed":7,"d":2}},"n":6,"mode":"bernstein","phi":0.3}"#;

fn mmconc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmconc")).args(args).output().expect("binary runs")
}

fn write_spec(dir: &Path, body: &str) -> String {
    let path = dir.join("spec.json");
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn simulate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), SPEC);
    let csv = |k: usize| dir.path().join(format!("out{k}.csv")).to_str().unwrap().to_string();
    let run = |k: usize, seed: &str| {
        mmconc(&["simulate", "--spec", &spec, "--trials", "2000", "--seed", seed, "--json", "--csv", &csv(k)])
    };
    let (a, b, c) = (run(0, "5"), run(1, "5"), run(2, "6"));
    for o in [&a, &b, &c] {
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(a.stdout, b.stdout);
    assert_ne!(a.stdout, c.stdout);
    let (ca, cb) = (std::fs::read(csv(0)).unwrap(), std::fs::read(csv(1)).unwrap());
    assert_eq!(ca, cb);
    let header = String::from_utf8(ca).unwrap().lines().next().unwrap().to_string();
    assert_eq!(header, "quantity,n,theta,phi,point,ci_low,ci_high,trials,seed,t");
    let json: serde_json::Value = serde_json::from_slice(&a.stdout).unwrap();
    assert!(json.is_object());
}

#[test]
fn bound_and_exact_succeed() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), SPEC);
    for cmd in ["bound", "exact"] {
        let o = mmconc(&[cmd, "--spec", &spec]);
        assert_eq!(o.status.code(), Some(0), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!o.stdout.is_empty());
    }
    let o = mmconc(&["exact", "--spec", &spec, "--oracle", "--theta-grid", "0:1:3", "--json"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn bad_specs_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    assert_eq!(mmconc(&["bound", "--spec", missing.to_str().unwrap()]).status.code(), Some(2));
    let not_stochastic = SPEC.replace("[0.7,0.2,0.1]", "[0.7,0.2,0.2]");
    assert_eq!(mmconc(&["bound", "--spec", &write_spec(dir.path(), &not_stochastic)]).status.code(), Some(2));
    assert_eq!(mmconc(&["bound", "--spec", &write_spec(dir.path(), "{")]).status.code(), Some(2));
    assert_eq!(mmconc(&["bound"]).status.code(), Some(2));
}

#[test]
fn verify_passes_and_catches_injected_fault() {
    let ok = mmconc(&["verify", "--suite-size", "3", "--trials", "500", "--seed", "1"]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    let bad = mmconc(&["verify", "--suite-size", "3", "--trials", "500", "--seed", "1", "--inject-fault", "hoeffding.mgf"]);
    assert_eq!(bad.status.code(), Some(3));
}
