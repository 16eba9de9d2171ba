use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn dynmech(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dynmech"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn field(out: &Output, name: &str) -> f64 {
    stdout(out)
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{name}: ")))
        .unwrap_or_else(|| panic!("no `{name}` in {}", stdout(out)))
        .parse()
        .unwrap()
}

fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        stdout(&out),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn solve_round_trip_through_files() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(dynmech(d, &["--seed", "5", "gen", "random", "--T", "2", "--S", "2", "--A", "2", "--eta", "-0.5", "--out", "env.json"]));
    ok(dynmech(d, &["validate", "--env", "env.json"]));
    let solved = ok(dynmech(d, &["solve", "--env", "env.json", "--ir", "none", "--payments", "none", "--out", "m.json"]));
    let value = field(&solved, "value");

    let eval = ok(dynmech(d, &["evaluate", "--env", "env.json", "--mech", "m.json"]));
    assert!((field(&eval, "principal_value") - value).abs() < 1e-8);
    let ic = ok(dynmech(d, &["check-ic", "--env", "env.json", "--mech", "m.json"]));
    assert_eq!(stdout(&ic).trim(), "IC");

    let br = ok(dynmech(d, &["best-response", "--env", "env.json", "--mech", "m.json", "--strategy-out", "s.json"]));
    assert!((field(&br, "principal_value") - value).abs() < 1e-8);
    let strategy: serde_json::Map<String, serde_json::Value> =
        serde_json::from_str(&std::fs::read_to_string(d.join("s.json")).unwrap()).unwrap();
    // (1 + |S||A|) histories times |S| states
    assert_eq!(strategy.len(), 10);
    assert_eq!(strategy["s0,a1#s1"], "s1");
}

#[test]
fn myopic_solver_writes_succinct_mechanism() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(dynmech(d, &["gen", "random", "--T", "3", "--S", "2", "--A", "2", "--out", "env.json"]));
    let out = ok(dynmech(d, &["solve-myopic", "--env", "env.json", "--out", "m.json"]));
    let mech: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("m.json")).unwrap()).unwrap();
    assert_eq!(mech["repr"], "succinct");
    assert!(mech["policy"].as_object().unwrap().contains_key("t=2,sp=s0,ap=a1,s=s1"));
    let value = field(&out, "value");
    let ic = ok(dynmech(d, &["check-ic", "--env", "env.json", "--mech", "m.json", "--agent", "myopic"]));
    assert_eq!(stdout(&ic).trim(), "IC");
    let eval = ok(dynmech(d, &["evaluate", "--env", "env.json", "--mech", "m.json"]));
    assert!((field(&eval, "principal_value") - value).abs() < 1e-8);
}

#[test]
fn values_print_at_nine_significant_digits() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(dynmech(d, &["gen", "random", "--T", "2", "--S", "3", "--A", "2", "--out", "env.json"]));
    let out = ok(dynmech(d, &["solve", "--env", "env.json"]));
    let text = stdout(&out);
    let raw = text.lines().next().unwrap().strip_prefix("value: ").unwrap();
    let digits = raw.chars().filter(|c| c.is_ascii_digit()).collect::<String>();
    assert!(digits.trim_start_matches('0').len() <= 9, "{raw}");
}

#[test]
fn maxsat_from_dimacs() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    // x1 or x2, not x1, not x2: at most two of three clauses hold
    std::fs::write(d.join("f.cnf"), "c tiny\np cnf 2 3\n1 2 0\n-1 0\n-2 0\n").unwrap();
    ok(dynmech(d, &["gen", "maxsat", "--cnf", "f.cnf", "--out", "env.json"]));
    let out = ok(dynmech(d, &["solve", "--env", "env.json", "--ir", "none", "--payments", "none"]));
    assert!((field(&out, "value") - 2.0 / 3.0).abs() < 1e-6);
}

#[test]
fn memoryless_gap_reference_mechanisms() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(dynmech(d, &["gen", "memoryless-gap", "--n", "3", "--kind", "myopic", "--out", "env.json", "--mech-out", "ref.json"]));
    let ic = ok(dynmech(d, &["check-ic", "--env", "env.json", "--mech", "ref.json", "--agent", "myopic"]));
    assert_eq!(stdout(&ic).trim(), "IC");
    let out = ok(dynmech(d, &["solve-myopic", "--env", "env.json", "--ir", "none", "--payments", "none"]));
    assert!((field(&out, "value") - 1.0).abs() < 1e-6);

    // the patient reference lets the last type gain by misreporting
    ok(dynmech(d, &["gen", "memoryless-gap", "--n", "2", "--kind", "patient", "--out", "p.json", "--mech-out", "pref.json"]));
    let ic = ok(dynmech(d, &["check-ic", "--env", "p.json", "--mech", "pref.json"]));
    assert!(stdout(&ic).starts_with("not IC: gain 1\n"), "{}", stdout(&ic));
}

#[test]
fn experiment_is_reproducible_and_plots() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let args = |out: &'static str| {
        vec!["--seed", "11", "experiment", "--axis", "eta", "--values", "-1,1", "--seeds", "3", "--out", out]
    };
    ok(dynmech(d, &[args("a.csv"), vec!["--plot", "a.svg"]].concat()));
    ok(dynmech(d, &args("b.csv")));
    let a = std::fs::read(d.join("a.csv")).unwrap();
    assert_eq!(a, std::fs::read(d.join("b.csv")).unwrap());
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("eta,T,S,A,combo,seed,raw,normalized\n"));
    // 2 axis values x 5 combinations x 3 seeds
    assert_eq!(text.lines().count(), 1 + 30);

    let svg = std::fs::read_to_string(d.join("a.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("patient/patient"));
    ok(dynmech(d, &["plot", "--csv", "a.csv", "--axis", "eta", "--out", "again.svg"]));
    assert_eq!(std::fs::read_to_string(d.join("again.svg")).unwrap(), svg);
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    std::fs::write(d.join("bad.json"), r#"{"T": 1, "S": ["s"], "A": ["a"], "P0": [0.5], "P": [[[[1.0]]]], "vP": [[[0.0]]], "vA": [[[0.0]]]}"#).unwrap();
    assert_eq!(dynmech(d, &["validate", "--env", "bad.json"]).status.code(), Some(2));
    assert_eq!(dynmech(d, &["solve", "--env", "nowhere.json"]).status.code(), Some(4));
    assert_eq!(dynmech(d, &["frobnicate"]).status.code(), Some(2));

    // negative agent values with dynamic IR and no payments: nothing is feasible
    ok(dynmech(d, &["gen", "random", "--T", "1", "--S", "2", "--A", "2", "--eta", "-1", "--out", "env.json"]));
    assert_eq!(dynmech(d, &["solve", "--env", "env.json", "--payments", "interval:1:0"]).status.code(), Some(2));
    let out = dynmech(d, &["solve", "--env", "env.json", "--ir", "dynamic", "--payments", "none"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("infeasible"));

    std::fs::write(d.join("rows.csv"), "eta,T,S,A,combo,seed,raw,normalized\n0,2,2,2,naive/naive,0,x,1\n").unwrap();
    let out = dynmech(d, &["plot", "--csv", "rows.csv", "--axis", "eta", "--out", "p.svg"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}
