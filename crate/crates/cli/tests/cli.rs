use std::fs;
use std::path::Path;
use std::process::Command as Proc;

use nlhom_cli::{parse_config, run, CliError, Command, Threads};

const MINIMAL: &str = r#"
command = "verify-kernel"

[kernel]
family = "indicator-ball"
d = 3
p = 2.0
"#;

fn config_err(text: &str) -> String {
    match parse_config(text) {
        Err(CliError::Config(m)) => m,
        other => panic!("expected a configuration error, got {other:?}"),
    }
}

#[test]
fn minimal_document_gets_defaults() {
    let cfg = parse_config(MINIMAL).unwrap();
    assert_eq!(cfg.command, Command::VerifyKernel);
    assert_eq!(cfg.kernel.m, 1);
    assert_eq!(cfg.solver.tol, 1e-6);
    assert_eq!(cfg.solver.memory, 8);
    assert_eq!(cfg.geometry.resolution, 4.0);
    assert_eq!(cfg.threads, Threads::Auto);
    assert_eq!(cfg.seed, 0);
    assert!(!cfg.deterministic);

    // the echo names every effective value and parses back to the same config
    let echo = toml::to_string(&cfg).unwrap();
    for key in ["tol", "max_iter", "memory", "resolution", "h_over_r", "corpus_size", "threads", "samples", "output"] {
        assert!(echo.contains(key), "echo lacks {key}:\n{echo}");
    }
    assert_eq!(parse_config(&echo).unwrap(), cfg);
}

#[test]
fn unknown_keys_are_errors() {
    let m = config_err(&format!("{MINIMAL}\nrho_typo = 1.0\n"));
    assert!(m.contains("rho_typo"), "{m}");
    let m = config_err(&MINIMAL.replace("command", "comand"));
    assert!(m.contains("comand"), "{m}");
}

#[test]
fn exponent_at_or_above_dimension_is_rejected() {
    for p in ["3.0", "4.5", "1.0"] {
        let m = config_err(&MINIMAL.replace("p = 2.0", &format!("p = {p}")));
        assert!(m.contains("(1, d)"), "{m}");
    }
}

#[test]
fn malformed_list_reports_line() {
    let text = format!("{MINIMAL}\n[schedules]\neps = [0.1, 0.2,\nr = 3\n");
    let m = config_err(&text);
    assert!(m.contains("line"), "{m}");
}

#[test]
fn empty_schedule_is_rejected() {
    let text = MINIMAL.replace("verify-kernel", "phi") + "\n[geometry]\nh = 0.25\n[schedules]\nr = [3.0]\n";
    let m = config_err(&text);
    assert!(m.contains("`z`"), "{m}");
}

#[test]
fn threads_accepts_auto_or_count() {
    assert_eq!(parse_config(&format!("threads = 3\n{MINIMAL}")).unwrap().threads, Threads::Count(3));
    assert_eq!(parse_config(&format!("threads = \"auto\"\n{MINIMAL}")).unwrap().threads, Threads::Auto);
    config_err(&format!("threads = 0\n{MINIMAL}"));
    config_err(&format!("threads = \"many\"\n{MINIMAL}"));
}

fn with_output(text: &str, dir: &Path) -> String {
    format!("output = {:?}\n{text}", dir.to_str().unwrap())
}

#[test]
fn verify_kernel_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = parse_config(&with_output(&format!("samples = 200\n{MINIMAL}"), dir.path())).unwrap();
    let s = run(&cfg).unwrap();
    assert_eq!(s.status, 0);
    let csv = fs::read_to_string(dir.path().join("assumptions.csv")).unwrap();
    assert!(csv.starts_with("kernel,d,m,p,samples,seed,"));
    assert!(csv.lines().nth(1).unwrap().starts_with("indicator-ball,3,1,2,200,0,"));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], 0);
    assert_eq!(manifest["config"]["kernel"]["family"], "indicator-ball");
    assert_eq!(manifest["invariants"][0]["name"], "kernel_assumptions");
}

#[test]
fn phi_at_zero_is_a_zero_table() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"
command = "phi"
[kernel]
family = "normalized-isotropic"
d = 3
p = 2.0
[geometry]
h = 0.25
[schedules]
z = [[0.0]]
r = [3.0, 4.0]
"#;
    let s = run(&parse_config(&with_output(text, dir.path())).unwrap()).unwrap();
    assert_eq!(s.status, 0);
    let mut rdr = csv::Reader::from_path(dir.path().join("phi.csv")).unwrap();
    let mut n = 0;
    for rec in rdr.records() {
        let rec = rec.unwrap();
        assert_eq!(rec[0].to_string(), "0");
        assert_eq!(rec[3].parse::<f64>().unwrap(), 0.0);
        n += 1;
    }
    assert_eq!(n, 2);
}

#[test]
fn regime_sweep_matches_table() {
    let dir = tempfile::tempdir().unwrap();
    let text = MINIMAL.replace("verify-kernel", "regime-sweep");
    let s = run(&parse_config(&with_output(&text, dir.path())).unwrap()).unwrap();
    assert_eq!(s.status, 0);
    let csv = fs::read_to_string(dir.path().join("regimes.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",true")));
}

#[test]
fn invariant_violation_exits_one() {
    // two points cannot establish the negligibility bound
    let dir = tempfile::tempdir().unwrap();
    let text = r#"
command = "negligibility"
[kernel]
family = "indicator-ball"
d = 2
p = 1.5
c = 1.0
rho = 1.0
[law]
c_delta = 1.0
a = 0.2857142857142857
c_r = 0.125
b = 4.0
[geometry]
half = 0.51171875
[schedules]
eps = [0.0078125]
"#;
    let s = run(&parse_config(&with_output(text, dir.path())).unwrap()).unwrap();
    assert_eq!(s.status, 1);
    let manifest = fs::read_to_string(dir.path().join("manifest.json")).unwrap();
    assert!(manifest.contains("negligibility_bound[one]"));
}

fn nlhom() -> Proc {
    Proc::new(env!("CARGO_BIN_EXE_nlhom"))
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.toml");
    fs::write(&good, format!("samples = 100\n{MINIMAL}")).unwrap();
    let out = dir.path().join("out");
    let st = nlhom().arg("--config").arg(&good).arg("--output").arg(&out).status().unwrap();
    assert_eq!(st.code(), Some(0));
    assert!(out.join("manifest.json").exists());

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, MINIMAL.replace("p = 2.0", "p = 3.0")).unwrap();
    let o = nlhom().arg("--config").arg(&bad).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("(1, d)"));

    let missing = nlhom().arg("--output").arg(&out).output().unwrap();
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn solver_failure_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("c.toml");
    let text = r#"
command = "phi"
[kernel]
family = "normalized-isotropic"
d = 3
p = 2.0
[geometry]
h = 0.25
[solver]
max_iter = 1
tol = 1e-12
[schedules]
z = [[1.0]]
r = [3.0]
"#;
    fs::write(&cfg_path, text).unwrap();
    let st = nlhom().arg("--config").arg(&cfg_path).arg("--output").arg(dir.path().join("o")).status().unwrap();
    assert_eq!(st.code(), Some(3));
}

#[test]
fn overrides_reach_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("c.toml");
    fs::write(&cfg_path, format!("samples = 100\n{MINIMAL}")).unwrap();
    let out = dir.path().join("o");
    let st = nlhom()
        .args(["--seed", "11", "--threads", "2", "--deterministic", "--config"])
        .arg(&cfg_path)
        .arg("--output")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(0));
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], 11);
    assert_eq!(m["threads"], 2);
    assert_eq!(m["deterministic"], true);
    let csv = fs::read_to_string(out.join("assumptions.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().contains(",100,11,"));
}
