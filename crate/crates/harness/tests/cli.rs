use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_mkdv-lab");

const SMALL: &str = r#"
[geometry]
n = 32

[corpus]
size = 3

[flow]
dt = 1e-4
t_final = 1e-3
save_every = 5

[probes]
kappas = [4.0, 8.0]
varkappa = 6.0
"#;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).current_dir(dir).args(args).output().expect("binary runs")
}

fn with_config(body: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("exp.toml"), body).unwrap();
    dir
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn verify_writes_results_with_provenance() {
    let dir = with_config(SMALL);
    let o = run(dir.path(), &["verify", "--config", "exp.toml", "--out", "res", "--jobs", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("res/verify_results.csv")).unwrap();
    assert!(csv.starts_with("# mkdv-lab"));
    assert!(csv.contains("config_hash="));
    assert!(csv.contains("experiment,params,metric,value,tolerance,bound,pass,version,config_hash"));
    assert!(csv.contains("identity_residual"));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("res/verify_report.json")).unwrap()).unwrap();
    assert_eq!(json["provenance"]["subcommand"], "verify");
    assert!(json["report"]["rows"].as_array().unwrap().iter().all(|r| r["pass"] == true));
}

#[test]
fn outputs_are_deterministic() {
    let dir = with_config(SMALL);
    for out in ["a", "b"] {
        let o = run(dir.path(), &["equicontinuity", "--config", "exp.toml", "--out", out, "--seed", "5", "--jobs", "3"]);
        assert!(o.status.code().is_some());
    }
    let mut names: Vec<_> = std::fs::read_dir(dir.path().join("a")).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() >= 4);
    for f in names {
        let a = std::fs::read(dir.path().join("a").join(&f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(&f)).unwrap();
        assert_eq!(a, b, "{f:?}");
    }
}

#[test]
fn every_subcommand_runs() {
    let dir = with_config(SMALL);
    for cmd in ["evolve", "invert-r", "gauge-check", "sweep-kappa"] {
        let o = run(dir.path(), &[cmd, "--config", "exp.toml", "--out", "o"]);
        assert_eq!(o.status.code(), Some(0), "{cmd}: {}{}", stdout(&o), String::from_utf8_lossy(&o.stderr));
        assert!(stdout(&o).contains("PASS"));
    }
    assert!(dir.path().join("o/evolve_snapshots.dat").exists());
    assert!(dir.path().join("o/evolve_conserved.csv").exists());
    assert!(dir.path().join("o/invert_r_residuals.dat").exists());
}

#[test]
fn failed_check_exits_one() {
    let dir = with_config(SMALL);
    let o = run(dir.path(), &["verify", "--config", "exp.toml", "--out", "o", "--tol-scale", "1e-12"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL"));
}

#[test]
fn core_error_exits_one_with_module() {
    let dir = with_config(SMALL);
    std::fs::write(
        dir.path().join("line.toml"),
        "[geometry]\nkind = \"line\"\nperiod = 8.0\nn = 32\n[flow]\nt_final = 1e-3\n",
    )
    .unwrap();
    let o = run(dir.path(), &["gauge-check", "--config", "line.toml", "--out", "o"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error in flows"));
}

#[test]
fn usage_errors_exit_two() {
    let dir = with_config(SMALL);
    assert_eq!(run(dir.path(), &["bogus"]).status.code(), Some(2));
    assert_eq!(run(dir.path(), &["verify", "--config", "missing.toml"]).status.code(), Some(2));
    std::fs::write(dir.path().join("bad.toml"), "[geometry]\nn = \"many\"\n").unwrap();
    assert_eq!(run(dir.path(), &["verify", "--config", "bad.toml"]).status.code(), Some(2));
    std::fs::write(dir.path().join("odd.toml"), "[geometry]\nn = 31\n").unwrap();
    assert_eq!(run(dir.path(), &["verify", "--config", "odd.toml"]).status.code(), Some(2));
    assert_eq!(run(dir.path(), &["verify", "--tol-scale", "0"]).status.code(), Some(2));
    assert_eq!(run(dir.path(), &["--help"]).status.code(), Some(0));
}
