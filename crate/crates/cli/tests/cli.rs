use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_viscostar"))
}

fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

const QUICK: &str = "gamma = 1.3\neta = 1\nN = 32\nt_end = 2\noutput_dt = 0.1\ninit = \"lane_emden_scaled(1, 0.95)\"\n\n[runner]\nname = \"quick\"\ngates = [\"invariant_set\"]\n\n[diagnostics]\ndiagnostics = [\"q_persistence\", \"holder\", \"energy_residual\", \"density_positivity\"]\n";

#[test]
fn steady_prints_integrals_and_writes_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("le.txt");
    let out = bin().args(["steady", "--gamma", "1.3333333333333333", "--mu", "2", "--out"]).arg(&table).output().unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["mass"].as_f64().unwrap() - 4.5546708).abs() < 1e-5);
    assert!(std::fs::read_to_string(&table).unwrap().starts_with('#'));
}

#[test]
fn run_then_verdict_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "quick.toml", QUICK);
    let run_dir = dir.path().join("out");
    let out = bin().args(["run", "--config"]).arg(&cfg).arg("--out").arg(&run_dir).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let written: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(run_dir.join("verdict.json")).unwrap()).unwrap();

    let out = bin().arg("verdict").arg(&run_dir).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let again: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(again["verdict"], written["verdict"]);

    let out = bin().arg("verdict").arg(&run_dir).args(["--diagnostics", "holder"]).output().unwrap();
    let only: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(only["verdict"]["diagnostics"].as_object().unwrap().len(), 1);
}

#[test]
fn output_root_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "quick.toml", QUICK);
    let out = bin().args(["run", "--config"]).arg(&cfg).env("VISCOSTAR_OUTPUT_ROOT", dir.path().join("root")).output().unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("root/quick/series.csv").exists());
}

#[test]
fn gate_rejection_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let body = "gamma = 1.3333333333333333\neta = 1\nN = 32\nt_end = 1\ninit = \"lane_emden_scaled(1, 1, 1.2)\"\n[runner]\ngates = [\"critical_mass\"]\n";
    let cfg = write(dir.path(), "heavy.toml", body);
    let out = bin().args(["gates", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin().args(["run", "--config"]).arg(&cfg).arg("--out").arg(dir.path().join("r")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("r/series.csv").exists());
}

#[test]
fn config_errors_report_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", &QUICK.replace("N = 32", "N = 32\nwobble = 2"));
    let out = bin().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(64));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 4") && err.contains("wobble"), "{err}");
}

#[test]
fn sweep_writes_aggregate_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "quick.toml", QUICK);
    for (sub, workers) in [("a", "1"), ("b", "3")] {
        let out = bin()
            .args(["sweep", "--config"])
            .arg(&cfg)
            .args(["--vary", "lambda=0.9,0.95,0.99", "--out"])
            .arg(dir.path().join(sub))
            .env("VISCOSTAR_WORKERS", workers)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let table = std::fs::read_to_string(dir.path().join("a/aggregate.csv")).unwrap();
    assert_eq!(table.lines().count(), 4);
    assert_eq!(table, std::fs::read_to_string(dir.path().join("b/aggregate.csv")).unwrap());
    for name in ["quick__lambda_0.9", "quick__lambda_0.95", "quick__lambda_0.99"] {
        let a = std::fs::read(dir.path().join("a").join(name).join("series.csv")).unwrap();
        let b = std::fs::read(dir.path().join("b").join(name).join("series.csv")).unwrap();
        assert_eq!(a, b, "{name}");
    }
}
