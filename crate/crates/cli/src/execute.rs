//! Gates, simulation and diagnostics for one scenario, plus concurrent sweeps.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use viscostar::diagnostics::{self, DiagnosticKind, Outcome, RunRecord, Verdict};
use viscostar::functionals::{self, RadialField};
use viscostar::simulator::{self, StarState};

use crate::config::{Gate, Scenario, SweepPoint};

/// Environment variable overriding the default output root.
pub const OUTPUT_ROOT_ENV: &str = "VISCOSTAR_OUTPUT_ROOT";
/// Environment variable capping the number of concurrent sweep runs.
pub const WORKERS_ENV: &str = "VISCOSTAR_WORKERS";

pub const SERIES_FILE: &str = "series.csv";
pub const RECORD_FILE: &str = "record.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const VERDICT_FILE: &str = "verdict.json";
pub const SCENARIO_FILE: &str = "scenario.json";
pub const AGGREGATE_FILE: &str = "aggregate.csv";

pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateReport {
    pub gate: Gate,
    pub pass: bool,
    pub detail: serde_json::Value,
}

/// Initial data of a scenario as a field, with its velocity.
pub fn initial_field(scenario: &Scenario) -> anyhow::Result<RadialField> {
    let c = &scenario.config;
    Ok(c.initial_data.field(c.gamma, c.profile_tol, &c.velocity)?)
}

pub fn evaluate_gates(scenario: &Scenario) -> anyhow::Result<Vec<GateReport>> {
    let mut gates = scenario.gates.clone();
    gates.sort();
    gates.dedup();
    if gates.is_empty() {
        return Ok(Vec::new());
    }
    let field = initial_field(scenario)?;
    let mut out = Vec::new();
    for gate in gates {
        let report = match gate {
            Gate::InvariantSet => {
                let d = functionals::invariant_set_check(&field)?;
                GateReport { gate, pass: d.member, detail: serde_json::to_value(&d)? }
            }
            Gate::CriticalMass => {
                let m_ch = functionals::critical_mass()?;
                let m = functionals::mass(&field);
                let margin = m_ch - m;
                GateReport {
                    gate,
                    pass: margin > 1e-9 * m_ch,
                    detail: serde_json::json!({ "mass": m, "critical_mass": m_ch, "mass_margin": margin }),
                }
            }
            Gate::KlGate => {
                let b = functionals::estimate_kl_constant(scenario.config.gamma, scenario.seed, scenario.kl_trials)?;
                let r = functionals::kl_gate(&field, b)?;
                GateReport { gate, pass: r.chain_holds, detail: serde_json::to_value(&r)? }
            }
        };
        out.push(report);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    GateRejected,
    Error,
}

impl Status {
    pub fn exit_code(&self) -> i32 {
        match self {
            Status::Pass => 0,
            Status::Fail => 1,
            Status::GateRejected => 2,
            Status::Error => 3,
        }
    }
}

/// Headline numbers of a run, used for sweep tables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    #[serde(rename = "Q0")]
    pub q0: f64,
    pub min_q: f64,
    pub exponent: Option<f64>,
    pub energy_residual_max: f64,
    pub a_final: f64,
    pub t_final: f64,
}

impl RunSummary {
    pub fn of(record: &RunRecord, verdict: &Verdict) -> Option<Self> {
        let first = record.samples.first()?;
        let last = record.samples.last()?;
        let exponent = verdict
            .diagnostics
            .get(DiagnosticKind::ExponentFit.name())
            .and_then(|o| o.detail.get("slope"))
            .and_then(|v| v.as_f64())
            .or_else(|| diagnostics::fit_exponent(record, diagnostics::DEFAULT_WINDOW_FRACTION).ok().map(|f| f.slope));
        Some(Self {
            q0: first.q,
            min_q: diagnostics::q_persistence(record).min_q,
            exponent,
            energy_residual_max: diagnostics::energy_residual(record).iter().fold(0.0, |m, r| m.max(r.abs())),
            a_final: last.a,
            t_final: last.t,
        })
    }
}

/// Contents of `verdict.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictFile {
    pub scenario: String,
    pub seed: u64,
    pub status: Status,
    pub gates: Vec<GateReport>,
    pub error: Option<String>,
    pub summary: Option<RunSummary>,
    pub verdict: Verdict,
}

fn skipped(requested: &[DiagnosticKind], reason: &str) -> Verdict {
    let diagnostics = requested
        .iter()
        .map(|k| (k.name().to_string(), Outcome { pass: None, detail: serde_json::json!({ "skipped": reason }) }))
        .collect();
    Verdict { completed: false, pass: false, diagnostics }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    let file = File::open(path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

fn write_record(dir: &Path, record: &RunRecord) -> anyhow::Result<()> {
    let mut w = BufWriter::new(File::create(dir.join(SERIES_FILE))?);
    record.write_csv(&mut w)?;
    w.flush()?;
    let mut meta = record.clone();
    meta.samples.clear();
    write_json(&dir.join(RECORD_FILE), &meta)
}

/// Reads a run directory back into a record.
pub fn read_record(dir: &Path) -> anyhow::Result<RunRecord> {
    let mut record: RunRecord = read_json(&dir.join(RECORD_FILE))?;
    let file = File::open(dir.join(SERIES_FILE)).map_err(|e| anyhow::anyhow!("{}: {e}", dir.join(SERIES_FILE).display()))?;
    record.samples = diagnostics::read_csv(BufReader::new(file))?;
    Ok(record)
}

pub fn read_scenario(dir: &Path) -> anyhow::Result<Scenario> {
    read_json(&dir.join(SCENARIO_FILE))
}

/// Runs gates, the simulation and the requested diagnostics, writing every
/// artifact into `dir`. Stage failures are reported in the verdict, not as
/// `Err`; `Err` means an artifact could not be written.
pub fn execute(scenario: &Scenario, dir: &Path) -> anyhow::Result<VerdictFile> {
    std::fs::create_dir_all(dir)?;
    write_json(&dir.join(SCENARIO_FILE), scenario)?;
    let mut file = VerdictFile {
        scenario: scenario.name.clone(),
        seed: scenario.seed,
        status: Status::Error,
        gates: Vec::new(),
        error: None,
        summary: None,
        verdict: skipped(&scenario.diagnostics, "not evaluated"),
    };

    match evaluate_gates(scenario) {
        Ok(gates) => file.gates = gates,
        Err(e) => {
            file.error = Some(format!("gate evaluation failed: {e}"));
            file.verdict = skipped(&scenario.diagnostics, "gate evaluation failed");
            write_json(&dir.join(VERDICT_FILE), &file)?;
            return Ok(file);
        }
    }
    if let Some(g) = file.gates.iter().find(|g| !g.pass) {
        file.status = Status::GateRejected;
        file.error = Some(format!("initial data rejected by the {} gate", g.gate.name()));
        file.verdict = skipped(&scenario.diagnostics, "gate rejected");
        write_json(&dir.join(VERDICT_FILE), &file)?;
        return Ok(file);
    }

    let (record, state): (RunRecord, Option<StarState>) = match simulator::run_with_state(&scenario.config) {
        Ok((record, state)) => (record, Some(state)),
        Err(e) => {
            file.error = Some(format!("simulation could not start: {e}"));
            file.verdict = skipped(&scenario.diagnostics, "simulation could not start");
            write_json(&dir.join(VERDICT_FILE), &file)?;
            return Ok(file);
        }
    };
    write_record(dir, &record)?;
    if let Some(state) = &state {
        write_json(&dir.join(CHECKPOINT_FILE), state)?;
    }
    if !record.completed {
        file.error = record.events.iter().rev().find(|e| e.tag == "error").map(|e| format!("t = {}: {}", e.t, e.message));
    }
    file.verdict = diagnostics::verdict(&record, &scenario.diagnostics, &scenario.verdict_options);
    file.summary = RunSummary::of(&record, &file.verdict);
    file.status = if file.verdict.pass { Status::Pass } else { Status::Fail };
    write_json(&dir.join(VERDICT_FILE), &file)?;
    Ok(file)
}

/// Recomputes the verdict of an existing run directory.
pub fn reverdict(dir: &Path, requested: Option<&[DiagnosticKind]>) -> anyhow::Result<VerdictFile> {
    let scenario = read_scenario(dir)?;
    let record = read_record(dir)?;
    let previous: Option<VerdictFile> = read_json(&dir.join(VERDICT_FILE)).ok();
    let kinds = requested.unwrap_or(&scenario.diagnostics);
    let verdict = diagnostics::verdict(&record, kinds, &scenario.verdict_options);
    Ok(VerdictFile {
        scenario: scenario.name.clone(),
        seed: scenario.seed,
        status: if verdict.pass { Status::Pass } else { Status::Fail },
        gates: previous.as_ref().map(|p| p.gates.clone()).unwrap_or_default(),
        error: previous.and_then(|p| p.error),
        summary: RunSummary::of(&record, &verdict),
        verdict,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepItem {
    pub point: SweepPoint,
    pub dir: PathBuf,
    pub outcome: VerdictFile,
}

/// Number of sweep workers: the environment override, else the machine's parallelism.
pub fn worker_count() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs every sweep point in its own directory under `root` and writes the
/// aggregate table. Items are returned in sweep order regardless of completion order.
pub fn sweep(scenario: &Scenario, root: &Path, workers: usize) -> anyhow::Result<Vec<SweepItem>> {
    use rayon::prelude::*;
    let items = scenario.expand()?;
    std::fs::create_dir_all(root)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build()?;
    let results: Vec<anyhow::Result<SweepItem>> = pool.install(|| {
        items
            .into_par_iter()
            .map(|(point, s)| {
                let dir = root.join(&s.name);
                let outcome = execute(&s, &dir)?;
                Ok(SweepItem { point, dir, outcome })
            })
            .collect()
    });
    let items = results.into_iter().collect::<anyhow::Result<Vec<_>>>()?;
    let mut w = BufWriter::new(File::create(root.join(AGGREGATE_FILE))?);
    write_aggregate(&items, &mut w)?;
    w.flush()?;
    Ok(items)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:e}"))
}

/// One row per sweep point: the varied parameters, status, `Q₀`, `min Q`,
/// the fitted exponent and the largest energy residual.
pub fn write_aggregate<W: Write>(items: &[SweepItem], mut w: W) -> std::io::Result<()> {
    let params: Vec<&str> = items.first().map(|i| i.point.iter().map(|(p, _)| p.name()).collect()).unwrap_or_default();
    let mut header = vec!["name"];
    header.extend(&params);
    header.extend(["status", "Q0", "min_Q", "exponent", "energy_residual_max"]);
    writeln!(w, "{}", header.join(","))?;
    for item in items {
        let mut row = vec![item.outcome.scenario.clone()];
        row.extend(item.point.iter().map(|(_, v)| format!("{v}")));
        let status = serde_json::to_value(item.outcome.status).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        row.push(status);
        let s = item.outcome.summary;
        row.push(opt(s.map(|s| s.q0)));
        row.push(opt(s.map(|s| s.min_q)));
        row.push(opt(s.and_then(|s| s.exponent)));
        row.push(opt(s.map(|s| s.energy_residual_max)));
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(extra: &str) -> Scenario {
        let src = format!(
            "gamma = 1.3\neta = 1\nN = 32\nt_end = 2\noutput_dt = 0.1\ninit = \"lane_emden_scaled(1, 0.95)\"\n{extra}"
        );
        Scenario::parse(&src, Path::new("."), "quick").unwrap()
    }

    #[test]
    fn artifacts_and_schema() {
        let dir = tempfile::tempdir().unwrap();
        let s = quick("[runner]\ngates = [\"invariant_set\"]\n[diagnostics]\ndiagnostics = [\"q_persistence\", \"holder\", \"energy_residual\"]\n");
        let v = execute(&s, dir.path()).unwrap();
        assert_eq!(v.status, Status::Pass, "{v:?}");
        for f in [SERIES_FILE, RECORD_FILE, CHECKPOINT_FILE, VERDICT_FILE, SCENARIO_FILE] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        assert_eq!(v.verdict.diagnostics.len(), 3);
        let back = reverdict(dir.path(), None).unwrap();
        assert_eq!(back.verdict, v.verdict);
        let checkpoint: StarState = read_json(&dir.path().join(CHECKPOINT_FILE)).unwrap();
        assert_eq!(checkpoint.tau, 2.0);
    }

    #[test]
    fn gate_rejection_skips_the_run() {
        let dir = tempfile::tempdir().unwrap();
        let src = "gamma = 1.3333333333333333\neta = 1\nN = 32\nt_end = 1\ninit = \"lane_emden_scaled(1, 1, 1.01)\"\n[runner]\ngates = [\"critical_mass\"]\n[diagnostics]\ndiagnostics = [\"holder\"]\n";
        let s = Scenario::parse(src, Path::new("."), "heavy").unwrap();
        let v = execute(&s, dir.path()).unwrap();
        assert_eq!(v.status, Status::GateRejected);
        assert!(v.gates[0].detail["mass_margin"].as_f64().unwrap() < 0.0);
        assert!(!dir.path().join(SERIES_FILE).exists());
        assert_eq!(v.verdict.diagnostics["holder"].pass, None);
    }

    #[test]
    fn sweep_directories_and_table() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = quick("[diagnostics]\ndiagnostics = [\"q_persistence\"]\n");
        s.add_sweep("lambda=0.9,0.95,0.99").unwrap();
        let items = sweep(&s, dir.path(), 2).unwrap();
        assert_eq!(items.len(), 3);
        for item in &items {
            assert!(item.dir.join(VERDICT_FILE).exists());
        }
        let table = std::fs::read_to_string(dir.path().join(AGGREGATE_FILE)).unwrap();
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines[0], "name,lambda,status,Q0,min_Q,exponent,energy_residual_max");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("quick__lambda_0.9,0.9,"));
    }
}
