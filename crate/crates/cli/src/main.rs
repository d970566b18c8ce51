use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use viscostar::diagnostics::DiagnosticKind;
use viscostar::functionals::{self, RadialField};
use viscostar::polytrope;
use viscostar_cli::execute::{self, Status};
use viscostar_cli::Scenario;

#[derive(Parser)]
#[command(name = "viscostar", version, about = "Viscous gaseous star expansion runs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a Lane-Emden steady state and print its integrals.
    Steady {
        #[arg(long)]
        gamma: f64,
        #[arg(long)]
        mu: f64,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        /// Write the density table here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate the admissibility gates of a scenario without running it.
    Gates {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run one scenario.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Run directory; defaults to `<output root>/<scenario name>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every point of a parameter sweep.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// `param=v1,v2,...`; repeatable, replaces the same axis from the file.
        #[arg(long)]
        vary: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Concurrent runs; defaults to the worker environment variable or the core count.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Recompute the verdict of an existing run directory.
    Verdict {
        dir: PathBuf,
        /// Comma-separated diagnostics; defaults to the scenario's list.
        #[arg(long, value_delimiter = ',')]
        diagnostics: Vec<String>,
        /// Overwrite the directory's verdict file.
        #[arg(long)]
        write: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(64)
        }
    }
}

fn print_json<T: serde::Serialize>(v: &T) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn report(v: &execute::VerdictFile, dir: &std::path::Path) {
    let status = serde_json::to_value(v.status).unwrap();
    let mut line = format!("{}: {} ({})", v.scenario, status.as_str().unwrap_or("?"), dir.display());
    if let Some(s) = v.summary {
        if let Some(e) = s.exponent {
            line.push_str(&format!(", exponent {e:.4}"));
        }
        line.push_str(&format!(", min Q {:.4e}", s.min_q));
    }
    if let Some(err) = &v.error {
        line.push_str(&format!(", {err}"));
    }
    println!("{line}");
    for (name, o) in &v.verdict.diagnostics {
        let mark = match o.pass {
            Some(true) => "pass",
            Some(false) => "FAIL",
            None => "n/a",
        };
        println!("  {name:<20} {mark}");
    }
}

fn dispatch(command: Command) -> anyhow::Result<i32> {
    match command {
        Command::Steady { gamma, mu, tol, out } => {
            let p = polytrope::solve_profile(gamma, mu, tol)?;
            let f = RadialField::from_profile(&p)?;
            let e = functionals::energy(&f);
            print_json(&serde_json::json!({
                "gamma": gamma,
                "mu": mu,
                "mass": p.mass,
                "radius": p.radius,
                "energy": p.energy,
                "Q": e.q,
                "internal": e.internal,
                "gravitational": e.gravitational,
                "vacuum_exponent": polytrope::vacuum_exponent(&p).ok(),
                "quadrature_tol": p.quadrature_tol,
            }))?;
            if let Some(path) = out {
                let file = std::fs::File::create(&path).with_context(|| path.display().to_string())?;
                p.write_table(std::io::BufWriter::new(file))?;
            }
            Ok(0)
        }
        Command::Gates { config } => {
            let s = Scenario::load(&config)?;
            let gates = execute::evaluate_gates(&s)?;
            print_json(&gates)?;
            Ok(if gates.iter().all(|g| g.pass) { 0 } else { Status::GateRejected.exit_code() })
        }
        Command::Run { config, out } => {
            let s = Scenario::load(&config)?;
            let dir = out.unwrap_or_else(|| execute::output_root().join(&s.name));
            let v = execute::execute(&s, &dir)?;
            report(&v, &dir);
            Ok(v.status.exit_code())
        }
        Command::Sweep { config, vary, out, workers } => {
            let mut s = Scenario::load(&config)?;
            for axis in &vary {
                s.add_sweep(axis)?;
            }
            let root = out.unwrap_or_else(|| execute::output_root().join(&s.name));
            let items = execute::sweep(&s, &root, workers.unwrap_or_else(execute::worker_count))?;
            for item in &items {
                report(&item.outcome, &item.dir);
            }
            println!("aggregate: {}", root.join(execute::AGGREGATE_FILE).display());
            Ok(items.iter().map(|i| i.outcome.status.exit_code()).max().unwrap_or(0))
        }
        Command::Verdict { dir, diagnostics, write } => {
            let kinds = diagnostics
                .iter()
                .map(|n| DiagnosticKind::parse(n).ok_or_else(|| anyhow::anyhow!("unknown diagnostic `{n}`")))
                .collect::<anyhow::Result<Vec<_>>>()?;
            let v = execute::reverdict(&dir, if kinds.is_empty() { None } else { Some(&kinds) })?;
            if write {
                let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join(execute::VERDICT_FILE))?);
                serde_json::to_writer_pretty(&mut f, &v)?;
            }
            print_json(&v)?;
            Ok(v.status.exit_code())
        }
    }
}
