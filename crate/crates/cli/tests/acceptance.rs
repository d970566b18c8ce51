//! Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.
//!
//! Simulation criteria run the shipped scenario files through the same
//! `execute` pipeline as the binary.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use viscostar::diagnostics::{self, RunRecord};
use viscostar::functionals::{self, RadialField};
use viscostar::polytrope;
use viscostar_cli::execute::{self, SERIES_FILE};
use viscostar_cli::{Scenario, Status};

const TOL: f64 = 1e-11;

struct Line {
    id: &'static str,
    pass: bool,
    text: String,
}

fn line(id: &'static str, pass: bool, text: String) -> Line {
    Line { id, pass, text }
}

fn scenario(name: &str) -> Scenario {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.toml"));
    Scenario::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

struct Run {
    dir: PathBuf,
    status: Status,
    record: RunRecord,
}

fn run(s: &Scenario, root: &Path) -> Run {
    let dir = root.join(&s.name);
    let v = execute::execute(s, &dir).expect("artifacts written");
    let record = execute::read_record(&dir).expect("run directory readable");
    Run { dir, status: v.status, record }
}

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

fn scaling_laws() -> Line {
    let mut worst: f64 = 0.0;
    for gamma in [1.25, 1.3, 1.35] {
        let base = polytrope::solve_profile(gamma, 1.0, TOL).unwrap();
        let f1 = RadialField::from_profile(&base).unwrap();
        let e1 = functionals::energy(&f1).e;
        for mu in [0.5, 2.0, 4.0] {
            let p = polytrope::solve_profile(gamma, mu, TOL).unwrap();
            let e = functionals::energy(&RadialField::from_profile(&p).unwrap()).e;
            worst = worst
                .max(rel(p.mass / base.mass, mu.powf((3.0 * gamma - 4.0) / 2.0)))
                .max(rel(p.radius.unwrap() / base.radius.unwrap(), mu.powf((gamma - 2.0) / 2.0)))
                .max(rel(e / e1, mu.powf((5.0 * gamma - 6.0) / 2.0)));
        }
    }
    line("1", worst <= 1e-3, format!("Lane-Emden scaling laws: worst relative error {worst:.2e} (tol 1e-3)"))
}

fn mass_criticality() -> Line {
    let masses: Vec<f64> = [0.5, 1.0, 4.0].iter().map(|&mu| polytrope::solve_profile(4.0 / 3.0, mu, TOL).unwrap().mass).collect();
    let spread = masses.iter().map(|m| rel(*m, masses[1])).fold(0.0, f64::max);
    line("2", spread <= 1e-3, format!("mass criticality: M_ch = {:.8}, spread {spread:.2e} over mu in {{0.5, 1, 4}} (tol 1e-3)", masses[1]))
}

fn pohozaev() -> Line {
    let mut worst: f64 = 0.0;
    for gamma in [1.21, 1.25, 1.3, 4.0 / 3.0, 1.4, 1.5, 1.6, 1.75, 1.9, 1.99] {
        for mu in [0.5, 1.0, 3.0] {
            let p = polytrope::solve_profile(gamma, mu, TOL).unwrap();
            let e = functionals::energy(&RadialField::from_profile(&p).unwrap());
            worst = worst.max(e.q.abs() / (3.0 * (gamma - 1.0) * e.internal));
        }
    }
    line("3", worst <= 1e-3, format!("Pohozaev identity: worst |Q| / 3(gamma-1) internal = {worst:.2e} over 30 profiles (tol 1e-3)"))
}

fn best_constant() -> Line {
    let m_ch = functionals::critical_mass().unwrap();
    let p = polytrope::solve_profile(4.0 / 3.0, 1.0, TOL).unwrap();
    let le = functionals::hls_ratio(&RadialField::from_profile(&p).unwrap()).unwrap();
    let closed = 6.0 * m_ch.powf(-2.0 / 3.0);
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut worst_excess = f64::NEG_INFINITY;
    for _ in 0..64 {
        let trial = functionals::random_trial_density(&mut rng, 4.0 / 3.0, 1201);
        worst_excess = worst_excess.max((functionals::hls_ratio(&trial).unwrap() - le) / le);
    }
    let pass = rel(le, closed) <= 1e-3 && worst_excess <= 1e-6;
    line(
        "4",
        pass,
        format!(
            "best constant: Lane-Emden ratio {le:.8} vs 6 M_ch^(-2/3) = {closed:.8} (rel {:.2e}, tol 1e-3); largest of 64 trials exceeds it by {worst_excess:.2e} (tol 1e-6)",
            rel(le, closed)
        ),
    )
}

fn gravitational_identity() -> Line {
    let mut fields = vec![
        RadialField::from_profile(&polytrope::solve_profile(1.3, 1.0, TOL).unwrap()).unwrap(),
        RadialField::uniform_ball(2.0, 1.5, 1.3, 4001).unwrap(),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    fields.extend((0..20).map(|_| functionals::random_trial_density(&mut rng, 1.3, 2001)));
    let worst = fields
        .iter()
        .map(|f| {
            let w = functionals::gravitational_energy(f);
            rel(w.identity, w.direct)
        })
        .fold(0.0, f64::max);
    line("5", worst <= 1e-6, format!("gravitational identity: worst direct vs identity {worst:.2e} over {} densities (tol 1e-6)", fields.len()))
}

fn initial_data_comparison() -> Line {
    let gamma = 1.3;
    let reference = polytrope::solve_profile(gamma, 1.0, TOL).unwrap();
    let s_ref = functionals::s_mu(&RadialField::from_profile(&reference).unwrap(), &reference).unwrap();
    let b = functionals::estimate_kl_constant(gamma, 1, 64).unwrap();
    let mut qs = Vec::new();
    let mut ok = true;
    let mut notes = Vec::new();
    for lambda in [0.9, 0.95, 0.99] {
        let f = functionals::mass_preserving_scaling(&reference, lambda).unwrap();
        let e = functionals::energy(&f);
        let s = functionals::s_mu(&f, &reference).unwrap();
        let member = functionals::invariant_set_check(&f.clone().with_linear_velocity(1e-3)).unwrap().member;
        let kl = functionals::kl_gate(&f, b).unwrap();
        ok &= e.q > 0.0 && s < s_ref && member;
        if lambda == 0.99 {
            ok &= !kl.chain_holds;
        }
        qs.push(e.q);
        notes.push(format!("lambda {lambda}: Q {:.3e}, S {:.6} < {s_ref:.6}, member {member}, KL chain {}", e.q, s, kl.chain_holds));
    }
    ok &= qs.windows(2).all(|w| w[1] < w[0]);
    line("6", ok, format!("initial-data comparison at gamma 1.3: {}", notes.join("; ")))
}

fn fit(record: &RunRecord) -> Option<diagnostics::ExponentFit> {
    diagnostics::fit_exponent(record, diagnostics::DEFAULT_WINDOW_FRACTION).ok()
}

fn describe_fit(f: &Option<diagnostics::ExponentFit>) -> String {
    match f {
        Some(f) => format!("slope {:.4} on t in [{:.2}, {:.1}] (r^2 {:.5})", f.slope, f.window.0, f.window.1, f.r_squared),
        None => "no fit".to_string(),
    }
}

fn main() -> ExitCode {
    let root = tempfile::tempdir().unwrap();
    let root = root.path();

    let base = scenario("gamma125_expansion");
    let mut fine = base.clone();
    fine.name = "gamma125_expansion_n800".into();
    fine.config.n_cells = 800;
    let critical = scenario("gamma43_subcritical");
    let alphas = scenario("alpha_sweep").expand().unwrap();
    assert_eq!(alphas.len(), 2);

    let mut lines = Vec::new();
    let (coarse, fine_run, crit_run, alpha_runs, rerun, analytic) = std::thread::scope(|s| {
        let coarse = s.spawn(|| run(&base, root));
        let fine_run = s.spawn(|| run(&fine, root));
        let crit_run = s.spawn(|| run(&critical, root));
        let alpha_runs: Vec<_> = alphas.iter().map(|(_, a)| s.spawn(|| run(a, root))).collect();
        let rerun = s.spawn(|| {
            let dir = root.join("rerun");
            execute::execute(&base, &dir).unwrap();
            dir
        });
        let analytic = s.spawn(|| {
            vec![scaling_laws(), mass_criticality(), pohozaev(), best_constant(), gravitational_identity(), initial_data_comparison()]
        });
        (
            coarse.join().unwrap(),
            fine_run.join().unwrap(),
            crit_run.join().unwrap(),
            alpha_runs.into_iter().map(|h| h.join().unwrap()).collect::<Vec<_>>(),
            rerun.join().unwrap(),
            analytic.join().unwrap(),
        )
    });
    lines.extend(analytic);

    let terminal = |r: &Run| diagnostics::energy_residual(&r.record).last().copied().unwrap_or(f64::NAN).abs();
    let (r400, r800) = (terminal(&coarse), terminal(&fine_run));
    let steps = fine_run.record.steps as f64 / coarse.record.steps as f64;
    let completed = coarse.record.completed && fine_run.record.completed;
    lines.push(line(
        "7",
        completed && r400 <= 1e-2 && r400 / r800 >= 1.8,
        format!("energy identity: terminal residual {r400:.3e} at N=400 (tol 1e-2), {r800:.3e} at N=800, reduction x{:.2} (need >= 1.8; step ratio {steps:.2})", r400 / r800),
    ));

    let f8 = fit(&coarse.record);
    lines.push(line(
        "8",
        f8.is_some_and(|f| (0.28..=0.38).contains(&f.slope)),
        format!("expansion exponent, gamma 1.25: {} (band [0.28, 0.38])", describe_fit(&f8)),
    ));

    let f9 = fit(&crit_run.record);
    lines.push(line(
        "9",
        crit_run.record.completed && f9.is_some_and(|f| (0.22..=0.36).contains(&f.slope)),
        format!(
            "expansion exponent, gamma 4/3 at M = {:.4} (0.5 M_ch): {} (band [0.22, 0.36])",
            crit_run.record.meta.mass,
            describe_fit(&f9)
        ),
    ));

    let mut ok10 = true;
    let mut notes10 = Vec::new();
    for ((point, _), r) in alphas.iter().zip(&alpha_runs) {
        let alpha = point[0].1;
        let f = fit(&r.record);
        let band = if alpha < 2.0 / 3.0 {
            let t = 1.0 / (3.0 * (1.0 - alpha));
            (t - 0.08, t + 0.10)
        } else {
            (0.9, f64::INFINITY)
        };
        ok10 &= r.record.completed && f.is_some_and(|f| f.slope >= band.0 && f.slope <= band.1);
        notes10.push(format!("alpha {alpha}: {} (band [{:.3}, {:.3}])", describe_fit(&f), band.0, band.1));
    }
    lines.push(line("10", ok10, format!("density-dependent viscosity: {}", notes10.join("; "))));

    let q = diagnostics::q_persistence(&coarse.record);
    lines.push(line("11", q.min_q > 0.0, format!("Q persistence: min Q = {:.4e} at t = {} along the gamma 1.25 run", q.min_q, q.argmin_t)));

    let (_, second) = diagnostics::h_consistency(&fine_run.record, diagnostics::DEFAULT_WINDOW_FRACTION, 0.05);
    lines.push(line(
        "12",
        second.pass,
        format!(
            "virial consistency at N=800: RMS relative gap {:.3e} between differenced H and the H'' formula over {} samples, t in [{:.2}, {:.1}] (tol 5e-2)",
            second.rms_relative, second.samples, second.window.0, second.window.1
        ),
    ));

    let runs: Vec<&Run> = [&coarse, &fine_run, &crit_run].into_iter().chain(alpha_runs.iter()).collect();
    let nodes: u64 = runs.iter().map(|r| r.record.checks.holder_nodes).sum();
    let violations: u64 = runs.iter().map(|r| r.record.checks.holder_violations).sum();
    let worst = runs.iter().map(|r| r.record.checks.holder_worst_ratio).fold(0.0, f64::max);
    lines.push(line(
        "13",
        nodes > 0 && violations == 0,
        format!("particle-path chain: {violations} violations over {nodes} node checks in {} runs, largest x / bound {worst:.6}", runs.len()),
    ));

    let a = std::fs::read(coarse.dir.join(SERIES_FILE)).unwrap();
    let b = std::fs::read(rerun.join(SERIES_FILE)).unwrap();
    lines.push(line("14", a == b && !a.is_empty(), format!("determinism: repeated gamma125_expansion CSVs identical = {} ({} bytes)", a == b, a.len())));

    let statuses: Vec<String> = runs.iter().map(|r| format!("{}={:?}", r.record.meta.config.gamma, r.status)).collect();
    println!("scenario statuses: {}", statuses.join(", "));
    let mut failed = 0;
    for l in &lines {
        println!("{} criterion {:>2}: {}", if l.pass { "PASS" } else { "FAIL" }, l.id, l.text);
        failed += usize::from(!l.pass);
    }
    println!("acceptance: {} of {} criteria pass", lines.len() - failed, lines.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
