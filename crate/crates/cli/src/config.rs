//! Scenario files.
//!
//! A scenario is a TOML document with one table per module. Keys may also
//! appear before the first table, in which case they are routed to the table
//! that owns them:
//!
//! ```toml
//! gamma = 1.3
//! eta = 1
//! N = 400
//! t_end = 50
//! init = "lane_emden_scaled(1, 0.95)"
//!
//! [runner]
//! name = "example"
//! gates = ["invariant_set"]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use toml::{Table, Value};
use viscostar::diagnostics::{DiagnosticKind, VerdictOptions};
use viscostar::simulator::{CutoffSpec, InitialData, SimConfig, Splitting, VelocitySpec, ViscosityModel};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}", .0.to_string().trim_end())]
    Syntax(#[from] toml::de::Error),
    #[error("line {}: unknown key `{key}`{}", fmt_line(*.line), fmt_section(.section))]
    UnknownKey { key: String, section: Option<String>, line: Option<usize> },
    #[error("line {}: `{key}` is set twice", fmt_line(*.line))]
    Duplicate { key: String, line: Option<usize> },
    #[error("line {}: `{key}`: {msg}", fmt_line(*.line))]
    Value { key: String, line: Option<usize>, msg: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

fn fmt_line(line: Option<usize>) -> String {
    line.map_or_else(|| "?".to_string(), |l| l.to_string())
}

fn fmt_section(section: &Option<String>) -> String {
    section.as_ref().map_or_else(String::new, |s| format!(" in [{s}]"))
}

/// Extra requirements checked on the initial data before a run starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gate {
    InvariantSet,
    CriticalMass,
    KlGate,
}

impl Gate {
    pub fn name(&self) -> &'static str {
        match self {
            Gate::InvariantSet => "invariant_set",
            Gate::CriticalMass => "critical_mass",
            Gate::KlGate => "kl_gate",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Gate::InvariantSet, Gate::CriticalMass, Gate::KlGate].into_iter().find(|g| g.name() == s)
    }
}

/// Parameters a sweep may vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Lambda,
    Mu,
    DensityFactor,
    Gamma,
    Alpha,
    Eta,
    Epsilon,
    #[serde(rename = "N")]
    N,
    TEnd,
    Cfl,
}

impl SweepParam {
    const ALL: [SweepParam; 10] = [
        SweepParam::Lambda,
        SweepParam::Mu,
        SweepParam::DensityFactor,
        SweepParam::Gamma,
        SweepParam::Alpha,
        SweepParam::Eta,
        SweepParam::Epsilon,
        SweepParam::N,
        SweepParam::TEnd,
        SweepParam::Cfl,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SweepParam::Lambda => "lambda",
            SweepParam::Mu => "mu",
            SweepParam::DensityFactor => "density_factor",
            SweepParam::Gamma => "gamma",
            SweepParam::Alpha => "alpha",
            SweepParam::Eta => "eta",
            SweepParam::Epsilon => "epsilon",
            SweepParam::N => "N",
            SweepParam::TEnd => "t_end",
            SweepParam::Cfl => "cfl",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == s)
    }

    /// Writes `value` into `config`.
    pub fn apply(&self, config: &mut SimConfig, value: f64) -> Result<(), ConfigError> {
        match self {
            SweepParam::Lambda | SweepParam::Mu | SweepParam::DensityFactor => {
                let InitialData::LaneEmden { mu, lambda, density_factor } = &mut config.initial_data else {
                    return Err(ConfigError::Invalid(format!("`{}` can only vary Lane-Emden initial data", self.name())));
                };
                match self {
                    SweepParam::Lambda => *lambda = value,
                    SweepParam::Mu => *mu = value,
                    _ => *density_factor = value,
                }
            }
            SweepParam::Gamma => config.gamma = value,
            SweepParam::Alpha => config.visc.alpha = value,
            SweepParam::Eta => config.visc.eta = value,
            SweepParam::Epsilon => config.visc.epsilon = value,
            SweepParam::N => {
                if !(value >= 0.0 && value.fract() == 0.0) {
                    return Err(ConfigError::Invalid(format!("N must be a whole number, got {value}")));
                }
                config.n_cells = value as usize;
            }
            SweepParam::TEnd => {
                let rescale = config.output_dt.map(|dt| dt / config.t_end);
                config.t_end = value;
                if let Some(f) = rescale {
                    config.output_dt = Some(f * value);
                }
            }
            SweepParam::Cfl => config.cfl = value,
        }
        Ok(())
    }
}

/// Parameter values identifying one sweep item.
pub type SweepPoint = Vec<(SweepParam, f64)>;

/// One swept parameter and its values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepAxis {
    pub param: SweepParam,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub config: SimConfig,
    pub gates: Vec<Gate>,
    pub diagnostics: Vec<DiagnosticKind>,
    pub verdict_options: VerdictOptions,
    /// Seed for randomized trial densities.
    pub seed: u64,
    /// Number of random trial densities behind the `kl_gate` constant.
    pub kl_trials: usize,
    pub sweep: Vec<SweepAxis>,
}

/// Section that owns each key.
const KEYS: &[(&str, &[&str])] = &[
    ("runner", &["name", "seed", "gates"]),
    ("polytrope", &["profile_tol"]),
    ("functionals", &["kl_trials"]),
    (
        "simulator",
        &[
            "gamma",
            "epsilon",
            "eta",
            "alpha",
            "N",
            "t_end",
            "cfl",
            "xi",
            "init",
            "velocity",
            "output_dt",
            "output_stride",
            "splitting",
            "pressure",
            "gravity",
            "track_dissipation",
            "mass_floor",
            "dt_max",
            "max_steps",
        ],
    ),
    ("diagnostics", &["diagnostics", "window_fraction", "energy_tol", "virial_tol", "h_tol"]),
];

fn owner(key: &str) -> Option<&'static str> {
    KEYS.iter().find(|(_, keys)| keys.contains(&key)).map(|(s, _)| *s)
}

/// Line of the first `key = ...` assignment in `source`, 1-based.
fn line_of(source: &str, key: &str) -> Option<usize> {
    source.lines().position(|l| {
        let l = l.trim_start();
        l.strip_prefix(key).is_some_and(|rest| rest.trim_start().starts_with('='))
    })
    .map(|i| i + 1)
}

struct Fields<'a> {
    source: &'a str,
    values: Vec<(String, Value)>,
}

impl Fields<'_> {
    fn err(&self, key: &str, msg: impl Into<String>) -> ConfigError {
        ConfigError::Value { key: key.to_string(), line: line_of(self.source, key), msg: msg.into() }
    }

    fn get(&self, key: &str) -> Option<&Value> {
        self.values.iter().find(|(k, _)| k == key).map(|(_, v)| v)
    }

    fn f64(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Float(x)) => Ok(Some(*x)),
            Some(Value::Integer(i)) => Ok(Some(*i as f64)),
            Some(v) => Err(self.err(key, format!("expected a number, got {}", v.type_str()))),
        }
    }

    fn uint(&self, key: &str) -> Result<Option<u64>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Integer(i)) if *i >= 0 => Ok(Some(*i as u64)),
            Some(v) => Err(self.err(key, format!("expected a non-negative integer, got {v}"))),
        }
    }

    fn bool(&self, key: &str) -> Result<Option<bool>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Boolean(b)) => Ok(Some(*b)),
            Some(v) => Err(self.err(key, format!("expected true or false, got {v}"))),
        }
    }

    fn str(&self, key: &str) -> Result<Option<&str>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(v) => Err(self.err(key, format!("expected a string, got {}", v.type_str()))),
        }
    }

    fn str_list(&self, key: &str) -> Result<Option<Vec<String>>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(vec![s.clone()])),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| match v {
                    Value::String(s) => Ok(s.clone()),
                    other => Err(self.err(key, format!("expected strings, got {other}"))),
                })
                .collect::<Result<Vec<_>, _>>()
                .map(Some),
            Some(v) => Err(self.err(key, format!("expected a list of strings, got {}", v.type_str()))),
        }
    }
}

/// `name(a, b, ...)` with numeric arguments; a bare `name` has no arguments.
pub fn parse_call(s: &str) -> Result<(String, Vec<f64>), String> {
    let s = s.trim();
    let Some(open) = s.find('(') else {
        if s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') && !s.is_empty() {
            return Ok((s.to_string(), Vec::new()));
        }
        return Err(format!("cannot parse `{s}`"));
    };
    let Some(inner) = s[open + 1..].strip_suffix(')') else {
        return Err(format!("missing `)` in `{s}`"));
    };
    let name = s[..open].trim().to_string();
    let args = if inner.trim().is_empty() {
        Vec::new()
    } else {
        inner
            .split(',')
            .map(|a| a.trim().parse::<f64>().map_err(|e| format!("argument `{}`: {e}", a.trim())))
            .collect::<Result<Vec<_>, _>>()?
    };
    Ok((name, args))
}

fn parse_init(s: &str, base: &Path) -> Result<InitialData, String> {
    if let Some(rest) = s.trim().strip_prefix("table(") {
        let path = rest.strip_suffix(')').ok_or("missing `)`")?.trim().trim_matches('"');
        return read_density_table(&base.join(path));
    }
    let (name, args) = parse_call(s)?;
    let arity = |n: &[usize]| {
        if n.contains(&args.len()) {
            Ok(())
        } else {
            Err(format!("`{name}` takes {n:?} arguments, got {}", args.len()))
        }
    };
    match name.as_str() {
        "lane_emden" => {
            arity(&[1])?;
            Ok(InitialData::lane_emden(args[0]))
        }
        "lane_emden_scaled" => {
            arity(&[2, 3])?;
            Ok(InitialData::LaneEmden { mu: args[0], lambda: args[1], density_factor: args.get(2).copied().unwrap_or(1.0) })
        }
        "uniform_ball" => {
            arity(&[2])?;
            Ok(InitialData::UniformBall { rho0: args[0], radius: args[1] })
        }
        other => Err(format!("unknown initial data `{other}` (expected lane_emden, lane_emden_scaled, uniform_ball or table)")),
    }
}

/// Whitespace-separated `r rho` rows; `#` starts a comment.
fn read_density_table(path: &Path) -> Result<InitialData, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut r = Vec::new();
    let mut rho = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let cols: Vec<f64> = line
            .split_whitespace()
            .map(|c| c.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| format!("{} line {}: {e}", path.display(), i + 1))?;
        if cols.len() != 2 {
            return Err(format!("{} line {}: expected two columns", path.display(), i + 1));
        }
        r.push(cols[0]);
        rho.push(cols[1]);
    }
    Ok(InitialData::Table { r, rho })
}

fn parse_velocity(s: &str) -> Result<VelocitySpec, String> {
    let (name, args) = parse_call(s)?;
    match (name.as_str(), args.as_slice()) {
        ("zero", []) => Ok(VelocitySpec::Zero),
        ("linear", [c]) => Ok(VelocitySpec::Linear { c: *c }),
        _ => Err(format!("expected `zero` or `linear(c)`, got `{s}`")),
    }
}

fn parse_xi(v: &Value) -> Result<CutoffSpec, String> {
    match v {
        Value::Float(x) => Ok(CutoffSpec::Radius(*x)),
        Value::Integer(i) => Ok(CutoffSpec::Radius(*i as f64)),
        Value::String(s) => match parse_call(s)? {
            (n, a) if n == "auto" && a.is_empty() => Ok(CutoffSpec::default()),
            (n, a) if n == "auto" && a.len() == 1 => Ok(CutoffSpec::Auto { excised_fraction: a[0] }),
            _ => Err(format!("expected a radius, `auto` or `auto(fraction)`, got `{s}`")),
        },
        other => Err(format!("expected a radius or `auto`, got {other}")),
    }
}

/// Gathers keys from the top level and from the module tables.
fn flatten(source: &str, doc: Table) -> Result<(Fields<'_>, Vec<(String, Value)>), ConfigError> {
    let mut values: Vec<(String, Value)> = Vec::new();
    let mut sweep = Vec::new();
    let push = |key: String, value: Value, values: &mut Vec<(String, Value)>| {
        if values.iter().any(|(k, _)| *k == key) {
            return Err(ConfigError::Duplicate { line: line_of(source, &key), key });
        }
        values.push((key, value));
        Ok(())
    };
    for (key, value) in doc {
        match value {
            Value::Table(table) if key == "sweep" => sweep.extend(table),
            Value::Table(table) if KEYS.iter().any(|(s, _)| *s == key) => {
                for (k, v) in table {
                    if owner(&k) != Some(key.as_str()) {
                        return Err(ConfigError::UnknownKey { line: line_of(source, &k), key: k, section: Some(key.clone()) });
                    }
                    push(k, v, &mut values)?;
                }
            }
            Value::Table(_) => {
                return Err(ConfigError::UnknownKey { line: source.lines().position(|l| l.trim() == format!("[{key}]")).map(|i| i + 1), key, section: None })
            }
            value => {
                if owner(&key).is_none() {
                    return Err(ConfigError::UnknownKey { line: line_of(source, &key), key, section: None });
                }
                push(key, value, &mut values)?;
            }
        }
    }
    Ok((Fields { source, values }, sweep.into_iter().collect()))
}

impl Scenario {
    /// Parses a scenario from text. Relative table paths resolve against `base`.
    pub fn parse(source: &str, base: &Path, default_name: &str) -> Result<Self, ConfigError> {
        let doc: Table = source.parse()?;
        let (f, sweep_values) = flatten(source, doc)?;

        let gamma = f.f64("gamma")?.ok_or_else(|| ConfigError::Invalid("`gamma` is required".into()))?;
        let visc = ViscosityModel {
            epsilon: f.f64("epsilon")?.unwrap_or(0.0),
            eta: f.f64("eta")?.unwrap_or(0.0),
            alpha: f.f64("alpha")?.unwrap_or(0.0),
        };
        let n = f.uint("N")?.ok_or_else(|| ConfigError::Invalid("`N` is required".into()))? as usize;
        let t_end = f.f64("t_end")?.ok_or_else(|| ConfigError::Invalid("`t_end` is required".into()))?;
        let init_src = f.str("init")?.ok_or_else(|| ConfigError::Invalid("`init` is required".into()))?;
        let init = parse_init(init_src, base).map_err(|m| f.err("init", m))?;

        let mut config = SimConfig::new(gamma, visc, n, t_end, init);
        if let Some(v) = f.str("velocity")? {
            config.velocity = parse_velocity(v).map_err(|m| f.err("velocity", m))?;
        }
        if let Some(v) = f.get("xi") {
            config.xi = parse_xi(v).map_err(|m| f.err("xi", m))?;
        }
        if let Some(v) = f.f64("cfl")? {
            config.cfl = v;
        }
        if let Some(v) = f.f64("output_dt")? {
            config.output_dt = Some(v);
        }
        if let Some(v) = f.uint("output_stride")? {
            config.output_stride = v as usize;
        }
        if let Some(v) = f.str("splitting")? {
            config.splitting = match v {
                "lie" => Splitting::Lie,
                "strang" => Splitting::Strang,
                other => return Err(f.err("splitting", format!("expected `lie` or `strang`, got `{other}`"))),
            };
        }
        if let Some(v) = f.bool("pressure")? {
            config.pressure = v;
        }
        if let Some(v) = f.bool("gravity")? {
            config.gravity = v;
        }
        if let Some(v) = f.bool("track_dissipation")? {
            config.track_dissipation = v;
        }
        if let Some(v) = f.f64("profile_tol")? {
            config.profile_tol = v;
        }
        if let Some(v) = f.f64("mass_floor")? {
            config.mass_floor = v;
        }
        if let Some(v) = f.f64("dt_max")? {
            config.dt_max = Some(v);
        }
        if let Some(v) = f.uint("max_steps")? {
            config.max_steps = v;
        }

        let gates = match f.str_list("gates")? {
            None => Vec::new(),
            Some(names) => names
                .iter()
                .map(|n| Gate::parse(n).ok_or_else(|| f.err("gates", format!("unknown gate `{n}`"))))
                .collect::<Result<Vec<_>, _>>()?,
        };
        let diagnostics = match f.str_list("diagnostics")? {
            None => DiagnosticKind::ALL.to_vec(),
            Some(names) => names
                .iter()
                .map(|n| DiagnosticKind::parse(n).ok_or_else(|| f.err("diagnostics", format!("unknown diagnostic `{n}`"))))
                .collect::<Result<Vec<_>, _>>()?,
        };
        let mut verdict_options = VerdictOptions::default();
        if let Some(v) = f.f64("window_fraction")? {
            verdict_options.window_fraction = v;
        }
        if let Some(v) = f.f64("energy_tol")? {
            verdict_options.energy_tol = v;
        }
        if let Some(v) = f.f64("virial_tol")? {
            verdict_options.virial_tol = v;
        }
        if let Some(v) = f.f64("h_tol")? {
            verdict_options.h_tol = v;
        }

        let mut sweep = Vec::new();
        for (key, value) in sweep_values {
            let param = SweepParam::parse(&key)
                .ok_or_else(|| ConfigError::UnknownKey { line: line_of(source, &key), key: key.clone(), section: Some("sweep".into()) })?;
            let values = match value {
                Value::Array(items) => items
                    .iter()
                    .map(|v| match v {
                        Value::Float(x) => Ok(*x),
                        Value::Integer(i) => Ok(*i as f64),
                        other => Err(f.err(&key, format!("expected numbers, got {other}"))),
                    })
                    .collect::<Result<Vec<_>, _>>()?,
                other => return Err(f.err(&key, format!("expected a list of numbers, got {}", other.type_str()))),
            };
            sweep.push(SweepAxis { param, values });
        }

        let scenario = Scenario {
            name: f.str("name")?.unwrap_or(default_name).to_string(),
            config,
            gates,
            diagnostics,
            verdict_options,
            seed: f.uint("seed")?.unwrap_or(0),
            kl_trials: f.uint("kl_trials")?.unwrap_or(64) as usize,
            sweep,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    /// Reads and validates a scenario file.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("scenario");
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")), stem)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let c = &self.config;
        let gamma = c.gamma;
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name.starts_with('.') {
            return Err(ConfigError::Invalid(format!("`{}` is not usable as a directory name", self.name)));
        }
        if c.t_end.is_nan() || c.t_end <= 0.0 {
            return Err(ConfigError::Invalid(format!("t_end must be positive, got {}", c.t_end)));
        }
        if c.n_cells < 16 {
            return Err(ConfigError::Invalid(format!("N must be at least 16, got {}", c.n_cells)));
        }
        if !(c.visc.alpha >= 0.0 && c.visc.alpha <= gamma) {
            return Err(ConfigError::Invalid(format!("alpha = {} must lie in [0, gamma = {gamma}]", c.visc.alpha)));
        }
        c.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.gates.contains(&Gate::InvariantSet) && !(gamma > 1.2 && (gamma < 4.0 / 3.0 || viscostar::is_mass_critical(gamma))) {
            return Err(ConfigError::Invalid(format!("the invariant_set gate needs gamma in (6/5, 4/3], got {gamma}")));
        }
        if self.gates.contains(&Gate::CriticalMass) && !viscostar::is_mass_critical(gamma) {
            return Err(ConfigError::Invalid(format!("the critical_mass gate needs gamma = 4/3, got {gamma}")));
        }
        if self.gates.contains(&Gate::KlGate) && !(gamma > 1.2 && gamma < 4.0 / 3.0) {
            return Err(ConfigError::Invalid(format!("the kl_gate needs gamma in (6/5, 4/3), got {gamma}")));
        }
        let o = &self.verdict_options;
        if !(o.window_fraction > 0.0 && o.window_fraction <= 1.0) {
            return Err(ConfigError::Invalid("window_fraction must lie in (0, 1]".into()));
        }
        for axis in &self.sweep {
            if axis.values.is_empty() {
                return Err(ConfigError::Invalid(format!("sweep over `{}` has no values", axis.param.name())));
            }
        }
        Ok(())
    }

    /// Adds or replaces a sweep axis from `param=v1,v2,...`.
    pub fn add_sweep(&mut self, axis: &str) -> Result<(), ConfigError> {
        let (key, list) = axis.split_once('=').ok_or_else(|| ConfigError::Invalid(format!("expected `param=v1,v2`, got `{axis}`")))?;
        let param = SweepParam::parse(key.trim())
            .ok_or_else(|| ConfigError::UnknownKey { key: key.trim().to_string(), section: Some("sweep".into()), line: None })?;
        let values = list
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|e| ConfigError::Invalid(format!("`{}`: {e}", v.trim()))))
            .collect::<Result<Vec<_>, _>>()?;
        self.sweep.retain(|a| a.param != param);
        self.sweep.push(SweepAxis { param, values });
        self.validate()
    }

    /// The cartesian product of the sweep axes, one validated scenario per point.
    pub fn expand(&self) -> Result<Vec<(SweepPoint, Scenario)>, ConfigError> {
        let mut points: Vec<SweepPoint> = vec![Vec::new()];
        for axis in &self.sweep {
            points = points
                .into_iter()
                .flat_map(|p| {
                    axis.values.iter().map(move |&v| {
                        let mut q = p.clone();
                        q.push((axis.param, v));
                        q
                    })
                })
                .collect();
        }
        let mut out = Vec::with_capacity(points.len());
        let mut names = std::collections::HashSet::new();
        for point in points {
            let mut s = self.clone();
            s.sweep.clear();
            for &(param, value) in &point {
                param.apply(&mut s.config, value)?;
                s.name.push_str(&format!("__{}_{}", param.name(), value));
            }
            s.validate()?;
            if !names.insert(s.name.clone()) {
                return Err(ConfigError::Invalid(format!("sweep produces `{}` twice", s.name)));
            }
            out.push((point, s));
        }
        Ok(out)
    }
}
