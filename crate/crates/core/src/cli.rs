//! Command-line front end: configuration, orchestration and output files.
//!
//! Every run reads one declarative config (TOML, or JSON when the file ends
//! in `.json`), applies command-line overrides, hashes the effective config
//! and tags every output with that hash. Outputs depend only on the config,
//! so repeated runs are byte-identical; wall-clock timings go to `run.log`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::continuation::{estimate_lambda_max, nonexistence_bound, sweep, BranchPoint, LambdaMaxOptions, SpecFamily, SweepOptions};
use crate::discretization::{sup_norm, Field, Grid, GridKind};
use crate::error::{Error, Result};
use crate::mountain_pass::{bubble_search, second_solution, sobolev_constants, BubbleSearchOptions, SecondOptions};
use crate::nonlinearity::{Domain, ProblemSpec};
use crate::singular_solvers::{
    build_supersolution, first_solution, level_set_fraction, strict_residual, weak_residual_random, Context,
    SolveReport, SolverOptions,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_NO_SOLUTION: i32 = 2;
pub const EXIT_STALL: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridChoice {
    /// Unit ball in the radial reduction.
    Radial,
    /// Unit cube, three-dimensional.
    Box,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemBlock {
    #[serde(rename = "N")]
    pub n: usize,
    pub delta: f64,
    pub a: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambdas: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    pub kind: GridChoice,
    #[serde(rename = "M")]
    pub m: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputBlock {
    pub dir: PathBuf,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyBlock {
    /// Stored solution CSV; when absent the first solution is recomputed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solution: Option<PathBuf>,
    pub weak_tests: usize,
    /// Largest strong-form residual accepted by `verify`.
    pub residual_tol: f64,
}

impl Default for VerifyBlock {
    fn default() -> Self {
        Self {
            solution: None,
            weak_tests: 20,
            residual_tol: 1e-7,
        }
    }
}

/// The whole run configuration. Unknown keys are rejected at every level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemBlock,
    pub grid: GridBlock,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub second: SecondOptions,
    #[serde(default)]
    pub lambda_max: LambdaMaxOptions,
    #[serde(default)]
    pub bubble: BubbleSearchOptions,
    #[serde(default)]
    pub verify: VerifyBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

impl RunConfig {
    /// Parses TOML, or JSON when `path` ends in `.json`.
    pub fn from_str_for(path: &Path, text: &str) -> Result<Self> {
        let cfg: RunConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_str_for(path, &text)
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.problem;
        if let Some(ls) = &p.lambdas {
            if ls.is_empty() {
                return Err(Error::Config("problem.lambdas is empty".into()));
            }
            for &l in ls {
                self.spec(l)?;
            }
        }
        if let Some(l) = p.lambda {
            self.spec(l)?;
        } else {
            self.family().at(1.0).map_err(|e| Error::Config(format!("problem: {e}")))?;
        }
        if self.grid.m < 4 {
            return Err(Error::Config(format!("grid.M = {} is too small", self.grid.m)));
        }
        if self.grid.kind == GridChoice::Box && p.n != 3 {
            return Err(Error::Config("grid.kind = \"box\" requires N = 3".into()));
        }
        Ok(())
    }

    pub fn domain(&self) -> Domain {
        match self.grid.kind {
            GridChoice::Radial => Domain::RadialBall,
            GridChoice::Box => Domain::Box3D,
        }
    }

    pub fn family(&self) -> SpecFamily {
        SpecFamily {
            n: self.problem.n,
            delta: self.problem.delta,
            a: self.problem.a,
            domain: self.domain(),
        }
    }

    pub fn spec(&self, lambda: f64) -> Result<ProblemSpec> {
        self.family().at(lambda).map_err(|e| Error::Config(format!("problem: {e}")))
    }

    fn single_lambda(&self) -> Result<f64> {
        self.problem
            .lambda
            .ok_or_else(|| Error::Config("problem.lambda is required for this command".into()))
    }

    fn lambda_list(&self) -> Result<Vec<f64>> {
        match (&self.problem.lambdas, self.problem.lambda) {
            (Some(ls), _) => Ok(ls.clone()),
            (None, Some(l)) => Ok(vec![l]),
            (None, None) => Err(Error::Config("problem.lambdas is required for this command".into())),
        }
    }

    pub fn context(&self) -> Result<Context> {
        let grid = match self.grid.kind {
            GridChoice::Radial => Grid::radial(self.problem.n, self.grid.m)?,
            GridChoice::Box => Grid::box3d(self.grid.m)?,
        };
        Context::new(grid, self.solver)
    }

    /// SHA-256 of the canonical JSON form of the effective config. The
    /// output location is left out: it does not change any result.
    pub fn hash(&self) -> String {
        let mut keyed = self.clone();
        keyed.output = OutputBlock::default();
        let verify_path = keyed.verify.solution.take();
        let mut canon = serde_json::to_string(&keyed).expect("config serializes");
        if let Some(p) = verify_path {
            canon.push_str(&p.display().to_string());
        }
        let digest = Sha256::digest(canon.as_bytes());
        digest.iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

#[derive(Debug, Parser)]
#[command(name = "critjump", version, about = "Two positive solutions of a critical problem with a singular jump term")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Run configuration (TOML, or JSON by extension).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory, overriding `output.dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed for every random probe, overriding `seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Grid resolution, overriding `grid.M`.
    #[arg(long = "grid-size", global = true)]
    pub grid_size: Option<usize>,
    /// Suppress progress messages on standard error.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// First solution and its report.
    Solve,
    /// Dichotomy, second solution and level certificate.
    Second,
    /// Branch table over `problem.lambdas`.
    Sweep,
    /// Solvability frontier and the analytic bound.
    LambdaMax,
    /// Residual audit of a stored or recomputed first solution.
    Verify,
    /// Bubble energy margins against the compactness threshold.
    BubbleCheck,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Second => "second",
            Command::Sweep => "sweep",
            Command::LambdaMax => "lambda-max",
            Command::Verify => "verify",
            Command::BubbleCheck => "bubble-check",
        }
    }
}

/// Formats a real with 17 significant digits; non-finite values stay textual.
pub fn fmt_real(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

/// Comma-separated table with a config tag and a header row.
pub struct Csv {
    text: String,
}

impl Csv {
    pub fn new(hash: &str, header: &[&str]) -> Self {
        let mut text = format!("# config_hash={hash}\n");
        text.push_str(&header.join(","));
        text.push('\n');
        Self { text }
    }

    pub fn row(&mut self, cells: &[String]) {
        let escaped: Vec<String> = cells
            .iter()
            .map(|c| {
                if c.contains([',', '"', '\n']) {
                    format!("\"{}\"", c.replace('"', "\"\""))
                } else {
                    c.clone()
                }
            })
            .collect();
        self.text.push_str(&escaped.join(","));
        self.text.push('\n');
    }

    pub fn finish(self) -> String {
        self.text
    }
}

/// Nodal field as CSV: coordinates then the value.
pub fn field_csv(hash: &str, field: &Field, name: &str) -> String {
    let grid = &field.grid;
    let mut csv = match grid.kind() {
        GridKind::Radial { .. } => Csv::new(hash, &["r", name]),
        GridKind::Box3D { .. } => Csv::new(hash, &["x", "y", "z", name]),
    };
    for (i, &v) in field.values.iter().enumerate() {
        let mut cells: Vec<String> = match grid.kind() {
            GridKind::Radial { .. } => vec![fmt_real(grid.radius(i))],
            GridKind::Box3D { .. } => grid.coords(i).into_iter().map(fmt_real).collect(),
        };
        cells.push(fmt_real(v));
        csv.row(&cells);
    }
    csv.finish()
}

/// Reads the value column of a file written by [`field_csv`].
pub fn read_field_csv(path: &Path, grid: &std::sync::Arc<Grid>) -> Result<Field> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut values = Vec::new();
    let mut header = true;
    for (ln, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        if header {
            header = false;
            continue;
        }
        let last = line.rsplit(',').next().unwrap_or("");
        let v: f64 = last
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{}:{}: bad value {last:?}", path.display(), ln + 1)))?;
        values.push(v);
    }
    if values.len() != grid.dim() {
        return Err(Error::Config(format!(
            "{} holds {} values, the grid has {}",
            path.display(),
            values.len(),
            grid.dim()
        )));
    }
    Field::new(grid.clone(), values)
}

/// JSON with the config hash as the first key.
#[derive(Serialize)]
struct Tagged<'a, T: Serialize> {
    config_hash: &'a str,
    command: &'a str,
    #[serde(flatten)]
    body: &'a T,
}

fn to_json<T: Serialize>(hash: &str, command: &str, body: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(&Tagged {
        config_hash: hash,
        command,
        body,
    })
    .map_err(|e| Error::Io(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportJson {
    pub lambda: f64,
    pub converged: bool,
    pub iterations: usize,
    pub residual_inf: f64,
    pub weak_residual: f64,
    pub sup_norm: f64,
    pub energy: crate::energy::EnergyBreakdown,
    pub eps_schedule_used: Vec<f64>,
    pub monotonicity_certificate: bool,
    pub forgiven_violations: usize,
    pub level_set_fraction: f64,
    pub notes: Vec<String>,
}

impl ReportJson {
    fn from_report(ctx: &Context, spec: &ProblemSpec, r: &SolveReport, seed: u64, tests: usize) -> Result<Self> {
        Ok(Self {
            lambda: spec.lambda,
            converged: r.converged,
            iterations: r.iterations,
            residual_inf: r.residual_inf,
            weak_residual: weak_residual_random(ctx, spec, &r.solution.values, tests, seed)?,
            sup_norm: sup_norm(&r.solution.values),
            energy: r.energy,
            eps_schedule_used: r.eps_schedule_used.clone(),
            monotonicity_certificate: r.monotonicity_certificate,
            forgiven_violations: r.forgiven_violations,
            level_set_fraction: level_set_fraction(&ctx.grid, &r.solution.values, spec.a),
            notes: r.notes.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyJson {
    pub lambda: f64,
    pub source: String,
    pub residual: f64,
    pub residual_tol: f64,
    pub passed: bool,
    pub weak_residual: f64,
    pub weak_tests: usize,
    /// Nodes where the field exceeds the supersolution `v_λ + z_λ`, or
    /// `None` when that barrier is unavailable at this λ.
    pub supersolution_violations: Option<usize>,
    pub level_set_fraction: f64,
    pub level_set_band: f64,
    pub sup_norm: f64,
    pub energy: crate::energy::EnergyBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct LambdaMaxJson<'a> {
    #[serde(flatten)]
    result: &'a crate::continuation::LambdaMax,
    /// `λ₁/K(a)` with the closed-form `λ₁` of the domain, for comparison.
    analytic_bound_exact_lambda1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct SweepJson<'a> {
    rows: &'a [BranchPoint],
}

/// Where output goes and how chatty to be.
struct Sink {
    dir: PathBuf,
    hash: String,
    quiet: bool,
    log: String,
    start: Instant,
}

impl Sink {
    fn write(&mut self, name: &str, content: &str) -> Result<()> {
        let p = self.dir.join(name);
        fs::write(&p, content).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
        self.note(&format!("wrote {}", p.display()));
        Ok(())
    }

    fn note(&mut self, msg: &str) {
        self.record(msg);
        if !self.quiet {
            eprintln!("{msg}");
        }
    }

    /// Log line without echo.
    fn record(&mut self, msg: &str) {
        let _ = writeln!(self.log, "[{:>9.3}s] {msg}", self.start.elapsed().as_secs_f64());
    }

    fn close(&mut self) {
        let p = self.dir.join("run.log");
        let _ = fs::write(p, &self.log);
    }
}

fn exit_for(e: &Error) -> i32 {
    match e {
        Error::NoSolutionEvidence(_) => EXIT_NO_SOLUTION,
        Error::StallAboveThreshold { .. } => EXIT_STALL,
        _ => EXIT_ERROR,
    }
}

/// Parses arguments and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    run(&cli)
}

/// Loads the config with overrides applied.
pub fn effective_config(cli: &Cli) -> Result<RunConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config PATH is required".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(out) = &cli.out {
        cfg.output.dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(m) = cli.grid_size {
        cfg.grid.m = m;
    }
    cfg.second.seed = cfg.seed;
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: &Cli) -> i32 {
    let cfg = match effective_config(cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_ERROR;
        }
    };
    if let Err(e) = fs::create_dir_all(&cfg.output.dir) {
        eprintln!("error: {}: {e}", cfg.output.dir.display());
        return EXIT_ERROR;
    }
    let mut sink = Sink {
        dir: cfg.output.dir.clone(),
        hash: cfg.hash(),
        quiet: cli.quiet,
        log: String::new(),
        start: Instant::now(),
    };
    sink.note(&format!("{} with config {}", cli.command.name(), sink.hash));
    let cmd = cli.command;
    let outcome = if cmd == Command::Sweep {
        dispatch(cmd, &cfg, &mut sink)
    } else {
        // Single-λ commands run on one thread.
        match rayon::ThreadPoolBuilder::new().num_threads(1).build() {
            Ok(pool) => pool.install(|| dispatch(cmd, &cfg, &mut sink)),
            Err(e) => Err(Error::Io(e.to_string())),
        }
    };
    let code = match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            sink.record(&format!("error: {e}"));
            exit_for(&e)
        }
    };
    sink.note(&format!("exit {code}"));
    sink.close();
    code
}

fn dispatch(cmd: Command, cfg: &RunConfig, sink: &mut Sink) -> Result<i32> {
    match cmd {
        Command::Solve => cmd_solve(cfg, sink),
        Command::Second => cmd_second(cfg, sink),
        Command::Sweep => cmd_sweep(cfg, sink),
        Command::LambdaMax => cmd_lambda_max(cfg, sink),
        Command::Verify => cmd_verify(cfg, sink),
        Command::BubbleCheck => cmd_bubble_check(cfg, sink),
    }
}

fn cmd_solve(cfg: &RunConfig, sink: &mut Sink) -> Result<i32> {
    let ctx = cfg.context()?;
    let spec = cfg.spec(cfg.single_lambda()?)?;
    let rep = first_solution(&ctx, &spec)?;
    let json = ReportJson::from_report(&ctx, &spec, &rep, cfg.seed, cfg.verify.weak_tests)?;
    sink.write("report.json", &to_json(&sink.hash, "solve", &json)?)?;
    let csv = field_csv(&sink.hash, &rep.solution, "u");
    sink.write("solution.csv", &csv)?;
    Ok(if rep.converged { EXIT_OK } else { EXIT_ERROR })
}

fn cmd_second(cfg: &RunConfig, sink: &mut Sink) -> Result<i32> {
    let ctx = cfg.context()?;
    let spec = cfg.spec(cfg.single_lambda()?)?;
    let first = first_solution(&ctx, &spec)?;
    if !first.converged {
        return Err(Error::Convergence {
            what: "first solution".into(),
            iterations: first.iterations,
            residual: first.residual_inf,
        });
    }
    sink.note(&format!("first solution: residual {:.3e}", first.residual_inf));
    let out = match second_solution(&ctx, &spec, &first.solution, &cfg.second) {
        Ok(o) => o,
        Err(e @ Error::StallAboveThreshold { .. }) => {
            let s = sobolev_constants(spec.n)?.s;
            #[derive(Serialize)]
            struct Stall {
                case: &'static str,
                error: String,
                threshold: f64,
                #[serde(rename = "S")]
                s: f64,
            }
            let body = Stall {
                case: "MP",
                error: e.to_string(),
                threshold: crate::mountain_pass::threshold(&spec, s),
                s,
            };
            sink.write("certificate.json", &to_json(&sink.hash, "second", &body)?)?;
            return Err(e);
        }
        Err(e) => return Err(e),
    };
    sink.write("certificate.json", &to_json(&sink.hash, "second", &out.certificate)?)?;
    if let Some(c) = &out.classification {
        sink.write("classification.json", &to_json(&sink.hash, "second", c)?)?;
    }
    sink.write("v_lambda.csv", &field_csv(&sink.hash, &out.v, "v"))?;
    sink.write("composed.csv", &field_csv(&sink.hash, &out.composed, "u_plus_v"))?;
    let mut trace = Csv::new(&sink.hash, &["sweep", "node", "energy"]);
    for r in &out.trace {
        trace.row(&[r.sweep.to_string(), r.node.to_string(), fmt_real(r.energy)]);
    }
    sink.write("path_trace.csv", &trace.finish())?;
    Ok(EXIT_OK)
}

fn opt_real(x: Option<f64>) -> String {
    x.map(fmt_real).unwrap_or_default()
}

fn cmd_sweep(cfg: &RunConfig, sink: &mut Sink) -> Result<i32> {
    let ctx = cfg.context()?;
    let mut lambdas = cfg.lambda_list()?;
    lambdas.sort_by(|a, b| a.total_cmp(b));
    lambdas.dedup();
    let opts = SweepOptions {
        second: true,
        second_opts: cfg.second,
    };
    let rows = sweep(&ctx, &cfg.family(), &lambdas, &opts)?;
    let mut csv = Csv::new(
        &sink.hash,
        &[
            "lambda",
            "first_found",
            "second_found",
            "norm_inf_first",
            "norm_inf_second",
            "energy_first",
            "gamma0",
            "case",
            "residual_first",
            "residual_second",
            "error",
        ],
    );
    for r in &rows {
        csv.row(&[
            fmt_real(r.lambda),
            r.first_found.to_string(),
            r.second_found.to_string(),
            fmt_real(r.norm_inf_first),
            fmt_real(r.norm_inf_second),
            fmt_real(r.energy_first),
            opt_real(r.gamma0),
            r.case.label().to_string(),
            fmt_real(r.residual_first),
            fmt_real(r.residual_second),
            r.error.clone().unwrap_or_default(),
        ]);
    }
    sink.write("branch.csv", &csv.finish())?;
    sink.write("branch.json", &to_json(&sink.hash, "sweep", &SweepJson { rows: &rows })?)?;
    Ok(EXIT_OK)
}

/// Closed-form first Dirichlet eigenvalue of the domain.
fn exact_lambda1(spec: &ProblemSpec) -> f64 {
    match spec.domain {
        // First zero of the Bessel function J_{N/2-1}.
        Domain::RadialBall => crate::discretization::bessel_first_zero(spec.n).powi(2),
        Domain::Box3D => 3.0 * std::f64::consts::PI.powi(2),
    }
}

fn cmd_lambda_max(cfg: &RunConfig, sink: &mut Sink) -> Result<i32> {
    let ctx = cfg.context()?;
    let family = cfg.family();
    let res = estimate_lambda_max(&ctx, &family, &cfg.lambda_max)?;
    let spec1 = family.at(1.0)?;
    let body = LambdaMaxJson {
        result: &res,
        analytic_bound_exact_lambda1: nonexistence_bound(&spec1, exact_lambda1(&spec1)),
    };
    sink.write("lambda_max.json", &to_json(&sink.hash, "lambda-max", &body)?)?;
    for a in &res.anomalies {
        sink.note(a);
    }
    Ok(EXIT_OK)
}

fn cmd_verify(cfg: &RunConfig, sink: &mut Sink) -> Result<i32> {
    let ctx = cfg.context()?;
    let spec = cfg.spec(cfg.single_lambda()?)?;
    let (field, source) = match &cfg.verify.solution {
        Some(p) => (read_field_csv(p, &ctx.grid)?, p.display().to_string()),
        None => (first_solution(&ctx, &spec)?.solution, "recomputed".to_string()),
    };
    let u = &field.values;
    let residual = strict_residual(&ctx, &spec, u, true)?;
    let weak = weak_residual_random(&ctx, &spec, u, cfg.verify.weak_tests, cfg.seed)?;
    let supersolution_violations = match build_supersolution(&ctx, &spec) {
        Ok(w) => {
            let slack = 10.0 * f64::EPSILON * sup_norm(&w.values);
            Some(u.iter().zip(&w.values).filter(|(x, y)| *x - *y > slack).count())
        }
        Err(Error::NotSupersolution(_)) => None,
        Err(e) => return Err(e),
    };
    let body = VerifyJson {
        lambda: spec.lambda,
        source,
        residual,
        residual_tol: cfg.verify.residual_tol,
        passed: residual <= cfg.verify.residual_tol,
        weak_residual: weak,
        weak_tests: cfg.verify.weak_tests,
        supersolution_violations,
        level_set_fraction: level_set_fraction(&ctx.grid, u, spec.a),
        level_set_band: ctx.grid.h().sqrt(),
        sup_norm: sup_norm(u),
        energy: crate::energy::energy_E(&field, &spec),
    };
    sink.write("verify.json", &to_json(&sink.hash, "verify", &body)?)?;
    Ok(if body.passed { EXIT_OK } else { EXIT_ERROR })
}

fn cmd_bubble_check(cfg: &RunConfig, sink: &mut Sink) -> Result<i32> {
    let ctx = cfg.context()?;
    let spec = cfg.spec(cfg.single_lambda()?)?;
    let first = first_solution(&ctx, &spec)?;
    let s = sobolev_constants(spec.n)?.s;
    let found = bubble_search(&first.solution, &spec, s, &cfg.bubble);
    let mut csv = Csv::new(&sink.hash, &["eps", "passed", "margin"]);
    let (code, tried) = match &found {
        Ok(b) => (EXIT_OK, b.tried.clone()),
        Err(Error::MarginViolation { .. }) => (EXIT_ERROR, Vec::new()),
        Err(e) => return Err(e.clone()),
    };
    for (eps, m) in &tried {
        csv.row(&[fmt_real(*eps), m.is_some().to_string(), opt_real(*m)]);
    }
    if let Ok(b) = &found {
        if let Some(h) = &b.halved {
            csv.row(&[fmt_real(h.eps), "true".into(), fmt_real(h.margin)]);
        }
        sink.write("bubble.json", &to_json(&sink.hash, "bubble-check", b)?)?;
        let mut path = Csv::new(&sink.hash, &["t", "energy"]);
        for &(t, e) in &b.report.path {
            path.row(&[fmt_real(t), fmt_real(e)]);
        }
        sink.write("bubble_path.csv", &path.finish())?;
    }
    sink.write("bubble_margin.csv", &csv.finish())?;
    found?;
    Ok(code)
}
