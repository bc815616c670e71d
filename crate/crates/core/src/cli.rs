//! Command-line front end: identity verification, single Baecklund steps and
//! multi-step discrete evolution.
//!
//! Exit codes: 0 success, 1 a check exceeded its tolerance, 2 configuration (or other
//! input) error, 3 the Newton solve failed.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::discrete::{solve_next, SolverConfig, Trajectory, TrajectoryPoint};
use crate::elliptic::{ModelParams, TorusParams, C64};
use crate::error::Error;
use crate::identity::{run_all, IdentityReport, SuiteConfig};
use crate::intertwiners::WeightVector;
use crate::lax::{
    backlund_t, eigenvector_residual, kernel_residual, ks_identity_sides, lax_equation_residual,
    BacklundStep, PhaseConfig,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NO_CONVERGENCE: i32 = 3;

/// Modification point used when the configuration does not give one.
pub const DEFAULT_U: C64 = C64::new(0.3, 0.2);
/// Residual threshold of `backlund` and `evolve` when no tolerance is given.
pub const DEFAULT_TOL: f64 = 1e-8;
/// Number of steps of `evolve` when the configuration does not give one.
pub const DEFAULT_STEPS: usize = 10;
/// Points `s + t tau` (as `(s, t)`) at which `backlund` evaluates the Lax equation.
const LAX_PROBES: [(f64, f64); 3] = [(0.31, 0.17), (0.62, 0.45), (0.13, 0.71)];

/// Header of the trajectory CSV.
pub const CSV_HEADER: [&str; 9] = [
    "a", "k", "re_lambda", "im_lambda", "re_t", "im_t", "re_c", "im_c", "rs_residual",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Parser)]
#[command(name = "ellrs", version, about = "Elliptic Ruijsenaars-Schneider toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Number of time steps (evolve).
    #[arg(long, global = true, value_name = "N")]
    pub steps: Option<usize>,
    /// Seed of the identity draws and of the Newton restarts.
    #[arg(long, global = true, value_name = "S")]
    pub seed: Option<u64>,
    /// Tolerance: identity threshold (verify) or residual threshold (backlund, evolve).
    #[arg(long, global = true, value_name = "T")]
    pub tol: Option<f64>,
    /// Output file; standard output when absent.
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Output format.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Run the randomised identity suite.
    Verify,
    /// Perform one Baecklund transformation and check it.
    Backlund,
    /// Evolve the discrete-time dynamics and export the trajectory.
    Evolve,
}

/// `c` as a single value or one value per time step (the last entry repeats).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CSchedule {
    Constant(C64),
    PerStep(Vec<C64>),
}

impl CSchedule {
    pub fn at(&self, a: usize) -> C64 {
        match self {
            CSchedule::Constant(c) => *c,
            CSchedule::PerStep(v) => v[a.min(v.len() - 1)],
        }
    }
}

/// Contents of the JSON configuration file. Complex numbers are `[re, im]` arrays.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub n: Option<usize>,
    pub tau: Option<C64>,
    pub eta: Option<C64>,
    pub lambda0: Option<Vec<C64>>,
    pub t0: Option<Vec<C64>>,
    pub mu0: Option<Vec<C64>>,
    pub c: Option<CSchedule>,
    pub u: Option<C64>,
    pub steps: Option<usize>,
    pub seed: Option<u64>,
    pub tol: Option<f64>,
    pub output_path: Option<PathBuf>,
    pub format: Option<Format>,
    pub solver: Option<SolverConfig>,
    pub suite: Option<SuiteConfig>,
}

/// A failure with its exit code.
#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NoConvergence { .. } | Error::DegenerateSolution(_) => EXIT_NO_CONVERGENCE,
            _ => EXIT_CONFIG,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Text to write plus the exit code.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub text: String,
    pub code: i32,
}

impl RunConfig {
    /// Parses a configuration; errors name the offending field and position.
    pub fn parse(text: &str) -> CliResult<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            if path == "." {
                CliError::config(format!("invalid config: {}", e.inner()))
            } else {
                CliError::config(format!("invalid config field `{path}`: {}", e.inner()))
            }
        })?;
        if let Some(CSchedule::PerStep(v)) = &cfg.c {
            if v.is_empty() {
                return Err(CliError::config("invalid config field `c`: the schedule is empty"));
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Applies command-line flags, which take precedence over the file.
    pub fn apply_overrides(&mut self, cli: &Cli) {
        if cli.steps.is_some() {
            self.steps = cli.steps;
        }
        if cli.seed.is_some() {
            self.seed = cli.seed;
        }
        if cli.tol.is_some() {
            self.tol = cli.tol;
        }
        if cli.out.is_some() {
            self.output_path = cli.out.clone();
        }
        if cli.format.is_some() {
            self.format = cli.format;
        }
    }

    fn torus(&self) -> CliResult<Option<TorusParams>> {
        self.tau
            .map(|tau| TorusParams::new(tau).map_err(|e| field_error("tau", e)))
            .transpose()
    }

    fn require<T: Clone>(value: &Option<T>, field: &str, command: &str) -> CliResult<T> {
        value
            .clone()
            .ok_or_else(|| CliError::config(format!("missing config field `{field}` (required by {command})")))
    }

    /// Model parameters and initial positions.
    pub fn model(&self, command: &str) -> CliResult<(ModelParams, WeightVector)> {
        let torus = self
            .torus()?
            .ok_or_else(|| CliError::config(format!("missing config field `tau` (required by {command})")))?;
        let eta = Self::require(&self.eta, "eta", command)?;
        let lambda = Self::require(&self.lambda0, "lambda0", command)?;
        let n = self.n.unwrap_or(lambda.len());
        if n != lambda.len() {
            return Err(CliError::config(format!(
                "invalid config field `lambda0`: expected n = {n} entries, got {}",
                lambda.len()
            )));
        }
        let params = ModelParams::new(n, eta, torus).map_err(|e| field_error("eta", e))?;
        let lam = WeightVector::new(lambda, params).map_err(|e| field_error("lambda0", e))?;
        Ok((params, lam))
    }

    pub fn schedule(&self) -> CSchedule {
        self.c.clone().unwrap_or(CSchedule::Constant(C64::new(0.0, 0.0)))
    }

    /// Solver settings, with the top-level seed taking precedence.
    pub fn solver_config(&self) -> CliResult<SolverConfig> {
        let mut s = self.solver.clone().unwrap_or_default();
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        s.validate().map_err(|e| field_error("solver", e))?;
        Ok(s)
    }

    fn threshold(&self) -> CliResult<f64> {
        let tol = self.tol.unwrap_or(DEFAULT_TOL);
        if tol > 0.0 && tol.is_finite() {
            Ok(tol)
        } else {
            Err(CliError::config("invalid config field `tol`: must be positive and finite"))
        }
    }

    /// The suite to run: the `suite` section (or the default grid), restricted to the
    /// configured model when `tau`, `eta` or `n`/`lambda0` are given.
    pub fn suite_config(&self) -> CliResult<SuiteConfig> {
        let mut s = self.suite.clone().unwrap_or_default();
        if let Some(t) = self.torus()? {
            s.taus = vec![t.tau()];
        }
        if let Some(eta) = self.eta {
            s.etas = vec![eta];
        }
        if let Some(n) = self.n.or(self.lambda0.as_ref().map(Vec::len)) {
            s.ranks = vec![n];
        }
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        if self.tol.is_some() {
            s.tol = self.tol;
        }
        s.validate().map_err(|e| match e {
            Error::InvalidParameter { field, .. } => field_error(field, e),
            other => CliError::config(format!("invalid suite: {other}")),
        })?;
        Ok(s)
    }
}

fn field_error(field: &str, e: Error) -> CliError {
    match e {
        Error::InvalidParameter { field, reason } => {
            CliError::config(format!("invalid config field `{field}`: {reason}"))
        }
        other => CliError::config(format!("invalid config field `{field}`: {other}")),
    }
}

fn real(x: f64) -> String {
    format!("{x:.16e}")
}

/// `verify`: runs the identity suite; exit 1 if any identity fails.
pub fn cmd_verify(cfg: &RunConfig) -> CliResult<Outcome> {
    let suite = cfg.suite_config()?;
    let reports = run_all(&suite)?;
    let code = if reports.iter().all(|r| r.passed) {
        EXIT_OK
    } else {
        EXIT_CHECK_FAILED
    };
    let text = match cfg.format.unwrap_or(Format::Json) {
        Format::Json => to_json(&reports),
        Format::Csv => reports_csv(&reports),
    };
    Ok(Outcome { text, code })
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serialisable");
    s.push('\n');
    s
}

fn reports_csv(reports: &[IdentityReport]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["identity_name", "draws", "max_residual", "tol", "passed"])
        .expect("in-memory write");
    for r in reports {
        w.write_record([
            r.identity_name.clone(),
            r.draws.to_string(),
            real(r.max_residual),
            real(r.tol),
            r.passed.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory write")).expect("utf-8")
}

/// Residuals of a constructed Baecklund step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepResiduals {
    pub lax: f64,
    pub eigen: f64,
    pub kernel: f64,
    pub ks: f64,
}

impl StepResiduals {
    pub fn max(&self) -> f64 {
        self.lax.max(self.eigen).max(self.kernel).max(self.ks)
    }
}

/// Lax equation (worst over fixed probe points), eigenvector, kernel and KS residuals
/// (the latter relative to its largest term when that exceeds one) of a step.
pub fn step_residuals(step: &BacklundStep) -> crate::error::Result<StepResiduals> {
    let p = step.lambda().params();
    let mut lax: f64 = 0.0;
    for (s, t) in LAX_PROBES {
        let z = C64::new(s, 0.0) + p.tau() * t;
        lax = lax.max(lax_equation_residual(z, step)?);
    }
    let mut ks: f64 = 0.0;
    for kp in 0..p.n() {
        let (lhs, rhs, scale) =
            ks_identity_sides(step.lambda().lambda(), step.mu().lambda(), p.eta_n(), kp, p)?;
        ks = ks.max((lhs - rhs).norm() / scale.max(1.0));
    }
    Ok(StepResiduals {
        lax,
        eigen: eigenvector_residual(step)?,
        kernel: kernel_residual(step)?,
        ks,
    })
}

fn initial_data(cfg: &RunConfig, command: &str) -> CliResult<(ModelParams, WeightVector, Seed)> {
    let (params, lam) = cfg.model(command)?;
    let seed = match (&cfg.t0, &cfg.mu0) {
        (Some(t), None) => {
            if t.len() != lam.n() {
                return Err(CliError::config(format!(
                    "invalid config field `t0`: expected {} entries, got {}",
                    lam.n(),
                    t.len()
                )));
            }
            Seed::Weights(t.clone())
        }
        (None, Some(mu)) => Seed::Positions(
            WeightVector::new(mu.clone(), params).map_err(|e| field_error("mu0", e))?,
        ),
        (Some(_), Some(_)) => {
            return Err(CliError::config("config fields `t0` and `mu0` are mutually exclusive"))
        }
        (None, None) => {
            return Err(CliError::config(format!(
                "missing config field `t0` or `mu0` (required by {command})"
            )))
        }
    };
    Ok((params, lam, seed))
}

enum Seed {
    Weights(Vec<C64>),
    Positions(WeightVector),
}

/// `backlund`: one transformation from `(lambda0, t0)` (solving for `mu`) or from
/// `(lambda0, mu0)`; exit 1 if a residual exceeds the tolerance.
pub fn cmd_backlund(cfg: &RunConfig) -> CliResult<Outcome> {
    if cfg.format == Some(Format::Csv) {
        return Err(CliError::config("backlund writes JSON only"));
    }
    let (params, lam, seed) = initial_data(cfg, "backlund")?;
    let c = cfg.schedule().at(0);
    let u = cfg.u.unwrap_or(DEFAULT_U);
    let tol = cfg.threshold()?;
    let mu = match seed {
        Seed::Weights(t) => solve_next(&lam, &t, c, &cfg.solver_config()?, None)?,
        Seed::Positions(mu) => mu,
    };
    let step = BacklundStep::new(&lam, &mu, c, u)?;
    let residuals = step_residuals(&step)?;
    let passed = residuals.max() < tol;
    let doc = json!({
        "n": params.n(),
        "tau": params.tau(),
        "eta": params.eta(),
        "lambda": lam.lambda(),
        "t": step.t(),
        "c": c,
        "u": u,
        "v": step.v(),
        "mu": mu.lambda(),
        "t_tilde": step.t_tilde(),
        "C": step.c_weights(),
        "residuals": residuals,
        "tol": tol,
        "passed": passed,
    });
    Ok(Outcome {
        text: to_json(&doc),
        code: if passed { EXIT_OK } else { EXIT_CHECK_FAILED },
    })
}

/// Result of `evolve` before formatting.
#[derive(Debug, Clone)]
pub struct Evolution {
    pub trajectory: Trajectory,
    pub residuals: Vec<Vec<f64>>,
    /// Time step that could not be computed, with the reason.
    pub aborted: Option<(usize, String)>,
}

/// Runs the discrete dynamics described by the configuration.
pub fn evolve(cfg: &RunConfig) -> CliResult<Evolution> {
    let (_, lam, seed) = initial_data(cfg, "evolve")?;
    let schedule = cfg.schedule();
    let solver = cfg.solver_config()?;
    let c0 = schedule.at(0);
    let t0 = match seed {
        Seed::Weights(t) => t,
        Seed::Positions(mu) => backlund_t(&lam, &mu, c0)?,
    };
    let initial = PhaseConfig::new(lam, t0).map_err(|e| field_error("t0", e))?;
    let mut trajectory = Trajectory::new(initial, c0, cfg.u.unwrap_or(DEFAULT_U));
    let mut aborted = None;
    for a in 1..=cfg.steps.unwrap_or(DEFAULT_STEPS) {
        if let Err(e) = trajectory.step(schedule.at(a), &solver) {
            let err = CliError::from(e);
            if err.code != EXIT_NO_CONVERGENCE {
                return Err(err);
            }
            aborted = Some((a, err.message));
            break;
        }
    }
    let residuals = trajectory.residuals()?;
    Ok(Evolution {
        trajectory,
        residuals,
        aborted,
    })
}

/// `evolve`: writes the trajectory (CSV by default); exit 3 if a step failed, 1 if a
/// residual exceeds the tolerance.
pub fn cmd_evolve(cfg: &RunConfig) -> CliResult<Outcome> {
    let tol = cfg.threshold()?;
    let ev = evolve(cfg)?;
    let text = match cfg.format.unwrap_or(Format::Csv) {
        Format::Csv => trajectory_csv(&ev),
        Format::Json => trajectory_json(&ev),
    };
    let worst = ev.residuals.iter().flatten().fold(0.0f64, |m, &r| m.max(r));
    let code = if ev.aborted.is_some() {
        EXIT_NO_CONVERGENCE
    } else if worst < tol {
        EXIT_OK
    } else {
        EXIT_CHECK_FAILED
    };
    Ok(Outcome { text, code })
}

/// One row per `(a, k)`, `k` counted from 1, reals with 17 significant digits.
pub fn trajectory_csv(ev: &Evolution) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    for (p, res) in ev.trajectory.points().iter().zip(&ev.residuals) {
        for k in 0..p.t.len() {
            let lam = p.lambda.lambda()[k];
            w.write_record([
                p.a.to_string(),
                (k + 1).to_string(),
                real(lam.re),
                real(lam.im),
                real(p.t[k].re),
                real(p.t[k].im),
                real(p.c.re),
                real(p.c.im),
                real(res[k]),
            ])
            .expect("in-memory write");
        }
    }
    let mut text = String::from_utf8(w.into_inner().expect("in-memory write")).expect("utf-8");
    if let Some((a, reason)) = &ev.aborted {
        text.push_str(&format!("# aborted at step a={a}: {}\n", reason.replace('\n', " ")));
    }
    text
}

fn trajectory_json(ev: &Evolution) -> String {
    let points: Vec<_> = ev
        .trajectory
        .points()
        .iter()
        .zip(&ev.residuals)
        .map(|(p, r)| {
            json!({ "a": p.a, "lambda": p.lambda.lambda(), "t": p.t, "c": p.c, "rs_residual": r })
        })
        .collect();
    let params = ev.trajectory.params();
    to_json(&json!({
        "n": params.n(),
        "tau": params.tau(),
        "eta": params.eta(),
        "points": points,
        "aborted_at": ev.aborted.as_ref().map(|(a, _)| a),
        "abort_reason": ev.aborted.as_ref().map(|(_, m)| m),
    }))
}

/// A trajectory read back from CSV, with the residuals stored in the file.
#[derive(Debug, Clone)]
pub struct StoredTrajectory {
    pub trajectory: Trajectory,
    pub residuals: Vec<Vec<f64>>,
    pub trailer: Option<String>,
}

/// Parses a trajectory CSV written by `evolve` for the model `params`.
pub fn read_trajectory_csv(text: &str, params: ModelParams) -> CliResult<StoredTrajectory> {
    let bad = |msg: String| CliError::config(format!("malformed trajectory CSV: {msg}"));
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(bad("unexpected header".into()));
    }
    let n = params.n();
    let mut rows: Vec<(i64, Vec<f64>)> = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let a: i64 = rec[0].parse().map_err(|e| bad(format!("row {}: {e}", line + 1)))?;
        let vals = (1..9)
            .map(|i| rec[i].parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| bad(format!("row {}: {e}", line + 1)))?;
        rows.push((a, vals));
    }
    if rows.is_empty() || rows.len() % n != 0 {
        return Err(bad(format!("expected a multiple of {n} rows, got {}", rows.len())));
    }
    let mut points = Vec::new();
    let mut residuals = Vec::new();
    for chunk in rows.chunks(n) {
        let a = chunk[0].0;
        let mut lambda = Vec::with_capacity(n);
        let mut t = Vec::with_capacity(n);
        let mut res = Vec::with_capacity(n);
        for (k, (ak, v)) in chunk.iter().enumerate() {
            if *ak != a || v[0] as usize != k + 1 {
                return Err(bad(format!("rows of step {a} are not ordered by k")));
            }
            lambda.push(C64::new(v[1], v[2]));
            t.push(C64::new(v[3], v[4]));
            res.push(v[7]);
        }
        let c = C64::new(chunk[0].1[5], chunk[0].1[6]);
        let lambda = WeightVector::new(lambda, params)?;
        points.push(TrajectoryPoint { a, lambda, t, c });
        residuals.push(res);
    }
    let trailer = text
        .lines()
        .rev()
        .find(|l| l.starts_with('#'))
        .map(str::to_string);
    Ok(StoredTrajectory {
        trajectory: Trajectory::from_points(params, points)?,
        residuals,
        trailer,
    })
}

fn write_output(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => std::fs::write(p, text)
            .map_err(|e| CliError::config(format!("cannot write {}: {e}", p.display()))),
        None => {
            use std::io::Write;
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| CliError::config(format!("cannot write output: {e}")))
        }
    }
}

/// Runs a parsed command line and writes its output; returns the exit code.
pub fn execute(cli: &Cli) -> CliResult<i32> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.apply_overrides(cli);
    let outcome = match cli.command {
        Command::Verify => cmd_verify(&cfg)?,
        Command::Backlund => cmd_backlund(&cfg)?,
        Command::Evolve => cmd_evolve(&cfg)?,
    };
    write_output(cfg.output_path.as_deref(), &outcome.text)?;
    Ok(outcome.code)
}

/// Entry point of the `ellrs` binary.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> RunConfig {
        RunConfig::parse(
            r#"{
                "tau": [0.0, 1.0],
                "eta": [0.23, 0.0],
                "lambda0": [[0.11, 0.0], [0.43, 0.0], [-0.37, 0.0]],
                "mu0": [[0.05, 0.02], [0.36, -0.03], [-0.45, 0.01]],
                "c": [0.1, 0.0],
                "steps": 3
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn schedule_repeats_last_entry() {
        let s = CSchedule::PerStep(vec![C64::new(1.0, 0.0), C64::new(2.0, 0.0)]);
        assert_eq!(s.at(0).re, 1.0);
        assert_eq!(s.at(5).re, 2.0);
        let cfg = RunConfig::parse(r#"{"c": [[0.1, 0.0], [0.2, 0.0]]}"#).unwrap();
        assert_eq!(cfg.schedule().at(1), C64::new(0.2, 0.0));
        let cfg = RunConfig::parse(r#"{"c": [0.1, 0.5]}"#).unwrap();
        assert_eq!(cfg.schedule(), CSchedule::Constant(C64::new(0.1, 0.5)));
    }

    #[test]
    fn config_errors_name_the_field() {
        let e = RunConfig::parse(r#"{"tau": [0.0, 1.0], "eta": "x"}"#).unwrap_err();
        assert_eq!(e.code, EXIT_CONFIG);
        assert!(e.message.contains("eta"), "{}", e.message);
        let e = RunConfig::parse(r#"{"taus": 1}"#).unwrap_err();
        assert!(e.message.contains("taus"), "{}", e.message);
        let e = RunConfig::parse(r#"{"solver": {"tol": "a"}}"#).unwrap_err();
        assert!(e.message.contains("solver.tol"), "{}", e.message);
        let e = RunConfig::parse(r#"{"c": []}"#).unwrap_err();
        assert!(e.message.contains("`c`"), "{}", e.message);
        let cfg = RunConfig::parse(r#"{"tau": [0.0, -1.0]}"#).unwrap();
        let e = cmd_verify(&cfg).unwrap_err();
        assert_eq!(e.code, EXIT_CONFIG);
        assert!(e.message.contains("tau"), "{}", e.message);
    }

    #[test]
    fn backlund_from_positions_and_from_weights_agree() {
        let cfg = fixture();
        let out = cmd_backlund(&cfg).unwrap();
        assert_eq!(out.code, EXIT_OK, "{}", out.text);
        let doc: serde_json::Value = serde_json::from_str(&out.text).unwrap();
        let t: Vec<C64> = serde_json::from_value(doc["t"].clone()).unwrap();
        let mut cfg2 = cfg.clone();
        cfg2.mu0 = None;
        cfg2.t0 = Some(t);
        let out2 = cmd_backlund(&cfg2).unwrap();
        assert_eq!(out2.code, EXIT_OK);
        let doc2: serde_json::Value = serde_json::from_str(&out2.text).unwrap();
        let mu: Vec<C64> = serde_json::from_value(doc["mu"].clone()).unwrap();
        let mu2: Vec<C64> = serde_json::from_value(doc2["mu"].clone()).unwrap();
        for (a, b) in mu.iter().zip(&mu2) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn evolve_csv_round_trips() {
        let cfg = fixture();
        let ev = evolve(&cfg).unwrap();
        let text = trajectory_csv(&ev);
        assert_eq!(text.lines().count(), 1 + 4 * 3);
        let stored = read_trajectory_csv(&text, *ev.trajectory.params()).unwrap();
        assert_eq!(stored.trajectory.points(), ev.trajectory.points());
        let again = stored.trajectory.residuals().unwrap();
        for (a, b) in again.iter().flatten().zip(stored.residuals.iter().flatten()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn missing_seed_data_is_a_config_error() {
        let mut cfg = fixture();
        cfg.mu0 = None;
        assert_eq!(cmd_evolve(&cfg).unwrap_err().code, EXIT_CONFIG);
        cfg.t0 = Some(vec![C64::new(1.0, 0.0)]);
        assert_eq!(cmd_backlund(&cfg).unwrap_err().code, EXIT_CONFIG);
    }
}
