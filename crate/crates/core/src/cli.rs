//! Scenario files, CSV output and the `verify` / `simulate` / `compare`
//! commands behind the `minerr` binary.
//!
//! Exit codes: 0 success, 1 hypothesis or property failure, 2 input error.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::exprlang::{parse, Expr};
use crate::metrics::{
    dominance_margins, intersection, width_integral, MetricsReport, ORDER_ABS_TOL,
};
use crate::model::{DisturbanceEnvelope, ModelError, OutputTerm, PlantModel, Scenario};
use crate::numkit::{Matrix, Vector};
use crate::observer::{
    default_omega_samples, transform_plant, validate_gains, ActiveGains, GainReport, GainSet,
    ValidationFailure,
};
use crate::sim::{
    oracle_deviation, simulate, simulate_error_oracle, ErrorTrajectory, SimError, SimParams,
    SimStatus, Trajectory,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INPUT: i32 = 2;

/// Significant digits in CSV output.
pub const CSV_DIGITS: usize = 12;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {message}")]
    Input { path: String, message: String },
    #[error("usage: {0}")]
    Usage(String),
    #[error("{0}")]
    Failure(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Failure(_) => EXIT_FAILURE,
            CliError::Input { .. } | CliError::Usage(_) | CliError::Io { .. } => EXIT_INPUT,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dims {
    pub n: usize,
    pub p: usize,
    pub q: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct YTermFile {
    /// 1-based output index.
    pub j: usize,
    pub matrix: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AFile {
    #[serde(rename = "const")]
    pub constant: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub y_terms: Vec<YTermFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeltaFile {
    #[serde(rename = "true")]
    pub truth: Vec<String>,
    pub upper: Vec<String>,
    pub lower: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsFile {
    pub upper: Vec<Vec<Vec<f64>>>,
    pub lower: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitFile {
    pub x0: Vec<f64>,
    pub xbar0: Vec<f64>,
    pub xlower0: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimFile {
    pub dt: f64,
    pub t_end: f64,
    #[serde(default = "default_stride")]
    pub record_stride: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub divergence_threshold: Option<f64>,
}

fn default_stride() -> usize {
    1
}

/// On-disk scenario description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub dims: Dims,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    #[serde(rename = "A")]
    pub a: AFile,
    pub beta: Vec<String>,
    #[serde(default)]
    pub u: Vec<String>,
    pub delta: DeltaFile,
    pub gains: GainsFile,
    pub init: InitFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transform: Option<Vec<Vec<f64>>>,
    pub sim: SimFile,
}

/// Why a scenario could not be loaded.
#[derive(Debug, Error)]
pub enum LoadError {
    #[error("{path}: {location}: {message}")]
    Invalid {
        path: String,
        location: String,
        message: String,
    },
    /// Structurally fine, but `xlower0 ≤ x0 ≤ xbar0` fails.
    #[error("{path}: init: {source}")]
    InitialFrames { path: String, source: ModelError },
}

impl From<LoadError> for CliError {
    fn from(e: LoadError) -> Self {
        match e {
            LoadError::Invalid {
                path,
                location,
                message,
            } => CliError::Input {
                path,
                message: format!("{location}: {message}"),
            },
            LoadError::InitialFrames { .. } => CliError::Failure(e.to_string()),
        }
    }
}

struct Ctx<'a> {
    path: &'a str,
}

impl Ctx<'_> {
    fn err(&self, location: impl Into<String>, message: impl ToString) -> LoadError {
        LoadError::Invalid {
            path: self.path.to_string(),
            location: location.into(),
            message: message.to_string(),
        }
    }

    fn matrix(
        &self,
        location: &str,
        rows: &[Vec<f64>],
        shape: (usize, usize),
    ) -> Result<Matrix, LoadError> {
        let m = Matrix::from_rows(rows).map_err(|e| self.err(location, e))?;
        if m.shape() != shape {
            return Err(self.err(
                location,
                format!(
                    "expected a {}x{} matrix, got {}x{}",
                    shape.0,
                    shape.1,
                    m.rows(),
                    m.cols()
                ),
            ));
        }
        Ok(m)
    }

    fn vector(&self, location: &str, v: &[f64], n: usize) -> Result<Vector, LoadError> {
        if v.len() != n {
            return Err(self.err(location, format!("expected {n} entries, got {}", v.len())));
        }
        Vector::new(v.to_vec()).map_err(|e| self.err(location, e))
    }

    fn exprs(&self, location: &str, src: &[String], n: usize) -> Result<Vec<Expr>, LoadError> {
        if src.len() != n {
            return Err(self.err(
                location,
                format!("expected {n} expressions, got {}", src.len()),
            ));
        }
        src.iter()
            .enumerate()
            .map(|(i, s)| {
                parse(s)
                    .map_err(|e| self.err(format!("{location}[{i}]"), format!("{e} in \"{s}\"")))
            })
            .collect()
    }
}

impl ScenarioFile {
    pub fn from_json(text: &str, path: &str) -> Result<Self, LoadError> {
        serde_json::from_str(text).map_err(|e| LoadError::Invalid {
            path: path.to_string(),
            location: format!("line {} column {}", e.line(), e.column()),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, LoadError> {
        let p = path.display().to_string();
        let text = fs::read_to_string(path).map_err(|e| LoadError::Invalid {
            path: p.clone(),
            location: "file".into(),
            message: e.to_string(),
        })?;
        ScenarioFile::from_json(&text, &p)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Schema-level checks, then model construction with all invariants.
    pub fn to_scenario(&self, path: &str) -> Result<Scenario, LoadError> {
        let cx = Ctx { path };
        let Dims { n, p, q } = self.dims;
        if n == 0 || p == 0 {
            return Err(cx.err("dims", "n and p must be positive"));
        }
        let c = cx.matrix("C", &self.c, (p, n))?;
        let a_const = cx.matrix("A.const", &self.a.constant, (n, n))?;
        let mut a_terms = Vec::new();
        for (k, term) in self.a.y_terms.iter().enumerate() {
            let loc = format!("A.y_terms[{k}]");
            if !(1..=p).contains(&term.j) {
                return Err(cx.err(
                    format!("{loc}.j"),
                    format!("output index must be in 1..={p}, got {}", term.j),
                ));
            }
            let matrix = cx.matrix(&format!("{loc}.matrix"), &term.matrix, (n, n))?;
            a_terms.push(OutputTerm {
                output: term.j - 1,
                matrix,
            });
        }
        let beta = cx.exprs("beta", &self.beta, n)?;
        let u = cx.exprs("u", &self.u, q)?;
        let plant =
            PlantModel::new(c, a_const, a_terms, beta, u).map_err(|e| cx.err("model", e))?;

        let envelope = DisturbanceEnvelope::new(
            cx.exprs("delta.true", &self.delta.truth, n)?,
            cx.exprs("delta.upper", &self.delta.upper, n)?,
            cx.exprs("delta.lower", &self.delta.lower, n)?,
        )
        .map_err(|e| cx.err("delta", e))?;

        let gain_list = |family: &str, list: &[Vec<Vec<f64>>]| -> Result<Vec<Matrix>, LoadError> {
            list.iter()
                .enumerate()
                .map(|(k, g)| cx.matrix(&format!("gains.{family}[{k}]"), g, (n, p)))
                .collect()
        };
        let gains = GainSet::new(
            gain_list("upper", &self.gains.upper)?,
            gain_list("lower", &self.gains.lower)?,
        )
        .map_err(|e| cx.err("gains", e))?;

        let x0 = cx.vector("init.x0", &self.init.x0, n)?;
        let xbar0 = cx.vector("init.xbar0", &self.init.xbar0, n)?;
        let xlower0 = cx.vector("init.xlower0", &self.init.xlower0, n)?;
        let transform = match &self.transform {
            Some(rows) => Some(cx.matrix("transform", rows, (n, n))?),
            None => None,
        };
        let mut sim = SimParams::new(self.sim.dt, self.sim.t_end, self.sim.record_stride)
            .map_err(|e| cx.err("sim", e))?;
        if let Some(th) = self.sim.divergence_threshold {
            sim = sim
                .with_threshold(th)
                .map_err(|e| cx.err("sim.divergence_threshold", e))?;
        }

        Scenario::new(plant, envelope, gains, x0, xbar0, xlower0, transform, sim).map_err(|e| {
            match e {
                ModelError::InitialFrames { .. } => LoadError::InitialFrames {
                    path: path.to_string(),
                    source: e,
                },
                ModelError::SingularTransform(_) => cx.err("transform", e),
                other => cx.err("scenario", other),
            }
        })
    }
}

pub fn load_scenario(path: &Path) -> Result<Scenario, LoadError> {
    ScenarioFile::load(path)?.to_scenario(&path.display().to_string())
}

/// Plant model in the observer's coordinates (transformed when `R` is set).
pub fn observer_plant(scenario: &Scenario) -> Result<PlantModel, CliError> {
    match &scenario.transform {
        None => Ok(scenario.plant.clone()),
        Some(r) => transform_plant(&scenario.plant, r)
            .map(|(p, _)| p)
            .map_err(|e| CliError::Failure(format!("transform: {e}"))),
    }
}

pub fn check_gains(scenario: &Scenario) -> Result<Result<GainReport, ValidationFailure>, CliError> {
    let plant = observer_plant(scenario)?;
    Ok(validate_gains(
        &plant,
        &scenario.gains,
        &default_omega_samples(plant.p()),
    ))
}

/// Formats with `digits` significant digits, `%g`-style.
pub fn format_sig(x: f64, digits: usize) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -5 || exp >= digits as i32 {
        let m = trim_zeros(mantissa);
        format!("{m}e{exp}")
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn trajectory_header(n: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    for prefix in ["x", "xbar", "xlower", "upidx", "loidx"] {
        h.extend((1..=n).map(|i| format!("{prefix}_{i}")));
    }
    h
}

pub fn write_trajectory_csv<W: Write>(out: W, traj: &Trajectory) -> Result<(), csv::Error> {
    let n = traj.n();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(trajectory_header(n))?;
    for k in 0..traj.len() {
        let mut row = vec![format_sig(traj.times[k], CSV_DIGITS)];
        for block in [&traj.x[k], &traj.xbar[k], &traj.xlower[k]] {
            row.extend(block.iter().map(|v| format_sig(*v, CSV_DIGITS)));
        }
        row.extend(traj.active[k].upper_idx.iter().map(|i| i.to_string()));
        row.extend(traj.active[k].lower_idx.iter().map(|i| i.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Error)]
pub enum CsvReadError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("header has {0} columns, expected 1 + 5n")]
    Columns(usize),
    #[error("row {row}: {message}")]
    Value { row: usize, message: String },
}

/// Reads a `trajectory.csv`; the status is not stored and comes back as `Completed`.
pub fn read_trajectory_csv<R: Read>(input: R) -> Result<Trajectory, CsvReadError> {
    let mut r = csv::Reader::from_reader(input);
    let cols = r.headers()?.len();
    if cols < 6 || (cols - 1) % 5 != 0 {
        return Err(CsvReadError::Columns(cols));
    }
    let n = (cols - 1) / 5;
    let mut traj = Trajectory {
        times: Vec::new(),
        x: Vec::new(),
        xbar: Vec::new(),
        xlower: Vec::new(),
        active: Vec::new(),
        status: SimStatus::Completed,
    };
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let num = |j: usize| -> Result<f64, CsvReadError> {
            rec[j].parse().map_err(|e| CsvReadError::Value {
                row,
                message: format!("column {j}: {e}"),
            })
        };
        let idx = |j: usize| -> Result<usize, CsvReadError> {
            rec[j].parse().map_err(|e| CsvReadError::Value {
                row,
                message: format!("column {j}: {e}"),
            })
        };
        traj.times.push(num(0)?);
        let block = |b: usize| -> Result<Vector, CsvReadError> {
            Ok(Vector::raw(
                (0..n)
                    .map(|i| num(1 + b * n + i))
                    .collect::<Result<_, _>>()?,
            ))
        };
        traj.x.push(block(0)?);
        traj.xbar.push(block(1)?);
        traj.xlower.push(block(2)?);
        traj.active.push(ActiveGains {
            upper_idx: (0..n)
                .map(|i| idx(1 + 3 * n + i))
                .collect::<Result<_, _>>()?,
            lower_idx: (0..n)
                .map(|i| idx(1 + 4 * n + i))
                .collect::<Result<_, _>>()?,
        });
    }
    Ok(traj)
}

pub fn write_error_csv<W: Write>(out: W, err: &ErrorTrajectory) -> Result<(), csv::Error> {
    let n = err.x.first().map_or(0, |v| v.dim());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    for prefix in ["x", "ebar", "elower"] {
        header.extend((1..=n).map(|i| format!("{prefix}_{i}")));
    }
    w.write_record(&header)?;
    for k in 0..err.times.len() {
        let mut row = vec![format_sig(err.times[k], CSV_DIGITS)];
        for block in [&err.x[k], &err.ebar[k], &err.elower[k]] {
            row.extend(block.iter().map(|v| format_sig(*v, CSV_DIGITS)));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Result of a command: exit code plus a JSON report for stdout.
#[derive(Debug, Clone)]
pub struct CommandOutput {
    pub exit_code: i32,
    pub report: Value,
}

fn gain_report_json(report: &Result<GainReport, ValidationFailure>) -> Value {
    match report {
        Ok(r) => json!({
            "pass": true,
            "metzler_verification": r.metzler_verification,
            "certificate_verification": r.certificate_verification,
            "gains": r.checks,
            "first_feasible": r.first_feasible,
            "best": r.best,
        }),
        Err(f) => json!({
            "pass": false,
            "violations": f.metzler,
            "missing_certificate": f.missing_certificate,
            "gains": f.checks,
        }),
    }
}

pub fn cmd_verify(path: &Path) -> Result<CommandOutput, CliError> {
    let scenario = match load_scenario(path) {
        Ok(s) => s,
        Err(e @ LoadError::InitialFrames { .. }) => {
            return Ok(CommandOutput {
                exit_code: EXIT_FAILURE,
                report: json!({
                    "scenario": path.display().to_string(),
                    "initial_frames": false,
                    "error": e.to_string(),
                    "hypotheses_hold": false,
                }),
            });
        }
        Err(e) => return Err(e.into()),
    };
    let gains = check_gains(&scenario)?;
    let ok = gains.is_ok();
    Ok(CommandOutput {
        exit_code: if ok { EXIT_OK } else { EXIT_FAILURE },
        report: json!({
            "scenario": path.display().to_string(),
            "phi": scenario.gains.phi(),
            "initial_frames": true,
            "gain_check": gain_report_json(&gains),
            "hypotheses_hold": ok,
        }),
    })
}

#[derive(Debug, Clone, Default)]
pub struct SimulateOptions {
    pub dt: Option<f64>,
    pub t_end: Option<f64>,
    pub oracle: bool,
    pub force: bool,
}

fn apply_overrides(
    scenario: &Scenario,
    dt: Option<f64>,
    t_end: Option<f64>,
    path: &Path,
) -> Result<Scenario, CliError> {
    let mut sim = scenario.sim.clone();
    if let Some(dt) = dt {
        sim.dt = dt;
    }
    if let Some(t) = t_end {
        sim.t_end = t;
    }
    sim.validate().map_err(|e| CliError::Input {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    Ok(scenario.with_sim(sim))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    fs::write(path, contents).map_err(io_err(path))
}

fn write_json(path: &Path, value: &Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("json serializes");
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn write_traj(path: &Path, traj: &Trajectory) -> Result<(), CliError> {
    let mut buf = Vec::new();
    write_trajectory_csv(&mut buf, traj).map_err(|e| CliError::Failure(format!("csv: {e}")))?;
    write_file(path, &buf)
}

fn prepare_out(out: &Path) -> Result<PathBuf, CliError> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    Ok(out.to_path_buf())
}

pub fn cmd_simulate(
    path: &Path,
    out: &Path,
    opts: &SimulateOptions,
) -> Result<CommandOutput, CliError> {
    let scenario = load_scenario(path)?;
    let scenario = apply_overrides(&scenario, opts.dt, opts.t_end, path)?;
    let gains = check_gains(&scenario)?;
    if gains.is_err() && !opts.force {
        return Ok(CommandOutput {
            exit_code: EXIT_FAILURE,
            report: json!({
                "error": "gain hypotheses do not hold; run `minerr verify` for details or pass --force",
                "gain_check": gain_report_json(&gains),
            }),
        });
    }
    let out = prepare_out(out)?;
    let metrics_path = out.join("metrics.json");
    let mut meta = serde_json::Map::new();
    meta.insert(
        "generated_at".into(),
        json!(chrono::Utc::now().to_rfc3339()),
    );
    meta.insert("scenario".into(), json!(path.display().to_string()));
    meta.insert("dt".into(), json!(scenario.sim.dt));
    meta.insert("t_end".into(), json!(scenario.sim.t_end));
    meta.insert("forced".into(), json!(gains.is_err()));

    let traj = match simulate(&scenario) {
        Ok(t) => t,
        Err(SimError::Envelope(v)) => {
            meta.insert("status".into(), json!("envelope_violation"));
            meta.insert("error".into(), json!(v.to_string()));
            let report = Value::Object(meta);
            write_json(&metrics_path, &report)?;
            return Ok(CommandOutput {
                exit_code: EXIT_FAILURE,
                report,
            });
        }
        Err(e) => return Err(CliError::Failure(e.to_string())),
    };
    write_traj(&out.join("trajectory.csv"), &traj)?;

    // certificate checks only make sense in the trajectory's coordinates
    let certs = match (&gains, &scenario.transform) {
        (Ok(r), None) => Some(r.best.clone()),
        _ => None,
    };
    let report = MetricsReport::compute(&traj, &scenario.envelope, certs.as_ref())
        .map_err(|e| CliError::Failure(format!("metrics: {e}")))?;
    let mut metrics = match serde_json::to_value(&report).expect("metrics serialize") {
        Value::Object(m) => m,
        _ => unreachable!("report is a struct"),
    };
    metrics.extend(meta);

    if opts.oracle {
        match simulate_error_oracle(&scenario) {
            Ok(err) => {
                let mut buf = Vec::new();
                write_error_csv(&mut buf, &err)
                    .map_err(|e| CliError::Failure(format!("csv: {e}")))?;
                write_file(&out.join("error_oracle.csv"), &buf)?;
                let dev = if scenario.transform.is_none() {
                    oracle_deviation(&traj, &err)
                } else {
                    None
                };
                metrics.insert("oracle_sup_deviation".into(), json!(dev));
            }
            Err(e) => {
                metrics.insert("oracle_error".into(), json!(e.to_string()));
            }
        }
    }
    let report = Value::Object(metrics);
    write_json(&metrics_path, &report)?;
    let exit_code = match traj.status {
        SimStatus::Completed => EXIT_OK,
        SimStatus::Diverged { .. } => EXIT_FAILURE,
    };
    Ok(CommandOutput { exit_code, report })
}

/// Runs the multi-gain observer and each single-gain pair `(L̄_k, L̲_k)`.
pub fn run_comparison(scenario: &Scenario) -> Result<(Trajectory, Vec<Trajectory>), CliError> {
    let phi = scenario.gains.phi();
    let variants: Vec<Scenario> = std::iter::once(Ok(scenario.clone()))
        .chain((1..=phi).map(|k| scenario.with_gains(scenario.gains.single(k))))
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Failure(e.to_string()))?;
    let results: Vec<Result<Trajectory, SimError>> = std::thread::scope(|s| {
        let handles: Vec<_> = variants
            .iter()
            .map(|sc| s.spawn(move || simulate(sc)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("simulation worker panicked"))
            .collect()
    });
    let mut trajs = Vec::with_capacity(results.len());
    for (k, r) in results.into_iter().enumerate() {
        let t = r.map_err(|e| CliError::Failure(format!("run {k}: {e}")))?;
        if let SimStatus::Diverged { t_escape } = t.status {
            return Err(CliError::Failure(format!(
                "run {k} diverged at t={t_escape}"
            )));
        }
        trajs.push(t);
    }
    let multi = trajs.remove(0);
    Ok((multi, trajs))
}

pub fn cmd_compare(path: &Path, out: &Path) -> Result<CommandOutput, CliError> {
    let scenario = load_scenario(path)?;
    let phi = scenario.gains.phi();
    if phi < 2 {
        return Err(CliError::Usage(format!(
            "compare needs at least two gains, {} has phi = {phi}",
            path.display()
        )));
    }
    let (multi, singles) = run_comparison(&scenario)?;
    let margins =
        dominance_margins(&multi, &singles).map_err(|e| CliError::Failure(e.to_string()))?;
    let margin = margins.iter().copied().fold(f64::INFINITY, f64::min);
    let (iu, il) = intersection(&singles).map_err(|e| CliError::Failure(e.to_string()))?;

    let n = multi.n();
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("multi_w_{i}")));
    for k in 1..=phi {
        header.extend((1..=n).map(|i| format!("single{k}_w_{i}")));
    }
    header.extend((1..=n).map(|i| format!("intersection_w_{i}")));

    let mut buf = Vec::new();
    let mut intersection_margin = f64::INFINITY;
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(&header)
            .map_err(|e| CliError::Failure(e.to_string()))?;
        for k in 0..multi.len() {
            let mut row = vec![format_sig(multi.times[k], CSV_DIGITS)];
            row.extend(
                (0..n).map(|i| format_sig(multi.xbar[k][i] - multi.xlower[k][i], CSV_DIGITS)),
            );
            for s in &singles {
                row.extend((0..n).map(|i| format_sig(s.xbar[k][i] - s.xlower[k][i], CSV_DIGITS)));
            }
            row.extend((0..n).map(|i| format_sig(iu[k][i] - il[k][i], CSV_DIGITS)));
            for i in 0..n {
                intersection_margin = intersection_margin
                    .min(iu[k][i] - multi.xbar[k][i])
                    .min(multi.xlower[k][i] - il[k][i]);
            }
            w.write_record(&row)
                .map_err(|e| CliError::Failure(e.to_string()))?;
        }
        w.flush().map_err(io_err(out))?;
    }
    let out = prepare_out(out)?;
    write_file(&out.join("comparison.csv"), &buf)?;

    let pass = margin >= -ORDER_ABS_TOL;
    let report = json!({
        "scenario": path.display().to_string(),
        "phi": phi,
        "samples": multi.len(),
        "dominance_margins": margins,
        "dominance_margin": margin,
        "intersection_margin": intersection_margin,
        "width_integral": {
            "multi": width_integral(&multi),
            "singles": singles.iter().map(width_integral).collect::<Vec<_>>(),
        },
        "pass": pass,
    });
    write_json(&out.join("comparison.json"), &report)?;
    Ok(CommandOutput {
        exit_code: if pass { EXIT_OK } else { EXIT_FAILURE },
        report,
    })
}
