//! End-to-end runs: validation, continuation, limit extraction, estimates,
//! probes, and the files they leave behind.
//!
//! Field files are CSV with a header line `# N=.. n=.. h=..` followed by
//! rows `x1[,x2[,x3]],value` in grid order. The optional binary twin of a
//! field family (`u.bin`, `theta.bin`) starts with the magic bytes `MFGW1`,
//! then `N`, `n` and the number of fields `d` as little-endian `u32`, then
//! the `d n^N` values as little-endian `f64`.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::diagnostics::{
    check_lower_bound, estimate_report, monotonicity_gap, oracle_solve, EstimateReport,
    LowerBoundCheck, MonotonicityGap,
};
use crate::error::{Error, Result};
use crate::grid::{GridField, PeriodicGrid};
use crate::limit::{
    cauchy_table, complementarity_gap, obstacle_residual, support_leak, switching_currents, EpsStudy,
    ModeObstacle, PairValue, SUPPORT_DELTA,
};
use crate::model::{validate, ModelSpec, ValidationReport};
use crate::solver::{
    continuation_run, newton_solve, residual, ContinuationSchedule, NewtonOptions, SolveReport,
    SolverState, StepParams,
};

pub const REPORT_SCHEMA: &str = "switchmfg-run-report";
pub const REPORT_VERSION: u32 = 1;
pub const REPORT_FILE: &str = "report.json";
pub const LOCK_FILE: &str = ".switchmfg.lock";
pub const BINARY_MAGIC: &[u8; 5] = b"MFGW1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureKind {
    Config,
    Validation,
    Solver,
    Io,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub kind: FailureKind,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub params: Option<StepParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub kind: String,
    /// Path relative to the report.
    pub path: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualSummary {
    pub hj_sup: f64,
    pub fp_sup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitSummary {
    pub eps: f64,
    pub obstacle: Vec<ModeObstacle>,
    pub max_obstacle_violation: f64,
    pub current_mass: Vec<PairValue>,
    pub complementarity: Vec<PairValue>,
    pub support_leak: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniquenessProbe {
    pub seed: u64,
    pub perturbation: f64,
    /// Sup distance between the two perturbed solves.
    pub distance: f64,
    /// Sup distance of the first perturbed solve from the main solution.
    pub distance_to_main: f64,
    pub gap: MonotonicityGap,
    pub iterations: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleProbe {
    pub distance: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProbeResults {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub uniqueness: Option<UniquenessProbe>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub eps_study: Option<EpsStudy>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub oracle: Option<OracleProbe>,
    /// Probes that were requested but skipped, with the reason.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub skipped: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema: String,
    pub version: u32,
    pub package_version: String,
    pub status: RunStatus,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub failure: Option<Failure>,
    pub config: RunConfig,
    pub validation: ValidationReport,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub final_params: Option<StepParams>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub solve: Option<SolveReport>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub residual: Option<ResidualSummary>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub limit: Option<LimitSummary>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub estimates: Option<EstimateReport>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lower_bound: Option<LowerBoundCheck>,
    pub probes: ProbeResults,
    pub files: Vec<FileEntry>,
}

impl RunReport {
    fn new(config: &RunConfig, validation: ValidationReport) -> Self {
        Self {
            schema: REPORT_SCHEMA.into(),
            version: REPORT_VERSION,
            package_version: env!("CARGO_PKG_VERSION").into(),
            status: RunStatus::Ok,
            failure: None,
            config: config.clone(),
            validation,
            final_params: None,
            solve: None,
            residual: None,
            limit: None,
            estimates: None,
            lower_bound: None,
            probes: ProbeResults::default(),
            files: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidModel(format!("malformed report: {e}")))
    }

    /// Zeroes every timing field, leaving what must be reproducible.
    pub fn without_timings(mut self) -> Self {
        if let Some(solve) = &mut self.solve {
            for step in &mut solve.steps {
                step.wall_time_s = 0.0;
            }
        }
        self
    }
}

/// Output of a successful run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub state: SolverState,
    pub model: ModelSpec,
    pub dir: PathBuf,
}

/// A failed run: the error and, when the run got far enough to write one,
/// the report describing the failure.
#[derive(Debug)]
pub struct RunFailure {
    pub error: Error,
    pub report: Option<Box<RunReport>>,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.error.fmt(f)
    }
}

impl std::error::Error for RunFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<Error> for RunFailure {
    fn from(error: Error) -> Self {
        RunFailure { error, report: None }
    }
}

/// Writes files atomically into one directory and removes everything it
/// wrote if dropped before [`Writer::commit`].
struct Writer {
    dir: PathBuf,
    written: Vec<PathBuf>,
    lock: PathBuf,
    committed: bool,
}

impl Writer {
    fn open(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let lock = dir.join(LOCK_FILE);
        OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&lock)
            .map_err(|e| Error::io(&lock, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
            lock,
            committed: false,
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let target = self.dir.join(name);
        let tmp = self.dir.join(format!(".{name}.tmp"));
        let result = (|| {
            let mut f = File::create(&tmp)?;
            f.write_all(bytes)?;
            f.sync_all()?;
            fs::rename(&tmp, &target)
        })();
        if let Err(e) = result {
            let _ = fs::remove_file(&tmp);
            return Err(Error::io(&target, e));
        }
        self.written.push(target);
        Ok(())
    }

    fn commit(mut self) {
        self.committed = true;
    }
}

impl Drop for Writer {
    fn drop(&mut self) {
        if !self.committed {
            for path in &self.written {
                let _ = fs::remove_file(path);
            }
        }
        let _ = fs::remove_file(&self.lock);
    }
}

/// CSV text of one field.
pub fn field_csv(field: &GridField) -> String {
    let grid = field.grid();
    let mut out = format!(
        "# N={} n={} h={}\n",
        grid.dim(),
        grid.points_per_axis(),
        grid.spacing()
    );
    for k in 0..grid.len() {
        for x in grid.position(k) {
            out.push_str(&format!("{x},"));
        }
        out.push_str(&format!("{}\n", field[k]));
    }
    out
}

/// Reads a field written by [`field_csv`].
pub fn read_field_csv(text: &str) -> Result<GridField> {
    let bad = |msg: String| Error::InvalidModel(format!("field file: {msg}"));
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty".into()))?;
    let mut dim = None;
    let mut points = None;
    for word in header.trim_start_matches('#').split_whitespace() {
        match word.split_once('=') {
            Some(("N", v)) => dim = v.parse::<usize>().ok(),
            Some(("n", v)) => points = v.parse::<usize>().ok(),
            _ => {}
        }
    }
    let (Some(dim), Some(points)) = (dim, points) else {
        return Err(bad(format!("bad header '{header}'")));
    };
    let grid = PeriodicGrid::new(dim, points)?;
    let values = lines
        .map(|l| {
            l.rsplit(',')
                .next()
                .and_then(|v| v.trim().parse::<f64>().ok())
                .ok_or_else(|| bad(format!("bad row '{l}'")))
        })
        .collect::<Result<Vec<f64>>>()?;
    grid.field(values)
}

/// Binary encoding of fields sharing one grid.
pub fn fields_binary(fields: &[GridField]) -> Vec<u8> {
    let grid = fields[0].grid();
    let mut out = Vec::with_capacity(17 + 8 * grid.len() * fields.len());
    out.extend_from_slice(BINARY_MAGIC);
    for v in [grid.dim(), grid.points_per_axis(), fields.len()] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for f in fields {
        for v in f.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn read_fields_binary(bytes: &[u8]) -> Result<Vec<GridField>> {
    let bad = |msg: &str| Error::InvalidModel(format!("binary field file: {msg}"));
    if bytes.len() < 17 || &bytes[..5] != BINARY_MAGIC {
        return Err(bad("missing MFGW1 header"));
    }
    let word = |k: usize| u32::from_le_bytes(bytes[5 + 4 * k..9 + 4 * k].try_into().expect("4 bytes")) as usize;
    let (dim, points, count) = (word(0), word(1), word(2));
    let grid = PeriodicGrid::new(dim, points)?;
    let body = &bytes[17..];
    if body.len() != 8 * grid.len() * count {
        return Err(bad("length does not match header"));
    }
    body.chunks_exact(8 * grid.len())
        .map(|chunk| {
            grid.field(
                chunk
                    .chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                    .collect(),
            )
        })
        .collect()
}

fn solver_failure(report: &mut RunReport, error: &Error) {
    report.status = RunStatus::Failed;
    let params = match error {
        Error::NonConvergence { params, report: partial, .. } => {
            report.solve = Some((**partial).clone());
            Some(*params)
        }
        Error::LinearSolve { params, .. } => Some(*params),
        _ => None,
    };
    report.failure = Some(Failure {
        kind: FailureKind::Solver,
        message: error.to_string(),
        params,
    });
}

/// Perturbs `u` additively and `theta` multiplicatively by uniform noise of
/// the given amplitude.
pub fn perturb(state: &SolverState, amplitude: f64, rng: &mut ChaCha8Rng) -> SolverState {
    let mut out = state.clone();
    for f in &mut out.u {
        for v in f.values_mut() {
            *v += amplitude * rng.random_range(-1.0..=1.0);
        }
    }
    for f in &mut out.theta {
        for v in f.values_mut() {
            *v *= 1.0 + amplitude * rng.random_range(-1.0..=1.0);
        }
    }
    out
}

/// Re-solves at `params` from two seeded perturbations of `state`.
pub fn uniqueness_probe(
    model: &ModelSpec,
    state: &SolverState,
    params: StepParams,
    opts: &NewtonOptions,
    seed: u64,
    amplitude: f64,
) -> Result<UniquenessProbe> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start_a = perturb(state, amplitude, &mut rng);
    let start_b = perturb(state, amplitude, &mut rng);
    let (a, rep_a) = newton_solve(model, &start_a, params, opts)?;
    let (b, rep_b) = newton_solve(model, &start_b, params, opts)?;
    Ok(UniquenessProbe {
        seed,
        perturbation: amplitude,
        distance: a.sup_distance(&b),
        distance_to_main: a.sup_distance(state),
        gap: monotonicity_gap(model, &a, &b, params.eps)?,
        iterations: [rep_a.total_iterations(), rep_b.total_iterations()],
    })
}

/// Everything computed by a run before anything is written.
struct Computed {
    report: RunReport,
    state: SolverState,
    model: ModelSpec,
    obstacle_fields: Vec<GridField>,
    currents: Vec<(usize, usize, GridField)>,
}

fn compute(config: &RunConfig) -> std::result::Result<Computed, RunFailure> {
    let model = config.build_model().map_err(Error::Config)?;
    let schedule: ContinuationSchedule = config.schedule(&model.grid).map_err(Error::InvalidSchedule)?;
    let opts = config.newton_options();
    let validation = validate(&model);
    let mut report = RunReport::new(config, validation.clone());
    if !validation.passed() {
        let message = validation
            .failures()
            .map(|e| format!("{}: {}", e.check, e.detail))
            .collect::<Vec<_>>()
            .join("; ");
        report.status = RunStatus::Failed;
        report.failure = Some(Failure {
            kind: FailureKind::Validation,
            message: message.clone(),
            params: None,
        });
        return Err(RunFailure {
            error: Error::InvalidModel(message),
            report: Some(Box::new(report)),
        });
    }

    let params = schedule.final_params();
    report.final_params = Some(params);
    let probes = &config.probes;
    let outcome = match continuation_run(&model, &schedule, &opts, probes.eps_study) {
        Ok(o) => o,
        Err(error) => {
            if error.is_solver_failure() {
                solver_failure(&mut report, &error);
                return Err(RunFailure {
                    error,
                    report: Some(Box::new(report)),
                });
            }
            return Err(error.into());
        }
    };
    let state = outcome.state;
    report.solve = Some(outcome.report);

    let r = residual(&model, &state, params)?;
    report.residual = Some(ResidualSummary {
        hj_sup: r.hj.iter().map(GridField::sup_norm).fold(0.0, f64::max),
        fp_sup: r.fp.iter().map(GridField::sup_norm).fold(0.0, f64::max),
    });
    let nu = switching_currents(&model, &state, params.eps)?;
    let obstacle = obstacle_residual(&model, &state)?;
    report.limit = Some(LimitSummary {
        eps: params.eps,
        obstacle: obstacle.modes.clone(),
        max_obstacle_violation: obstacle.max_obstacle_violation(),
        current_mass: nu
            .pairs()
            .map(|(i, j)| PairValue {
                from: i + 1,
                to: j + 1,
                value: crate::grid::integrate(nu.get(i, j)),
            })
            .collect(),
        complementarity: complementarity_gap(&model, &state, &nu),
        support_leak: support_leak(&model, &state, &nu, SUPPORT_DELTA),
    });
    report.estimates = Some(estimate_report(&model, &state, params.eps)?);
    report.lower_bound = Some(check_lower_bound(&model, &state, opts.theta_floor));

    if probes.eps_study {
        if outcome.trajectory.len() >= 3 {
            report.probes.eps_study = Some(cauchy_table(&model, &outcome.trajectory)?);
        } else {
            report
                .probes
                .skipped
                .push("eps_study: needs at least 3 penalty levels".into());
        }
    }
    if probes.uniqueness {
        match uniqueness_probe(&model, &state, params, &opts, probes.seed, probes.perturbation) {
            Ok(p) => report.probes.uniqueness = Some(p),
            Err(e) if e.is_solver_failure() => report.probes.skipped.push(format!("uniqueness: {e}")),
            Err(e) => return Err(e.into()),
        }
    }
    if probes.oracle {
        let points = model.modes() * model.grid.len();
        if points > probes.oracle_max_points {
            report.probes.skipped.push(format!(
                "oracle: {points} grid values exceed the limit of {}",
                probes.oracle_max_points
            ));
        } else {
            match oracle_solve(&model, params, &opts) {
                Ok((s, iterations)) => {
                    report.probes.oracle = Some(OracleProbe {
                        distance: s.sup_distance(&state),
                        iterations,
                    })
                }
                Err(e) if e.is_solver_failure() => report.probes.skipped.push(format!("oracle: {e}")),
                Err(e) => return Err(e.into()),
            }
        }
    }

    let currents = nu.pairs().map(|(i, j)| (i, j, nu.get(i, j).clone())).collect();
    Ok(Computed {
        report,
        state,
        model,
        obstacle_fields: obstacle.max_form,
        currents,
    })
}

fn write_all(writer: &mut Writer, computed: &mut Computed, config: &RunConfig) -> Result<()> {
    let mut files = Vec::new();
    if config.output.fields {
        let s = &computed.state;
        let mut named: Vec<(String, String, &GridField)> = Vec::new();
        for i in 0..s.modes() {
            named.push(("u".into(), format!("u{}.csv", i + 1), &s.u[i]));
            named.push(("theta".into(), format!("theta{}.csv", i + 1), &s.theta[i]));
            named.push(("obstacle".into(), format!("obstacle{}.csv", i + 1), &computed.obstacle_fields[i]));
        }
        for (i, j, f) in &computed.currents {
            named.push(("nu".into(), format!("nu{}{}.csv", i + 1, j + 1), f));
        }
        for (kind, name, field) in named {
            writer.write(&name, field_csv(field).as_bytes())?;
            files.push(FileEntry { kind, path: name });
        }
        if config.output.binary {
            writer.write("u.bin", &fields_binary(&s.u))?;
            writer.write("theta.bin", &fields_binary(&s.theta))?;
            files.push(FileEntry {
                kind: "u-binary".into(),
                path: "u.bin".into(),
            });
            files.push(FileEntry {
                kind: "theta-binary".into(),
                path: "theta.bin".into(),
            });
        }
    }
    computed.report.files = files;
    writer.write(REPORT_FILE, computed.report.to_json().as_bytes())
}

/// Runs the full pipeline and writes its artifacts into `dir`.
///
/// On a solver or validation failure the report, carrying a `failure`
/// section, is still written. On an I/O failure nothing is left behind.
pub fn run(config: &RunConfig, dir: &Path) -> std::result::Result<RunOutcome, RunFailure> {
    let mut writer = Writer::open(dir)?;
    match compute(config) {
        Ok(mut computed) => {
            write_all(&mut writer, &mut computed, config)?;
            writer.commit();
            Ok(RunOutcome {
                report: computed.report,
                state: computed.state,
                model: computed.model,
                dir: dir.to_path_buf(),
            })
        }
        Err(failure) => {
            if let Some(report) = &failure.report {
                writer.write(REPORT_FILE, report.to_json().as_bytes())?;
                writer.commit();
            }
            Err(failure)
        }
    }
}
