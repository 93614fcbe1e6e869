//! TOML run configuration.
//!
//! ```toml
//! [model]
//! modes = 2
//! dim = 1
//! points = 64
//! coupling = "log"            # or "power" together with `alpha`
//! source = 1.0
//! penalty = "cubic"           # "quadratic", "cubic" or "exponential"
//! potentials = ["0.15*(1+cos(2*pi*x))", "0.15*(1+sin(2*pi*x))"]
//! costs = 0.1                 # one field for every pair, or a d x d matrix
//!
//! [schedule]
//! lambda_count = 11
//! eps_start = 0.5
//! eps_end = 1e-3
//! eps_count = 10
//! sigma_end = 0.0             # sigma_start defaults to the grid spacing
//!
//! [solver]
//! tol_residual = 1e-10
//!
//! [output]
//! fields = true
//!
//! [probes]
//! eps_study = true
//! ```
//!
//! A field is a number, an expression in `x`, `y`, `z` and `pi`, or an array
//! with one value per grid point in grid order. Unknown keys are rejected.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::diagnostics::ORACLE_MAX_POINTS;
use crate::expr::FieldExpr;
use crate::grid::{GridField, PeriodicGrid};
use crate::model::{
    checks, validate, CheckStatus, CouplingLaw, HamiltonianSpec, ModelSpec, PenaltyFamily,
    SwitchingCosts,
};
use crate::solver::{ContinuationSchedule, NewtonOptions};

/// Every problem found in a configuration, one message per entry.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigErrors(pub Vec<String>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, e) in self.0.iter().enumerate() {
            if k > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldSpec {
    Constant(f64),
    Expression(String),
    Values(Vec<f64>),
}

impl FieldSpec {
    pub fn to_field(&self, grid: &PeriodicGrid) -> Result<GridField, String> {
        match self {
            FieldSpec::Constant(c) if c.is_finite() => Ok(grid.constant(*c)),
            FieldSpec::Constant(c) => Err(format!("non-finite constant {c}")),
            FieldSpec::Expression(src) => {
                let expr = FieldExpr::parse(src)?;
                let mut values = Vec::with_capacity(grid.len());
                for k in 0..grid.len() {
                    let v = expr.eval(&grid.position(k))?;
                    if !v.is_finite() {
                        return Err(format!("'{src}' is not finite at {:?}", grid.position(k)));
                    }
                    values.push(v);
                }
                grid.field(values).map_err(|e| e.to_string())
            }
            FieldSpec::Values(v) => {
                if v.len() != grid.len() {
                    return Err(format!("{} values for a grid of {} points", v.len(), grid.len()));
                }
                grid.field(v.clone()).map_err(|e| e.to_string())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CostSpec {
    Uniform(FieldSpec),
    /// `matrix[i][j]` is the cost of switching from mode `i + 1` to `j + 1`;
    /// diagonal entries are ignored.
    Matrix(Vec<Vec<FieldSpec>>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CouplingKind {
    Log,
    Power,
}

fn default_source() -> f64 {
    1.0
}

fn default_max_unknowns() -> usize {
    ModelSpec::DEFAULT_MAX_UNKNOWNS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub modes: usize,
    pub dim: usize,
    pub points: usize,
    pub coupling: CouplingKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default = "default_source")]
    pub source: f64,
    #[serde(default)]
    pub penalty: PenaltyFamily,
    pub potentials: Vec<FieldSpec>,
    pub costs: CostSpec,
    #[serde(default = "default_max_unknowns")]
    pub max_unknowns: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<Vec<f64>>,
    pub eps_start: f64,
    pub eps_end: f64,
    pub eps_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_start: Option<f64>,
    #[serde(default)]
    pub sigma_end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub tol_residual: f64,
    pub max_iter: usize,
    pub backtrack: f64,
    pub min_step: f64,
    pub theta_floor: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        let o = NewtonOptions::default();
        Self {
            tol_residual: o.tol_residual,
            max_iter: o.max_iter,
            backtrack: o.backtrack,
            min_step: o.min_step,
            theta_floor: o.theta_floor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
    /// Write the CSV field files.
    pub fields: bool,
    /// Also write the binary twin of every field.
    pub binary: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: None,
            fields: true,
            binary: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbesSection {
    pub uniqueness: bool,
    pub eps_study: bool,
    pub oracle: bool,
    /// Largest `d n^N` for which the oracle probe runs.
    pub oracle_max_points: usize,
    pub seed: u64,
    pub perturbation: f64,
}

impl Default for ProbesSection {
    fn default() -> Self {
        Self {
            uniqueness: false,
            eps_study: false,
            oracle: false,
            oracle_max_points: ORACLE_MAX_POINTS,
            seed: 0,
            perturbation: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub probes: ProbesSection,
}

fn line_at(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line of `key = ...` inside `[section]`, if present.
fn key_line(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (k, line) in text.lines().enumerate() {
        let t = line.trim();
        if let Some(name) = t.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
            current = name.trim().to_string();
            continue;
        }
        if current == section {
            if let Some((lhs, _)) = t.split_once('=') {
                if lhs.trim() == key {
                    return Some(k + 1);
                }
            }
        }
    }
    None
}

fn at_key(text: &str, section: &str, key: &str, msg: String) -> String {
    match key_line(text, section, key) {
        Some(line) => format!("line {line}: {msg}"),
        None => format!("{section}.{key}: {msg}"),
    }
}

fn check_key(check: &str) -> &'static str {
    match check {
        checks::P_2_N | checks::ALPHA0 | checks::COUPLING_EXPONENT | checks::COUPLING_INCREASING => "alpha",
        checks::OSCILLATION | checks::HAMILTONIAN_NONNEGATIVE | checks::POTENTIAL_GRADIENT => "potentials",
        checks::COST_POSITIVE => "costs",
        checks::SOURCE_POSITIVE => "source",
        checks::PROBLEM_SIZE => "points",
        _ => "coupling",
    }
}

impl RunConfig {
    pub fn grid(&self) -> Result<PeriodicGrid, String> {
        PeriodicGrid::new(self.model.dim, self.model.points).map_err(|e| e.to_string())
    }

    pub fn coupling_law(&self) -> Result<CouplingLaw, String> {
        match (self.model.coupling, self.model.alpha) {
            (CouplingKind::Log, None) => Ok(CouplingLaw::Log),
            (CouplingKind::Log, Some(_)) => Err("alpha is only allowed with power coupling".into()),
            (CouplingKind::Power, Some(alpha)) => Ok(CouplingLaw::Power { alpha }),
            (CouplingKind::Power, None) => Err("power coupling requires alpha".into()),
        }
    }

    /// Builds the model without checking the structural assumptions.
    pub fn build_model(&self) -> Result<ModelSpec, ConfigErrors> {
        self.build_model_in(None)
    }

    fn build_model_in(&self, text: Option<&str>) -> Result<ModelSpec, ConfigErrors> {
        let m = &self.model;
        let mut errors = Vec::new();
        let mut err = |key: &str, msg: String| match text {
            Some(t) => errors.push(at_key(t, "model", key, msg)),
            None => errors.push(format!("model.{key}: {msg}")),
        };
        let grid = match self.grid() {
            Ok(g) => Some(g),
            Err(e) => {
                err("points", e);
                None
            }
        };
        if m.modes == 0 {
            err("modes", "at least one mode is required".into());
        }
        let coupling = self.coupling_law().map_err(|e| err("alpha", e)).ok();
        if m.potentials.len() != m.modes {
            err(
                "potentials",
                format!("{} potentials for {} modes", m.potentials.len(), m.modes),
            );
        }
        let Some(grid) = grid else {
            return Err(ConfigErrors(errors));
        };
        let mut potentials = Vec::new();
        for (i, spec) in m.potentials.iter().enumerate() {
            match spec.to_field(&grid) {
                Ok(f) => potentials.push(f),
                Err(e) => err("potentials", format!("potential {}: {e}", i + 1)),
            }
        }
        let costs = if m.modes == 0 {
            None
        } else {
            match &m.costs {
                CostSpec::Uniform(spec) => match spec.to_field(&grid) {
                    Ok(f) => SwitchingCosts::from_fn(&grid, m.modes, |_, _| f.clone()).ok(),
                    Err(e) => {
                        err("costs", e);
                        None
                    }
                },
                CostSpec::Matrix(rows) => {
                    if rows.len() != m.modes || rows.iter().any(|r| r.len() != m.modes) {
                        err("costs", format!("cost matrix must be {0}x{0}", m.modes));
                        None
                    } else {
                        let mut fields = vec![vec![grid.zeros(); m.modes]; m.modes];
                        let mut ok = true;
                        for i in 0..m.modes {
                            for j in (0..m.modes).filter(|&j| j != i) {
                                match rows[i][j].to_field(&grid) {
                                    Ok(f) => fields[i][j] = f,
                                    Err(e) => {
                                        err("costs", format!("cost {}->{}: {e}", i + 1, j + 1));
                                        ok = false;
                                    }
                                }
                            }
                        }
                        if ok {
                            SwitchingCosts::from_fn(&grid, m.modes, |i, j| fields[i][j].clone()).ok()
                        } else {
                            None
                        }
                    }
                }
            }
        };
        if !errors.is_empty() {
            return Err(ConfigErrors(errors));
        }
        let (Some(coupling), Some(costs)) = (coupling, costs) else {
            return Err(ConfigErrors(vec!["model: incomplete section".into()]));
        };
        let built = HamiltonianSpec::quadratic(potentials)
            .and_then(|h| ModelSpec::new(h, coupling, costs, m.penalty, m.source));
        match built {
            Ok(mut model) => {
                model.max_unknowns = m.max_unknowns;
                Ok(model)
            }
            Err(e) => Err(ConfigErrors(vec![format!("model: {e}")])),
        }
    }

    pub fn schedule(&self, grid: &PeriodicGrid) -> Result<ContinuationSchedule, String> {
        let s = &self.schedule;
        let sigma_start = s.sigma_start.unwrap_or(grid.spacing());
        let schedule = match (&s.lambda, s.lambda_count) {
            (Some(_), Some(_)) => return Err("give either lambda or lambda_count, not both".into()),
            (None, None) => return Err("one of lambda or lambda_count is required".into()),
            (None, Some(count)) => {
                ContinuationSchedule::standard(count, s.eps_start, s.eps_end, s.eps_count, sigma_start, s.sigma_end)
            }
            (Some(lambda), None) => {
                ContinuationSchedule::standard(2, s.eps_start, s.eps_end, s.eps_count, sigma_start, s.sigma_end)
                    .and_then(|base| {
                        ContinuationSchedule::new(
                            lambda.clone(),
                            base.eps_steps().to_vec(),
                            base.sigma_steps().to_vec(),
                        )
                    })
            }
        };
        schedule.map_err(|e| e.to_string())
    }

    pub fn newton_options(&self) -> NewtonOptions {
        let s = &self.solver;
        NewtonOptions {
            tol_residual: s.tol_residual,
            max_iter: s.max_iter,
            backtrack: s.backtrack,
            min_step: s.min_step,
            theta_floor: s.theta_floor,
        }
    }

    /// Serializes back to TOML; parsing the result yields an equal config.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configs always serialize")
    }
}

/// Parses and fully validates a configuration. Structural assumption
/// failures are reported by check name.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigErrors> {
    let config: RunConfig = toml::from_str(text).map_err(|e| {
        let msg = e.message().trim().to_string();
        ConfigErrors(vec![match e.span() {
            Some(span) => format!("line {}: {msg}", line_at(text, span.start)),
            None => msg,
        }])
    })?;
    check_config(&config, Some(text))?;
    Ok(config)
}

/// Applies `section.key=value` overrides, then parses. A value that is not
/// valid TOML is taken as a string.
pub fn parse_config_with_overrides(text: &str, overrides: &[String]) -> Result<RunConfig, ConfigErrors> {
    if overrides.is_empty() {
        return parse_config(text);
    }
    let mut table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| ConfigErrors(vec![e.message().trim().to_string()]))?;
    let mut errors = Vec::new();
    for ov in overrides {
        let Some((path, raw)) = ov.split_once('=') else {
            errors.push(format!("override '{ov}': expected section.key=value"));
            continue;
        };
        let parts: Vec<&str> = path.trim().split('.').collect();
        if parts.len() != 2 || parts.iter().any(|p| p.is_empty()) {
            errors.push(format!("override '{ov}': expected section.key=value"));
            continue;
        }
        let raw = raw.trim();
        let value = format!("v = {raw}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        let section = table
            .entry(parts[0].to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
        match section.as_table_mut() {
            Some(s) => {
                s.insert(parts[1].to_string(), value);
            }
            None => errors.push(format!("override '{ov}': {} is not a section", parts[0])),
        }
    }
    if !errors.is_empty() {
        return Err(ConfigErrors(errors));
    }
    let config: RunConfig = table
        .try_into()
        .map_err(|e: toml::de::Error| ConfigErrors(vec![format!("after overrides: {}", e.message().trim())]))?;
    check_config(&config, None)?;
    Ok(config)
}

fn check_config(config: &RunConfig, text: Option<&str>) -> Result<(), ConfigErrors> {
    let model = config.build_model_in(text)?;
    let place = |section: &str, key: &str, msg: String| match text {
        Some(t) => at_key(t, section, key, msg),
        None => format!("{section}.{key}: {msg}"),
    };
    let mut errors = Vec::new();
    for entry in validate(&model).entries.iter().filter(|e| e.status == CheckStatus::Fail) {
        errors.push(place("model", check_key(&entry.check), format!("{}: {}", entry.check, entry.detail)));
    }
    if let Err(e) = config.schedule(&model.grid) {
        errors.push(place("schedule", "eps_count", e));
    }
    if let Err(e) = config.newton_options().validate() {
        errors.push(place("solver", "tol_residual", e.to_string()));
    }
    let p = &config.probes;
    if !(p.perturbation >= 0.0 && p.perturbation.is_finite()) {
        errors.push(place("probes", "perturbation", "must be finite and >= 0".into()));
    }
    if errors.is_empty() {
        Ok(())
    } else {
        Err(ConfigErrors(errors))
    }
}
