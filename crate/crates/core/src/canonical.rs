//! Named reference configurations with recorded baseline values.
//!
//! Each configuration `NAME` ships as `data/canonical/NAME.toml` together
//! with `NAME.baseline.toml`. Baseline values are evaluated on the final
//! schedule parameters, on a coarser twin grid when `twin_points` is set.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{parse_config, RunConfig};
use crate::diagnostics::{check_lower_bound, oracle_solve};
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::solver::{NewtonOptions, SolverState};

macro_rules! registry {
    ($($name:literal),* $(,)?) => {
        const REGISTRY: &[(&str, &str, &str)] = &[$((
            $name,
            include_str!(concat!("../data/canonical/", $name, ".toml")),
            include_str!(concat!("../data/canonical/", $name, ".baseline.toml")),
        )),*];
    };
}

registry!(
    "flat-log-2",
    "wells-log-2",
    "power-bound-1",
    "sym-log-2",
    "wells-active-2",
    "single-log-1",
);

/// How a baseline value was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    /// Known in closed form.
    Exact,
    /// Computed by the finite-difference dense oracle.
    Oracle,
    /// Evaluated from an explicit bound.
    Formula,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Comparison {
    #[default]
    Equal,
    AtLeast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineEntry {
    pub quantity: String,
    /// 1-based mode for per-mode quantities.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<usize>,
    pub value: f64,
    pub tolerance: f64,
    pub provenance: Provenance,
    #[serde(default)]
    pub comparison: Comparison,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Baseline {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub twin_points: Option<usize>,
    #[serde(rename = "entry")]
    pub entries: Vec<BaselineEntry>,
}

impl Baseline {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("baselines always serialize")
    }
}

#[derive(Debug, Clone)]
pub struct CanonicalConfig {
    pub name: String,
    pub config: RunConfig,
    pub baseline: Baseline,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineCheck {
    pub entry: BaselineEntry,
    pub actual: f64,
    pub pass: bool,
}

pub fn list_canonical() -> Vec<&'static str> {
    REGISTRY.iter().map(|(name, _, _)| *name).collect()
}

pub fn load_canonical(name: &str) -> Result<CanonicalConfig> {
    let (_, config_text, baseline_text) = REGISTRY
        .iter()
        .find(|(n, _, _)| *n == name)
        .ok_or_else(|| Error::UnknownCanonical(name.to_string()))?;
    let config = parse_config(config_text).map_err(Error::Config)?;
    let baseline: Baseline = toml::from_str(baseline_text)
        .map_err(|e| Error::InvalidModel(format!("baseline of {name}: {}", e.message())))?;
    Ok(CanonicalConfig {
        name: name.to_string(),
        config,
        baseline,
    })
}

/// Directory holding the shipped configuration files.
pub fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join("canonical")
}

impl CanonicalConfig {
    pub fn model(&self) -> Result<ModelSpec> {
        self.config.build_model().map_err(Error::Config)
    }

    /// The configuration with the grid replaced by `points` per axis.
    pub fn with_points(&self, points: usize) -> RunConfig {
        let mut c = self.config.clone();
        c.model.points = points;
        c
    }

    /// The configuration on which baselines are evaluated.
    pub fn baseline_config(&self) -> RunConfig {
        match self.baseline.twin_points {
            Some(n) => self.with_points(n),
            None => self.config.clone(),
        }
    }

    /// Compares a solution of [`Self::baseline_config`] at its final
    /// schedule parameters with every baseline entry.
    pub fn check(&self, model: &ModelSpec, state: &SolverState, theta_floor: f64) -> Vec<BaselineCheck> {
        self.baseline
            .entries
            .iter()
            .map(|entry| {
                let actual = quantity(model, state, &entry.quantity, entry.mode, theta_floor).unwrap_or(f64::NAN);
                let pass = match entry.comparison {
                    Comparison::Equal => (actual - entry.value).abs() <= entry.tolerance,
                    Comparison::AtLeast => actual >= entry.value - entry.tolerance,
                };
                BaselineCheck {
                    entry: entry.clone(),
                    actual,
                    pass,
                }
            })
            .collect()
    }

    /// Recomputes every baseline value. Oracle and exact entries are
    /// evaluated on the dense oracle solution, formula entries from their
    /// bound.
    pub fn regenerate(&self, opts: &NewtonOptions) -> Result<Baseline> {
        let config = self.baseline_config();
        let model = config.build_model().map_err(Error::Config)?;
        let params = config
            .schedule(&model.grid)
            .map_err(Error::InvalidSchedule)?
            .final_params();
        let needs_solution = self
            .baseline
            .entries
            .iter()
            .any(|e| e.provenance != Provenance::Formula);
        let state = if needs_solution {
            Some(oracle_solve(&model, params, opts)?.0)
        } else {
            None
        };
        let mut out = self.baseline.clone();
        for entry in &mut out.entries {
            entry.value = match (entry.provenance, &state) {
                (Provenance::Formula, _) => formula(&model, &entry.quantity, opts.theta_floor)?,
                (_, Some(s)) => quantity(&model, s, &entry.quantity, entry.mode, opts.theta_floor)
                    .ok_or_else(|| Error::InvalidModel(format!("unknown baseline quantity {}", entry.quantity)))?,
                (_, None) => unreachable!("solution computed whenever a non-formula entry exists"),
            };
        }
        Ok(out)
    }
}

fn formula(model: &ModelSpec, quantity: &str, theta_floor: f64) -> Result<f64> {
    match quantity {
        "theta_min" => {
            let probe = crate::solver::initial_state(model)?;
            let chk = check_lower_bound(model, &probe, theta_floor);
            Ok(chk.bound - chk.slack)
        }
        other => Err(Error::InvalidModel(format!("no formula for {other}"))),
    }
}

/// Scalar summaries of a state addressable from baseline files.
pub fn quantity(
    model: &ModelSpec,
    state: &SolverState,
    name: &str,
    mode: Option<usize>,
    theta_floor: f64,
) -> Option<f64> {
    let field = |m: Option<usize>, u: bool| {
        let i = m?.checked_sub(1)?;
        if u {
            state.u.get(i)
        } else {
            state.theta.get(i)
        }
    };
    let gap = |a: &[crate::grid::GridField]| {
        (a.len() >= 2).then(|| a[0].zip_map(&a[1], |p, q| p - q).sup_norm())
    };
    match name {
        "u_min" => field(mode, true).map(|f| f.min()),
        "u_max" => field(mode, true).map(|f| f.max()),
        "u_mean" => field(mode, true).map(crate::grid::integrate),
        "theta_max" => field(mode, false).map(|f| f.max()),
        "theta_min" => match mode {
            Some(_) => field(mode, false).map(|f| f.min()),
            None => Some(check_lower_bound(model, state, theta_floor).min_theta),
        },
        "u_mode_gap" => gap(&state.u),
        "theta_mode_gap" => gap(&state.theta),
        _ => None,
    }
}
