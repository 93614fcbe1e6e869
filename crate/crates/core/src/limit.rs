//! Objects of the vanishing-penalty limit: switching currents, the max-form
//! obstacle residual, complementarity gaps, and the Cauchy study in `eps`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{div, grad, integrate, l2_norm, GridField, GridVectorField};
use crate::model::ModelSpec;
use crate::solver::{
    continuation_run, ContinuationSchedule, NewtonOptions, SolverState, TrajectoryPoint,
};

/// Currents `nu^{ij} = beta'_eps(u^i - u^j - psi^ij) theta^i` for `i != j`.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchingCurrents {
    modes: usize,
    nu: Vec<GridField>,
}

impl SwitchingCurrents {
    pub fn modes(&self) -> usize {
        self.modes
    }

    /// `nu^{ij}`; the diagonal is identically zero.
    pub fn get(&self, i: usize, j: usize) -> &GridField {
        &self.nu[i * self.modes + j]
    }

    /// Ordered pairs `(i, j)`, `i != j`.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> {
        let d = self.modes;
        (0..d).flat_map(move |i| (0..d).filter(move |&j| j != i).map(move |j| (i, j)))
    }

    /// `sum_{i != j} integral nu^{ij}`.
    pub fn total_mass(&self) -> f64 {
        self.pairs().map(|(i, j)| integrate(self.get(i, j))).sum()
    }
}

/// Value attached to an ordered mode pair (1-based in serialized form).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairValue {
    pub from: usize,
    pub to: usize,
    pub value: f64,
}

pub fn switching_currents(model: &ModelSpec, state: &SolverState, eps: f64) -> Result<SwitchingCurrents> {
    state.check_feasible()?;
    let penalty = model.penalty_at(eps)?;
    let d = model.modes();
    let grid = model.grid;
    let mut nu = Vec::with_capacity(d * d);
    for i in 0..d {
        for j in 0..d {
            if i == j {
                nu.push(grid.zeros());
                continue;
            }
            let psi = model.costs.get(i, j);
            let mut f = grid.zeros();
            for x in 0..grid.len() {
                f[x] = penalty.beta_prime(state.u[i][x] - state.u[j][x] - psi[x]) * state.theta[i][x];
            }
            nu.push(f);
        }
    }
    Ok(SwitchingCurrents { modes: d, nu })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeObstacle {
    /// Sup of the positive part of `H + u - g(theta)`.
    pub hj_violation: f64,
    /// Sup of the positive part of `max_j (u^i - u^j - psi^ij)`.
    pub obstacle_violation: f64,
    /// Sup norm of the max-form residual.
    pub max_form_sup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstacleReport {
    pub modes: Vec<ModeObstacle>,
    #[serde(skip)]
    pub max_form: Vec<GridField>,
}

impl ObstacleReport {
    pub fn max_obstacle_violation(&self) -> f64 {
        self.modes.iter().map(|m| m.obstacle_violation).fold(0.0, f64::max)
    }

    pub fn max_form_sup(&self) -> f64 {
        self.modes.iter().map(|m| m.max_form_sup).fold(0.0, f64::max)
    }
}

/// Pointwise `max(H^i(Du^i, x) + u^i - g(theta^i), max_j (u^i - u^j - psi^ij))`
/// and its split violations.
pub fn obstacle_residual(model: &ModelSpec, state: &SolverState) -> Result<ObstacleReport> {
    state.check_feasible()?;
    let d = model.modes();
    let grid = model.grid;
    let mut modes = Vec::with_capacity(d);
    let mut fields = Vec::with_capacity(d);
    for i in 0..d {
        let du = grad(&state.u[i]);
        let mut field = grid.zeros();
        let mut hj_violation = 0.0_f64;
        let mut obstacle_violation = 0.0_f64;
        for x in 0..grid.len() {
            let hj = model.hamiltonian.eval_h(1.0, i, x, &du.at(x)) + state.u[i][x]
                - model.coupling.g(state.theta[i][x])?;
            let obstacle = (0..d)
                .filter(|&j| j != i)
                .map(|j| state.u[i][x] - state.u[j][x] - model.costs.get(i, j)[x])
                .fold(f64::NEG_INFINITY, f64::max);
            hj_violation = hj_violation.max(hj);
            obstacle_violation = obstacle_violation.max(obstacle);
            field[x] = hj.max(obstacle);
        }
        modes.push(ModeObstacle {
            hj_violation,
            obstacle_violation,
            max_form_sup: field.sup_norm(),
        });
        fields.push(field);
    }
    Ok(ObstacleReport {
        modes,
        max_form: fields,
    })
}

/// `gap^{ij} = integral nu^{ij} |u^i - u^j - psi^ij|`.
pub fn complementarity_gap(model: &ModelSpec, state: &SolverState, nu: &SwitchingCurrents) -> Vec<PairValue> {
    nu.pairs()
        .map(|(i, j)| {
            let psi = model.costs.get(i, j);
            let n = nu.get(i, j);
            let mut f = model.grid.zeros();
            for x in 0..model.grid.len() {
                f[x] = n[x] * (state.u[i][x] - state.u[j][x] - psi[x]).abs();
            }
            PairValue {
                from: i + 1,
                to: j + 1,
                value: integrate(&f),
            }
        })
        .collect()
}

/// Largest current on the slack region `{u^i - u^j - psi^ij < -delta}`.
pub fn support_leak(model: &ModelSpec, state: &SolverState, nu: &SwitchingCurrents, delta: f64) -> f64 {
    let mut worst = 0.0_f64;
    for (i, j) in nu.pairs() {
        let psi = model.costs.get(i, j);
        for x in 0..model.grid.len() {
            if state.u[i][x] - state.u[j][x] - psi[x] < -delta {
                worst = worst.max(nu.get(i, j)[x]);
            }
        }
    }
    worst
}

/// Residual of the limit transport equation with the currents substituted:
/// `-div(D_pH theta^i) + theta^i + sum_j (nu^{ij} - nu^{ji}) - source`.
pub fn limit_transport_residual(
    model: &ModelSpec,
    state: &SolverState,
    nu: &SwitchingCurrents,
) -> Result<Vec<GridField>> {
    let d = model.modes();
    let grid = model.grid;
    let mut out = Vec::with_capacity(d);
    for i in 0..d {
        let du = grad(&state.u[i]);
        let theta = &state.theta[i];
        let mut flux: Vec<GridField> = (0..grid.dim()).map(|_| grid.zeros()).collect();
        for x in 0..grid.len() {
            let dp = model.hamiltonian.eval_dp_h(1.0, i, x, &du.at(x));
            for (axis, f) in flux.iter_mut().enumerate() {
                f[x] = dp[axis] * theta[x];
            }
        }
        let dv = div(&GridVectorField::new(flux)?);
        let mut r = grid.zeros();
        for x in 0..grid.len() {
            let exchange: f64 = (0..d)
                .filter(|&j| j != i)
                .map(|j| nu.get(i, j)[x] - nu.get(j, i)[x])
                .sum();
            r[x] = -dv[x] + theta[x] + exchange - model.source;
        }
        out.push(r);
    }
    Ok(out)
}

/// Summary of one penalty level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub eps: f64,
    pub sigma: f64,
    pub obstacle_violation: f64,
    pub complementarity: Vec<PairValue>,
    pub current_mass: f64,
    pub support_leak: f64,
}

impl LevelSummary {
    pub fn max_gap(&self) -> f64 {
        self.complementarity.iter().map(|p| p.value).fold(0.0, f64::max)
    }
}

/// Differences between consecutive penalty levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CauchyRow {
    pub eps_from: f64,
    pub eps_to: f64,
    pub u_sup_diff: f64,
    pub theta_l2_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsStudy {
    pub levels: Vec<LevelSummary>,
    pub cauchy: Vec<CauchyRow>,
}

/// Slack threshold used for [`LevelSummary::support_leak`].
pub const SUPPORT_DELTA: f64 = 0.05;

/// Builds the Cauchy table from a continuation trajectory.
pub fn cauchy_table(model: &ModelSpec, trajectory: &[TrajectoryPoint]) -> Result<EpsStudy> {
    let mut levels = Vec::with_capacity(trajectory.len());
    for tp in trajectory {
        let nu = switching_currents(model, &tp.state, tp.params.eps)?;
        let obstacle = obstacle_residual(model, &tp.state)?;
        levels.push(LevelSummary {
            eps: tp.params.eps,
            sigma: tp.params.sigma,
            obstacle_violation: obstacle.max_obstacle_violation(),
            complementarity: complementarity_gap(model, &tp.state, &nu),
            current_mass: nu.total_mass(),
            support_leak: support_leak(model, &tp.state, &nu, SUPPORT_DELTA),
        });
    }
    let cauchy = trajectory
        .windows(2)
        .map(|w| {
            let (a, b) = (&w[0].state, &w[1].state);
            let u_sup_diff = a
                .u
                .iter()
                .zip(&b.u)
                .map(|(x, y)| x.zip_map(y, |p, q| p - q).sup_norm())
                .fold(0.0, f64::max);
            let theta_l2_diff = a
                .theta
                .iter()
                .zip(&b.theta)
                .map(|(x, y)| l2_norm(&x.zip_map(y, |p, q| p - q)).powi(2))
                .sum::<f64>()
                .sqrt();
            CauchyRow {
                eps_from: w[0].params.eps,
                eps_to: w[1].params.eps,
                u_sup_diff,
                theta_l2_diff,
            }
        })
        .collect();
    Ok(EpsStudy { levels, cauchy })
}

/// Runs the continuation and tabulates consecutive penalty levels.
pub fn eps_limit_study(
    model: &ModelSpec,
    schedule: &ContinuationSchedule,
    opts: &NewtonOptions,
) -> Result<(EpsStudy, SolverState)> {
    if schedule.eps_steps().len() < 3 {
        return Err(Error::InvalidSchedule(
            "the eps study needs at least 3 penalty levels".into(),
        ));
    }
    let out = continuation_run(model, schedule, opts, true)?;
    Ok((cauchy_table(model, &out.trajectory)?, out.state))
}
