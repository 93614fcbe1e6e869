//! Penalized system: residual, analytic Jacobian, damped Newton and the
//! two-phase continuation driver.

mod continuation;
mod jacobian;
mod linear;
mod newton;
mod residual;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridField, PeriodicGrid};
use crate::model::ModelSpec;

pub use continuation::{continuation_run, ContinuationOutcome, TrajectoryPoint};
pub use jacobian::{jacobian, CsrMatrix};
pub use linear::{solve_sparse, LINEAR_TOLERANCE};
pub use newton::newton_solve;
pub use residual::{residual, Residual};

/// Continuation parameters: homotopy `lambda`, penalty `eps`, viscosity `sigma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepParams {
    pub lambda: f64,
    pub eps: f64,
    pub sigma: f64,
}

impl StepParams {
    pub fn new(lambda: f64, eps: f64, sigma: f64) -> Self {
        Self { lambda, eps, sigma }
    }
}

impl std::fmt::Display for StepParams {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "lambda={}, eps={}, sigma={}", self.lambda, self.eps, self.sigma)
    }
}

/// Value functions `u^i` and densities `theta^i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub u: Vec<GridField>,
    pub theta: Vec<GridField>,
}

impl SolverState {
    pub fn new(u: Vec<GridField>, theta: Vec<GridField>) -> Result<Self> {
        if u.is_empty() || u.len() != theta.len() {
            return Err(Error::InvalidModel(format!(
                "state has {} value functions and {} densities",
                u.len(),
                theta.len()
            )));
        }
        let grid = *u[0].grid();
        if u.iter().chain(&theta).any(|f| *f.grid() != grid) {
            return Err(Error::InvalidGrid("state fields on different grids".into()));
        }
        Ok(Self { u, theta })
    }

    pub fn modes(&self) -> usize {
        self.u.len()
    }

    pub fn grid(&self) -> &PeriodicGrid {
        self.u[0].grid()
    }

    /// Flat vector `[u^1, .., u^d, theta^1, .., theta^d]`.
    pub fn to_vec(&self) -> Vec<f64> {
        self.u
            .iter()
            .chain(&self.theta)
            .flat_map(|f| f.values().iter().copied())
            .collect()
    }

    pub fn from_vec(grid: &PeriodicGrid, modes: usize, values: &[f64]) -> Result<Self> {
        let m = grid.len();
        if values.len() != 2 * modes * m {
            return Err(Error::InvalidModel(format!(
                "expected {} unknowns, got {}",
                2 * modes * m,
                values.len()
            )));
        }
        let field = |b: usize| grid.field(values[b * m..(b + 1) * m].to_vec());
        let u = (0..modes).map(field).collect::<Result<Vec<_>>>()?;
        let theta = (modes..2 * modes).map(field).collect::<Result<Vec<_>>>()?;
        Ok(Self { u, theta })
    }

    /// Fails on the first nonpositive density entry.
    pub fn check_feasible(&self) -> Result<()> {
        for (mode, t) in self.theta.iter().enumerate() {
            if let Some(point) = t.values().iter().position(|&v| !(v > 0.0)) {
                return Err(Error::InfeasibleState {
                    mode: mode + 1,
                    point,
                    value: t[point],
                });
            }
        }
        Ok(())
    }

    pub fn min_theta(&self) -> f64 {
        self.theta.iter().map(GridField::min).fold(f64::INFINITY, f64::min)
    }

    /// Largest pointwise difference over all fields.
    pub fn sup_distance(&self, other: &SolverState) -> f64 {
        self.u
            .iter()
            .chain(&self.theta)
            .zip(other.u.iter().chain(&other.theta))
            .map(|(a, b)| a.zip_map(b, |x, y| x - y).sup_norm())
            .fold(0.0, f64::max)
    }
}

/// The explicit solution of the `lambda = 0` member: `u = g(source)`,
/// `theta = source`.
pub fn initial_state(model: &ModelSpec) -> Result<SolverState> {
    let u0 = model.coupling.g(model.source)?;
    let d = model.modes();
    Ok(SolverState {
        u: (0..d).map(|_| model.grid.constant(u0)).collect(),
        theta: (0..d).map(|_| model.grid.constant(model.source)).collect(),
    })
}

/// Parameter paths for the continuation driver. `sigma_steps[k]` is paired
/// with `eps_steps[k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuationSchedule {
    lambda_steps: Vec<f64>,
    eps_steps: Vec<f64>,
    sigma_steps: Vec<f64>,
}

impl ContinuationSchedule {
    pub fn new(lambda_steps: Vec<f64>, eps_steps: Vec<f64>, sigma_steps: Vec<f64>) -> Result<Self> {
        let bad = |msg: String| Err(Error::InvalidSchedule(msg));
        if lambda_steps.first() != Some(&0.0) || lambda_steps.last() != Some(&1.0) {
            return bad("lambda steps must start at 0 and end at 1".into());
        }
        if lambda_steps.windows(2).any(|w| !(w[1] > w[0])) {
            return bad("lambda steps must be strictly increasing".into());
        }
        if eps_steps.is_empty() {
            return bad("at least one eps value is required".into());
        }
        if eps_steps.windows(2).any(|w| !(w[1] < w[0])) {
            return bad("eps steps must be strictly decreasing".into());
        }
        if !eps_steps.iter().all(|e| *e > 0.0 && e.is_finite()) {
            return bad("eps steps must be positive".into());
        }
        if sigma_steps.len() != eps_steps.len() {
            return bad(format!(
                "{} sigma values for {} eps values",
                sigma_steps.len(),
                eps_steps.len()
            ));
        }
        if sigma_steps.windows(2).any(|w| w[1] > w[0]) || sigma_steps.iter().any(|s| !(*s >= 0.0)) {
            return bad("sigma steps must be nonnegative and nonincreasing".into());
        }
        Ok(Self {
            lambda_steps,
            eps_steps,
            sigma_steps,
        })
    }

    /// `lambda_count` equispaced homotopy values, `eps_count` geometric
    /// penalty values and sigma decreasing linearly alongside eps.
    pub fn standard(
        lambda_count: usize,
        eps_start: f64,
        eps_end: f64,
        eps_count: usize,
        sigma_start: f64,
        sigma_end: f64,
    ) -> Result<Self> {
        if lambda_count < 2 || eps_count < 1 {
            return Err(Error::InvalidSchedule(
                "need at least 2 lambda values and 1 eps value".into(),
            ));
        }
        let lambda = (0..lambda_count)
            .map(|k| {
                if k + 1 == lambda_count {
                    1.0
                } else {
                    k as f64 / (lambda_count - 1) as f64
                }
            })
            .collect();
        let (eps, sigma) = if eps_count == 1 {
            (vec![eps_end], vec![sigma_end])
        } else {
            let last = (eps_count - 1) as f64;
            let ratio = eps_end / eps_start;
            let eps = (0..eps_count)
                .map(|k| match k {
                    0 => eps_start,
                    k if k + 1 == eps_count => eps_end,
                    k => eps_start * ratio.powf(k as f64 / last),
                })
                .collect();
            let sigma = (0..eps_count)
                .map(|k| {
                    if k + 1 == eps_count {
                        sigma_end
                    } else {
                        sigma_start + (sigma_end - sigma_start) * k as f64 / last
                    }
                })
                .collect();
            (eps, sigma)
        };
        Self::new(lambda, eps, sigma)
    }

    pub fn lambda_steps(&self) -> &[f64] {
        &self.lambda_steps
    }

    pub fn eps_steps(&self) -> &[f64] {
        &self.eps_steps
    }

    pub fn sigma_steps(&self) -> &[f64] {
        &self.sigma_steps
    }

    pub fn final_params(&self) -> StepParams {
        StepParams::new(
            1.0,
            *self.eps_steps.last().expect("validated"),
            *self.sigma_steps.last().expect("validated"),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonOptions {
    /// Sup-norm residual tolerance.
    pub tol_residual: f64,
    pub max_iter: usize,
    /// Step shrink factor in the backtracking search.
    pub backtrack: f64,
    pub min_step: f64,
    /// Densities are kept at or above this value.
    pub theta_floor: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol_residual: 1e-10,
            max_iter: 50,
            backtrack: 0.5,
            min_step: 2f64.powi(-20),
            theta_floor: 1e-10,
        }
    }
}

impl NewtonOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol_residual > 0.0) || self.max_iter == 0 {
            return Err(Error::InvalidModel("Newton tolerance must be > 0 and max_iter >= 1".into()));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) || !(self.min_step > 0.0) {
            return Err(Error::InvalidModel("backtracking factor must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Single,
    Homotopy,
    Penalty,
}

/// One Newton solve at fixed parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub phase: Phase,
    pub params: StepParams,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    pub damping_events: usize,
    /// Bisection depth at which this step was inserted; 0 for scheduled steps.
    pub bisection_depth: usize,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub steps: Vec<StepRecord>,
    pub flags: Vec<String>,
}

impl SolveReport {
    pub fn final_residual(&self) -> Option<f64> {
        self.steps.last().and_then(|s| s.residual_history.last().copied())
    }

    pub fn max_iterations(&self) -> usize {
        self.steps.iter().map(|s| s.iterations).max().unwrap_or(0)
    }

    pub fn total_iterations(&self) -> usize {
        self.steps.iter().map(|s| s.iterations).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CouplingLaw, HamiltonianSpec, PenaltyFamily, SwitchingCosts};

    fn model(coupling: CouplingLaw, source: f64) -> ModelSpec {
        let grid = PeriodicGrid::new(1, 8).unwrap();
        let h = HamiltonianSpec::quadratic(vec![grid.constant(0.2), grid.zeros()]).unwrap();
        let c = SwitchingCosts::uniform(&grid, 2, 0.5).unwrap();
        ModelSpec::new(h, coupling, c, PenaltyFamily::Cubic, source).unwrap()
    }

    #[test]
    fn initial_state_examples() {
        let s = initial_state(&model(CouplingLaw::Log, 1.0)).unwrap();
        assert!(s.u.iter().all(|f| f.sup_norm() == 0.0));
        assert!(s.theta.iter().all(|f| f.min() == 1.0 && f.max() == 1.0));

        let s = initial_state(&model(CouplingLaw::Power { alpha: 0.5 }, 1.0)).unwrap();
        assert!(s.u.iter().all(|f| f.min() == 1.0 && f.max() == 1.0));

        let m = model(CouplingLaw::Log, 2.0);
        let s = initial_state(&m).unwrap();
        assert!((s.u[0][0] - 2f64.ln()).abs() < 1e-15);
        assert_eq!(s.theta[1][3], 2.0);
        let r = residual(&m, &s, StepParams::new(0.0, 0.1, 0.0)).unwrap();
        assert!(r.sup_norm() < 1e-14);
    }

    #[test]
    fn state_vector_layout() {
        let m = model(CouplingLaw::Log, 1.0);
        let mut s = initial_state(&m).unwrap();
        s.theta[1][2] = 5.0;
        let v = s.to_vec();
        assert_eq!(v.len(), 32);
        assert_eq!(v[24 + 2], 5.0);
        assert_eq!(SolverState::from_vec(&m.grid, 2, &v).unwrap(), s);
        s.theta[0][1] = 0.0;
        assert!(matches!(
            s.check_feasible(),
            Err(Error::InfeasibleState { mode: 1, point: 1, .. })
        ));
    }

    #[test]
    fn schedule_validation() {
        let s = ContinuationSchedule::standard(11, 0.5, 1e-3, 10, 1.0 / 64.0, 0.0).unwrap();
        assert_eq!(s.lambda_steps().len(), 11);
        assert_eq!(s.lambda_steps()[10], 1.0);
        assert!((s.lambda_steps()[3] - 0.3).abs() < 1e-15);
        assert_eq!(s.eps_steps()[0], 0.5);
        assert_eq!(s.eps_steps()[9], 1e-3);
        let ratios: Vec<f64> = s.eps_steps().windows(2).map(|w| w[1] / w[0]).collect();
        assert!(ratios.iter().all(|r| (r - ratios[0]).abs() < 1e-12));
        assert_eq!(s.sigma_steps()[9], 0.0);
        assert_eq!(s.final_params(), StepParams::new(1.0, 1e-3, 0.0));

        assert!(ContinuationSchedule::new(vec![0.0, 0.5], vec![0.1], vec![0.0]).is_err());
        assert!(ContinuationSchedule::new(vec![0.0, 1.0], vec![0.1, 0.2], vec![0.0, 0.0]).is_err());
        assert!(ContinuationSchedule::new(vec![0.0, 1.0], vec![0.2, 0.1], vec![0.0, 0.1]).is_err());
        assert!(ContinuationSchedule::new(vec![0.0, 1.0], vec![0.2, 0.0], vec![0.0, 0.0]).is_err());
        assert!(ContinuationSchedule::new(vec![0.0, 1.0], vec![0.2], vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn newton_options_checked() {
        assert!(NewtonOptions::default().validate().is_ok());
        let bad = NewtonOptions {
            max_iter: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
