//! Integral estimates, density lower bounds, the monotonicity gap between
//! two states, and a dense finite-difference Newton oracle.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{grad, integrate, partial, GridField};
use crate::model::{CouplingLaw, ModelSpec};
use crate::solver::{initial_state, residual, NewtonOptions, SolverState, StepParams};

/// Integral quantities of one mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeEstimates {
    pub mass: f64,
    pub coupling_energy: f64,
    pub mean_value: f64,
    pub kinetic_energy: f64,
    pub penalty_budget: f64,
    pub gradient_energy: f64,
    pub hessian_energy: f64,
    pub fisher: f64,
    pub min_theta: f64,
    pub theta_w12: f64,
    pub u_w22: f64,
}

impl ModeEstimates {
    /// `(name, value)` pairs in declaration order.
    pub fn named(&self) -> [(&'static str, f64); 11] {
        [
            ("mass", self.mass),
            ("coupling_energy", self.coupling_energy),
            ("mean_value", self.mean_value),
            ("kinetic_energy", self.kinetic_energy),
            ("penalty_budget", self.penalty_budget),
            ("gradient_energy", self.gradient_energy),
            ("hessian_energy", self.hessian_energy),
            ("fisher", self.fisher),
            ("min_theta", self.min_theta),
            ("theta_w12", self.theta_w12),
            ("u_w22", self.u_w22),
        ]
    }
}

/// Both sides of the global energy inequality
/// `sum int theta g + c H theta + beta' psi theta <= source sum int u + C sum int theta
///  <= source sum int g(theta) + C sum int theta`, with `c = 1`, `C = 2 max V`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBalance {
    pub lhs: f64,
    pub rhs_mean: f64,
    pub rhs_coupling: f64,
    pub holds: bool,
}

/// Tolerance of the energy inequality check.
pub const ENERGY_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub modes: Vec<ModeEstimates>,
    pub total_mass: f64,
    /// `max_{i,x} H^i(0, x)`.
    pub oscillation: f64,
    pub energy: EnergyBalance,
}

/// Evaluates every estimate by grid quadrature. `D^2 u` is `grad` applied to
/// each component of `grad u`.
pub fn estimate_report(model: &ModelSpec, state: &SolverState, eps: f64) -> Result<EstimateReport> {
    state.check_feasible()?;
    let grid = model.grid;
    let dim = grid.dim();
    let d = model.modes();
    let penalty = model.penalty_at(eps)?;
    let max_v = model.hamiltonian.max_at_rest();
    let a3_c = 1.0;
    let a3_big_c = 2.0 * max_v.max(0.0);

    let mut modes = Vec::with_capacity(d);
    let mut h_theta_total = 0.0;
    let mut g_total = 0.0;
    for i in 0..d {
        let u = &state.u[i];
        let theta = &state.theta[i];
        let du = grad(u);
        let dtheta = grad(theta);
        let du2 = du.norm_squared();
        let dtheta2 = dtheta.norm_squared();
        let mut hess2 = grid.zeros();
        for k in 0..dim {
            for l in 0..dim {
                let second = partial(du.component(k), l);
                for x in 0..grid.len() {
                    hess2[x] += second[x] * second[x];
                }
            }
        }
        let pointwise = |f: &dyn Fn(usize) -> Result<f64>| -> Result<GridField> {
            let mut out = grid.zeros();
            for x in 0..grid.len() {
                out[x] = f(x)?;
            }
            Ok(out)
        };
        let coupling = pointwise(&|x| Ok(theta[x] * model.coupling.g(theta[x])?))?;
        let g_field = pointwise(&|x| model.coupling.g(theta[x]))?;
        let fisher = pointwise(&|x| Ok(model.coupling.g_prime(theta[x])? * dtheta2[x]))?;
        let h_theta =
            pointwise(&|x| Ok(model.hamiltonian.eval_h(1.0, i, x, &du.at(x)) * theta[x]))?;
        let budget = pointwise(&|x| {
            Ok((0..d)
                .filter(|&j| j != i)
                .map(|j| {
                    let psi = model.costs.get(i, j)[x];
                    penalty.beta_prime(u[x] - state.u[j][x] - psi) * psi * theta[x]
                })
                .sum())
        })?;

        let gradient_energy = integrate(&du2);
        let hessian_plain = integrate(&hess2);
        let theta_sq = integrate(&theta.map(|t| t * t));
        let u_sq = integrate(&u.map(|v| v * v));
        modes.push(ModeEstimates {
            mass: integrate(theta),
            coupling_energy: integrate(&coupling),
            mean_value: integrate(u),
            kinetic_energy: integrate(&du2.zip_map(theta, |a, b| a * b)),
            penalty_budget: integrate(&budget),
            gradient_energy,
            hessian_energy: integrate(&hess2.zip_map(theta, |a, b| a * b)),
            fisher: integrate(&fisher),
            min_theta: theta.min(),
            theta_w12: (theta_sq + integrate(&dtheta2)).sqrt(),
            u_w22: (u_sq + gradient_energy + hessian_plain).sqrt(),
        });
        h_theta_total += integrate(&h_theta);
        g_total += integrate(&g_field);
    }

    let total_mass: f64 = modes.iter().map(|m| m.mass).sum();
    let lhs = modes
        .iter()
        .map(|m| m.coupling_energy + m.penalty_budget)
        .sum::<f64>()
        + a3_c * h_theta_total;
    let rhs_mean = model.source * modes.iter().map(|m| m.mean_value).sum::<f64>() + a3_big_c * total_mass;
    let rhs_coupling = model.source * g_total + a3_big_c * total_mass;
    let holds = lhs <= rhs_mean + ENERGY_TOLERANCE && rhs_mean <= rhs_coupling + ENERGY_TOLERANCE;
    Ok(EstimateReport {
        modes,
        total_mass,
        oscillation: max_v,
        energy: EnergyBalance {
            lhs,
            rhs_mean,
            rhs_coupling,
            holds,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundCheck {
    /// `(source - max H(0,x))^(1/alpha)` for power coupling; `10 theta_floor`
    /// for the logarithm, which has no explicit bound.
    pub bound: f64,
    pub min_theta: f64,
    pub slack: f64,
    pub pass: bool,
}

/// Checks the density lower bound. For power coupling the bound is relaxed by
/// `10 h^2` to absorb the discretization error.
pub fn check_lower_bound(model: &ModelSpec, state: &SolverState, theta_floor: f64) -> LowerBoundCheck {
    let min_theta = state.min_theta();
    let h = model.grid.spacing();
    let (bound, slack) = match model.coupling {
        CouplingLaw::Power { alpha } => {
            let base = model.source - model.hamiltonian.max_at_rest();
            (base.max(0.0).powf(1.0 / alpha), 10.0 * h * h)
        }
        CouplingLaw::Log => (10.0 * theta_floor, 0.0),
    };
    LowerBoundCheck {
        bound,
        min_theta,
        slack,
        pass: min_theta >= bound - slack,
    }
}

/// Terms of the monotonicity argument for two states of the same model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityGap {
    /// `sum_i int (g(theta_A) - g(theta_B)) (theta_A - theta_B)`.
    pub coupling: f64,
    /// `sum_i int |D(u_A - u_B)|^2`.
    pub gradient: f64,
    /// Hamiltonian cross term; nonpositive by convexity of `H`.
    pub hamiltonian_cross: f64,
    /// Penalty cross term; nonpositive by convexity of `beta`.
    pub penalty_cross: f64,
}

pub fn monotonicity_gap(
    model: &ModelSpec,
    a: &SolverState,
    b: &SolverState,
    eps: f64,
) -> Result<MonotonicityGap> {
    a.check_feasible()?;
    b.check_feasible()?;
    let grid = model.grid;
    let d = model.modes();
    let penalty = model.penalty_at(eps)?;
    let ham = &model.hamiltonian;

    let mut coupling = grid.zeros();
    let mut gradient = grid.zeros();
    let mut h_cross = grid.zeros();
    let mut b_cross = grid.zeros();
    for i in 0..d {
        let (ua, ub) = (&a.u[i], &b.u[i]);
        let (ta, tb) = (&a.theta[i], &b.theta[i]);
        let dua = grad(ua);
        let dub = grad(ub);
        for x in 0..grid.len() {
            let pa = dua.at(x);
            let pb = dub.at(x);
            let dta = ta[x] - tb[x];
            coupling[x] += (model.coupling.g(ta[x])? - model.coupling.g(tb[x])?) * dta;
            let dp: Vec<f64> = pa.iter().zip(&pb).map(|(p, q)| p - q).collect();
            gradient[x] += dp.iter().map(|v| v * v).sum::<f64>();

            let ha = ham.eval_h(1.0, i, x, &pa);
            let hb = ham.eval_h(1.0, i, x, &pb);
            let fa = ham.eval_dp_h(1.0, i, x, &pa);
            let fb = ham.eval_dp_h(1.0, i, x, &pb);
            let flux_diff: f64 = (0..pa.len())
                .map(|k| (fa[k] * ta[x] - fb[k] * tb[x]) * dp[k])
                .sum();
            h_cross[x] += (ha - hb) * dta - flux_diff;

            for j in (0..d).filter(|&j| j != i) {
                let psi = model.costs.get(i, j)[x];
                let sa = ua[x] - a.u[j][x] - psi;
                let sb = ub[x] - b.u[j][x] - psi;
                let (beta_a, b1a, _) = penalty.eval(sa);
                let (beta_b, b1b, _) = penalty.eval(sb);
                b_cross[x] += (beta_a - beta_b) * dta - (b1a * ta[x] - b1b * tb[x]) * (sa - sb);
            }
        }
    }
    Ok(MonotonicityGap {
        coupling: integrate(&coupling),
        gradient: integrate(&gradient),
        hamiltonian_cross: integrate(&h_cross),
        penalty_cross: integrate(&b_cross),
    })
}

/// Largest problem the dense oracle accepts, counted as `d n^N`.
pub const ORACLE_MAX_POINTS: usize = 512;

const ORACLE_HOMOTOPY_STEPS: usize = 10;
const ORACLE_MAX_ITER: usize = 100;

fn residual_vec(model: &ModelSpec, x: &[f64], params: StepParams) -> Option<Vec<f64>> {
    let state = SolverState::from_vec(&model.grid, model.modes(), x).ok()?;
    residual(model, &state, params).ok().map(|r| r.to_vec())
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, a| m.max(a.abs()))
}

/// Dense Newton whose Jacobian is built column by column from central
/// differences of the residual.
fn fd_newton(model: &ModelSpec, x0: Vec<f64>, params: StepParams, opts: &NewtonOptions) -> Result<(Vec<f64>, usize)> {
    let nonconv = |reason: String| Error::NonConvergence {
        params,
        reason: format!("oracle: {reason}"),
        report: Box::default(),
    };
    let n = x0.len();
    let mut x = x0;
    let mut r = residual_vec(model, &x, params).ok_or_else(|| nonconv("infeasible start".into()))?;
    let mut iterations = 0;
    while sup(&r) > opts.tol_residual {
        if iterations == ORACLE_MAX_ITER {
            return Err(nonconv(format!("residual {:.3e} after {iterations} iterations", sup(&r))));
        }
        let mut jac = DMatrix::<f64>::zeros(n, n);
        for k in 0..n {
            let step = 1e-7 * x[k].abs().max(1.0);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += step;
            xm[k] -= step;
            let (Some(rp), Some(rm)) = (residual_vec(model, &xp, params), residual_vec(model, &xm, params)) else {
                return Err(nonconv("difference stencil left the feasible set".into()));
            };
            for row in 0..n {
                jac[(row, k)] = (rp[row] - rm[row]) / (2.0 * step);
            }
        }
        let rhs = DVector::from_iterator(n, r.iter().map(|v| -v));
        let delta = jac
            .lu()
            .solve(&rhs)
            .ok_or_else(|| nonconv("singular difference Jacobian".into()))?;
        let norm = sup(&r);
        let mut t = 1.0;
        loop {
            if t < opts.min_step {
                return Err(nonconv("line search stalled".into()));
            }
            let trial: Vec<f64> = x.iter().zip(delta.iter()).map(|(a, b)| a + t * b).collect();
            if let Some(rt) = residual_vec(model, &trial, params) {
                if sup(&rt) < norm {
                    x = trial;
                    r = rt;
                    break;
                }
            }
            t *= 0.5;
        }
        iterations += 1;
    }
    Ok((x, iterations))
}

/// Independent solve of the discrete penalized system for small grids,
/// ramping `lambda` from the explicit `lambda = 0` solution.
pub fn oracle_solve(model: &ModelSpec, params: StepParams, opts: &NewtonOptions) -> Result<(SolverState, usize)> {
    oracle_solve_from(model, None, params, opts)
}

/// As [`oracle_solve`], optionally warm-started from `start` at `params`.
pub fn oracle_solve_from(
    model: &ModelSpec,
    start: Option<&SolverState>,
    params: StepParams,
    opts: &NewtonOptions,
) -> Result<(SolverState, usize)> {
    let points = model.modes() * model.grid.len();
    if points > ORACLE_MAX_POINTS {
        return Err(Error::InvalidModel(format!(
            "oracle limited to {ORACLE_MAX_POINTS} grid points times modes, got {points}"
        )));
    }
    let (mut x, lambdas): (Vec<f64>, Vec<f64>) = match start {
        Some(s) => (s.to_vec(), vec![params.lambda]),
        None => {
            let x = initial_state(model)?.to_vec();
            let lambdas = (1..=ORACLE_HOMOTOPY_STEPS)
                .map(|k| params.lambda * k as f64 / ORACLE_HOMOTOPY_STEPS as f64)
                .collect();
            (x, lambdas)
        }
    };
    let mut total = 0;
    for lambda in lambdas {
        let (next, it) = fd_newton(model, x, StepParams { lambda, ..params }, opts)?;
        x = next;
        total += it;
    }
    Ok((SolverState::from_vec(&model.grid, model.modes(), &x)?, total))
}
