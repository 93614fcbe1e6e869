use crate::error::Result;
use crate::grid::{div, grad, laplacian, GridField, GridVectorField};
use crate::model::ModelSpec;

use super::{SolverState, StepParams};

/// Residual blocks of the penalized system, one field per mode and equation.
#[derive(Debug, Clone, PartialEq)]
pub struct Residual {
    /// Hamilton-Jacobi rows.
    pub hj: Vec<GridField>,
    /// Transport rows.
    pub fp: Vec<GridField>,
}

impl Residual {
    pub fn sup_norm(&self) -> f64 {
        self.hj
            .iter()
            .chain(&self.fp)
            .map(GridField::sup_norm)
            .fold(0.0, f64::max)
    }

    /// Flat vector in the same layout as [`SolverState::to_vec`].
    pub fn to_vec(&self) -> Vec<f64> {
        self.hj
            .iter()
            .chain(&self.fp)
            .flat_map(|f| f.values().iter().copied())
            .collect()
    }
}

/// Evaluates
///
/// ```text
/// R_HJ^i = H_l(Du^i, x) + u^i + sum_j b(u^i - u^j - psi^ij) - g(theta^i) - sigma Lap u^i
/// R_FP^i = -div(D_pH_l(Du^i, x) theta^i) + theta^i
///          + sum_j [b'(u^i - u^j - psi^ij) theta^i - b'(u^j - u^i - psi^ji) theta^j]
///          - source - sigma Lap theta^i
/// ```
pub fn residual(model: &ModelSpec, state: &SolverState, params: StepParams) -> Result<Residual> {
    state.check_feasible()?;
    let grid = model.grid;
    let d = model.modes();
    let m = grid.len();
    let penalty = model.penalty_at(params.eps)?;
    let ham = &model.hamiltonian;

    let mut hj = Vec::with_capacity(d);
    let mut fp = Vec::with_capacity(d);
    for i in 0..d {
        let u = &state.u[i];
        let theta = &state.theta[i];
        let du = grad(u);

        let mut flux: Vec<GridField> = (0..grid.dim()).map(|_| grid.zeros()).collect();
        let mut r_hj = grid.zeros();
        let mut r_fp = grid.zeros();
        for x in 0..m {
            let p = du.at(x);
            let dp = ham.eval_dp_h(params.lambda, i, x, &p);
            for (axis, f) in flux.iter_mut().enumerate() {
                f[x] = dp[axis] * theta[x];
            }
            let mut hj_x = ham.eval_h(params.lambda, i, x, &p) + u[x] - model.coupling.g(theta[x])?;
            let mut fp_x = theta[x] - model.source;
            for j in (0..d).filter(|&j| j != i) {
                let s_ij = u[x] - state.u[j][x] - model.costs.get(i, j)[x];
                let s_ji = state.u[j][x] - u[x] - model.costs.get(j, i)[x];
                let (b_ij, b1_ij, _) = penalty.eval(s_ij);
                hj_x += b_ij;
                fp_x += b1_ij * theta[x] - penalty.beta_prime(s_ji) * state.theta[j][x];
            }
            r_hj[x] = hj_x;
            r_fp[x] = fp_x;
        }

        let div_flux = div(&GridVectorField::new(flux)?);
        let (lap_u, lap_theta) = if params.sigma != 0.0 {
            (laplacian(u), laplacian(theta))
        } else {
            (grid.zeros(), grid.zeros())
        };
        for x in 0..m {
            r_hj[x] -= params.sigma * lap_u[x];
            r_fp[x] += -div_flux[x] - params.sigma * lap_theta[x];
        }
        hj.push(r_hj);
        fp.push(r_fp);
    }
    Ok(Residual { hj, fp })
}
