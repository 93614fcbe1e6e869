use std::time::Instant;

use crate::error::{Error, Result};
use crate::model::ModelSpec;

use super::{
    jacobian, residual, solve_sparse, NewtonOptions, Phase, SolveReport, SolverState, StepParams,
    StepRecord,
};

/// Sufficient-decrease constant of the backtracking search on `|R|_inf`.
const ARMIJO: f64 = 1e-4;

/// Damped Newton at fixed `(lambda, eps, sigma)`.
///
/// Each step solves `J delta = -R` and halves the step until the densities
/// stay above `theta_floor` and the sup-norm residual decreases.
pub fn newton_solve(
    model: &ModelSpec,
    state0: &SolverState,
    params: StepParams,
    opts: &NewtonOptions,
) -> Result<(SolverState, SolveReport)> {
    opts.validate()?;
    let started = Instant::now();
    let mut state = state0.clone();
    let mut r = residual(model, &state, params)?;
    let mut norm = r.sup_norm();
    let mut record = StepRecord {
        phase: Phase::Single,
        params,
        iterations: 0,
        residual_history: vec![norm],
        damping_events: 0,
        bisection_depth: 0,
        wall_time_s: 0.0,
    };
    let fail = |record: &StepRecord, reason: String, started: Instant| {
        let mut record = record.clone();
        record.wall_time_s = started.elapsed().as_secs_f64();
        Error::NonConvergence {
            params,
            reason,
            report: Box::new(SolveReport {
                steps: vec![record],
                flags: Vec::new(),
            }),
        }
    };

    let grid = model.grid;
    let d = model.modes();
    let m = grid.len();
    while norm > opts.tol_residual {
        if record.iterations == opts.max_iter {
            return Err(fail(
                &record,
                format!("{} iterations exceeded, residual {norm:.3e}", opts.max_iter),
                started,
            ));
        }
        let j = jacobian(model, &state, params)?;
        let rhs: Vec<f64> = r.to_vec().into_iter().map(|v| -v).collect();
        let delta = solve_sparse(&j, &rhs).map_err(|detail| Error::LinearSolve { params, detail })?;

        let x = state.to_vec();
        let theta_start = d * m;
        let mut t = 1.0;
        let accepted = loop {
            if t < opts.min_step {
                break None;
            }
            let feasible = x[theta_start..]
                .iter()
                .zip(&delta[theta_start..])
                .all(|(v, dv)| v + t * dv >= opts.theta_floor);
            if feasible {
                let trial: Vec<f64> = x.iter().zip(&delta).map(|(v, dv)| v + t * dv).collect();
                let candidate = SolverState::from_vec(&grid, d, &trial);
                if let Ok(candidate) = candidate {
                    if let Ok(rc) = residual(model, &candidate, params) {
                        let nc = rc.sup_norm();
                        if nc <= (1.0 - ARMIJO * t) * norm {
                            break Some((candidate, rc, nc));
                        }
                    }
                }
            }
            t *= opts.backtrack;
            record.damping_events += 1;
        };
        let Some((candidate, rc, nc)) = accepted else {
            return Err(fail(
                &record,
                format!("line search stalled below step {:e} at residual {norm:.3e}", opts.min_step),
                started,
            ));
        };
        state = candidate;
        r = rc;
        norm = nc;
        record.iterations += 1;
        record.residual_history.push(norm);
    }
    record.wall_time_s = started.elapsed().as_secs_f64();
    Ok((
        state,
        SolveReport {
            steps: vec![record],
            flags: Vec::new(),
        },
    ))
}
