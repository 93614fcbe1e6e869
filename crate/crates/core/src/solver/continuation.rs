use crate::error::{Error, Result};
use crate::model::ModelSpec;

use super::{
    initial_state, newton_solve, ContinuationSchedule, NewtonOptions, Phase, SolveReport,
    SolverState, StepParams,
};

/// Maximum number of times a failed continuation step is halved.
pub const MAX_BISECTIONS: usize = 8;

/// Converged state at one scheduled penalty level.
#[derive(Debug, Clone)]
pub struct TrajectoryPoint {
    pub params: StepParams,
    pub state: SolverState,
}

#[derive(Debug, Clone)]
pub struct ContinuationOutcome {
    pub state: SolverState,
    pub report: SolveReport,
    /// One entry per penalty level (the end of the homotopy phase, then each
    /// penalty step); empty unless requested.
    pub trajectory: Vec<TrajectoryPoint>,
}

fn midpoint(a: StepParams, b: StepParams) -> StepParams {
    StepParams {
        lambda: 0.5 * (a.lambda + b.lambda),
        eps: (a.eps * b.eps).sqrt(),
        sigma: 0.5 * (a.sigma + b.sigma),
    }
}

struct Driver<'a> {
    model: &'a ModelSpec,
    opts: &'a NewtonOptions,
    report: SolveReport,
}

impl Driver<'_> {
    /// Solves at `to` warm-started from a solution at `from`, halving the
    /// parameter step on failure.
    fn advance(
        &mut self,
        state: &SolverState,
        from: StepParams,
        to: StepParams,
        phase: Phase,
        depth: usize,
    ) -> Result<(SolverState, usize)> {
        match newton_solve(self.model, state, to, self.opts) {
            Ok((next, rep)) => {
                let mut rec = rep.steps.into_iter().next().expect("one record per solve");
                rec.phase = phase;
                rec.bisection_depth = depth;
                let iterations = rec.iterations;
                self.report.steps.push(rec);
                Ok((next, iterations))
            }
            Err(e) if e.is_solver_failure() && depth < MAX_BISECTIONS && from != to => {
                let mid = midpoint(from, to);
                self.report
                    .flags
                    .push(format!("step to ({to}) bisected at depth {}", depth + 1));
                let (s_mid, it_a) = self.advance(state, from, mid, phase, depth + 1)?;
                let (s_to, it_b) = self.advance(&s_mid, mid, to, phase, depth + 1)?;
                Ok((s_to, it_a + it_b))
            }
            Err(Error::NonConvergence {
                params,
                reason,
                report,
            }) => {
                let mut full = self.report.clone();
                full.steps.extend(report.steps);
                Err(Error::NonConvergence {
                    params,
                    reason,
                    report: Box::new(full),
                })
            }
            Err(e) => Err(e),
        }
    }
}

/// Homotopy in `lambda` at `(eps_0, sigma_0)`, then joint annealing of
/// `(eps, sigma)` at `lambda = 1`, each step warm-started from the last.
pub fn continuation_run(
    model: &ModelSpec,
    schedule: &ContinuationSchedule,
    opts: &NewtonOptions,
    keep_trajectory: bool,
) -> Result<ContinuationOutcome> {
    let mut driver = Driver {
        model,
        opts,
        report: SolveReport::default(),
    };
    let eps0 = schedule.eps_steps()[0];
    let sigma0 = schedule.sigma_steps()[0];

    let mut state = initial_state(model)?;
    let mut prev = StepParams::new(0.0, eps0, sigma0);
    for &lambda in schedule.lambda_steps() {
        let to = StepParams::new(lambda, eps0, sigma0);
        state = driver.advance(&state, prev, to, Phase::Homotopy, 0)?.0;
        prev = to;
    }

    let mut trajectory = Vec::new();
    if keep_trajectory {
        trajectory.push(TrajectoryPoint {
            params: prev,
            state: state.clone(),
        });
    }
    let mut penalty_iterations = Vec::new();
    for (&eps, &sigma) in schedule
        .eps_steps()
        .iter()
        .zip(schedule.sigma_steps())
        .skip(1)
    {
        let to = StepParams::new(1.0, eps, sigma);
        let (next, iterations) = driver.advance(&state, prev, to, Phase::Penalty, 0)?;
        state = next;
        prev = to;
        penalty_iterations.push(iterations);
        if keep_trajectory {
            trajectory.push(TrajectoryPoint {
                params: to,
                state: state.clone(),
            });
        }
    }
    let mut report = driver.report;
    for (k, w) in penalty_iterations.windows(4).enumerate() {
        if w[0] < w[1] && w[1] < w[2] && w[2] < w[3] {
            report.flags.push(format!(
                "Newton iterations grew for 3 consecutive penalty steps ending at eps={}",
                schedule.eps_steps()[k + 4]
            ));
        }
    }
    Ok(ContinuationOutcome {
        state,
        report,
        trajectory,
    })
}
