use nalgebra::DMatrix;

use crate::error::Result;
use crate::grid::{grad, PeriodicGrid};
use crate::model::ModelSpec;

use super::{SolverState, StepParams};

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Duplicate entries are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0; nrows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            debug_assert!(r < nrows && c < ncols);
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..nrows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.row(r).find(|&(cc, _)| cc == c).map_or(0.0, |(_, v)| v)
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows)
            .map(|r| self.row(r).map(|(c, v)| v * x[c]).sum())
            .collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.nrows, self.ncols);
        for (r, c, v) in self.triplets() {
            out[(r, c)] += v;
        }
        out
    }
}

/// Central-difference weights `(neighbour, coefficient)` of `d/dx_axis` at `x`.
fn partial_stencil(grid: &PeriodicGrid, x: usize, axis: usize) -> [(usize, f64); 2] {
    let c = 0.5 / grid.spacing();
    [(grid.shift(x, axis, 1), c), (grid.shift(x, axis, -1), -c)]
}

/// Analytic derivative of [`super::residual`] with respect to
/// `[u^1..u^d, theta^1..theta^d]`, rows ordered `[R_HJ^1..d, R_FP^1..d]`.
pub fn jacobian(model: &ModelSpec, state: &SolverState, params: StepParams) -> Result<CsrMatrix> {
    state.check_feasible()?;
    let grid = model.grid;
    let d = model.modes();
    let m = grid.len();
    let dim = grid.dim();
    let n_unknowns = 2 * d * m;
    let penalty = model.penalty_at(params.eps)?;
    let ham = &model.hamiltonian;
    let inv_h2 = 1.0 / (grid.spacing() * grid.spacing());

    let u_col = |i: usize, x: usize| i * m + x;
    let t_col = |i: usize, x: usize| (d + i) * m + x;

    let nnz_hint = n_unknowns * (4 * dim * dim + 4 * dim + 2 * d + 4);
    let mut trip: Vec<(usize, usize, f64)> = Vec::with_capacity(nnz_hint);

    for i in 0..d {
        let u = &state.u[i];
        let theta = &state.theta[i];
        let du = grad(u);
        let dp: Vec<Vec<f64>> = (0..m)
            .map(|x| ham.eval_dp_h(params.lambda, i, x, &du.at(x)))
            .collect();

        for x in 0..m {
            let hj_row = u_col(i, x);
            let fp_row = t_col(i, x);

            // D_pH . Dv
            for axis in 0..dim {
                for (z, c) in partial_stencil(&grid, x, axis) {
                    trip.push((hj_row, u_col(i, z), dp[x][axis] * c));
                }
            }
            let mut hj_diag = 1.0;
            let mut fp_diag_theta = 1.0;
            let mut fp_diag_u = 0.0;
            for j in (0..d).filter(|&j| j != i) {
                let s_ij = u[x] - state.u[j][x] - model.costs.get(i, j)[x];
                let s_ji = state.u[j][x] - u[x] - model.costs.get(j, i)[x];
                let (_, b1_ij, b2_ij) = penalty.eval(s_ij);
                let (_, b1_ji, b2_ji) = penalty.eval(s_ji);
                let theta_j = state.theta[j][x];

                hj_diag += b1_ij;
                trip.push((hj_row, u_col(j, x), -b1_ij));

                let w = b2_ij * theta[x] + b2_ji * theta_j;
                fp_diag_u += w;
                trip.push((fp_row, u_col(j, x), -w));
                fp_diag_theta += b1_ij;
                trip.push((fp_row, t_col(j, x), -b1_ji));
            }
            trip.push((hj_row, u_col(i, x), hj_diag));
            trip.push((hj_row, t_col(i, x), -model.coupling.g_prime(theta[x])?));
            trip.push((fp_row, u_col(i, x), fp_diag_u));
            trip.push((fp_row, t_col(i, x), fp_diag_theta));

            // -div(D_ppH Dv theta + D_pH f)
            for axis in 0..dim {
                for (y, cy) in partial_stencil(&grid, x, axis) {
                    trip.push((fp_row, t_col(i, y), -cy * dp[y][axis]));
                    let hpp = ham.eval_dpp_h(params.lambda, i, y, &du.at(y));
                    for l in 0..dim {
                        let a = hpp[(axis, l)];
                        if a == 0.0 {
                            continue;
                        }
                        for (z, cz) in partial_stencil(&grid, y, l) {
                            trip.push((fp_row, u_col(i, z), -cy * theta[y] * a * cz));
                        }
                    }
                }
            }

            if params.sigma != 0.0 {
                let s = params.sigma * inv_h2;
                trip.push((hj_row, u_col(i, x), 2.0 * dim as f64 * s));
                trip.push((fp_row, t_col(i, x), 2.0 * dim as f64 * s));
                for axis in 0..dim {
                    for off in [-1, 1] {
                        let z = grid.shift(x, axis, off);
                        trip.push((hj_row, u_col(i, z), -s));
                        trip.push((fp_row, t_col(i, z), -s));
                    }
                }
            }
        }
    }
    Ok(CsrMatrix::from_triplets(n_unknowns, n_unknowns, trip))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{laplacian, PeriodicGrid};
    use crate::model::{CouplingLaw, HamiltonianSpec, PenaltyFamily, SwitchingCosts};
    use crate::solver::{initial_state, residual};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_state(model: &ModelSpec, rng: &mut ChaCha8Rng) -> SolverState {
        let mut s = initial_state(model).unwrap();
        for i in 0..model.modes() {
            for x in 0..model.grid.len() {
                s.u[i][x] = rng.random_range(-0.3..0.3);
                s.theta[i][x] = rng.random_range(0.3..1.7);
            }
        }
        s
    }

    fn model(dim: usize, n: usize, d: usize, coupling: CouplingLaw, family: PenaltyFamily) -> ModelSpec {
        let grid = PeriodicGrid::new(dim, n).unwrap();
        let pots = (0..d)
            .map(|i| grid.from_fn(|x| 0.15 * (1.0 + (2.0 * PI * (x[0] + 0.25 * i as f64)).cos())))
            .collect();
        let h = HamiltonianSpec::quadratic(pots).unwrap();
        let c = SwitchingCosts::from_fn(&grid, d, |i, j| grid.constant(0.05 + 0.01 * (i + 2 * j) as f64))
            .unwrap();
        ModelSpec::new(h, coupling, c, family, 1.0).unwrap()
    }

    #[test]
    fn csr_sums_duplicates() {
        let a = CsrMatrix::from_triplets(2, 3, vec![(1, 2, 1.0), (0, 0, 2.0), (1, 2, 0.5), (0, 1, -1.0)]);
        assert_eq!(a.nnz(), 3);
        assert_eq!(a.get(1, 2), 1.5);
        assert_eq!(a.apply(&[1.0, 2.0, 3.0]), vec![0.0, 4.5]);
    }

    #[test]
    fn flat_state_entries_by_hand() {
        let grid = PeriodicGrid::new(1, 8).unwrap();
        let h = HamiltonianSpec::quadratic(vec![grid.zeros()]).unwrap();
        let c = SwitchingCosts::uniform(&grid, 1, 1.0).unwrap();
        let m = ModelSpec::new(h, CouplingLaw::Log, c, PenaltyFamily::Cubic, 1.0).unwrap();
        let s = initial_state(&m).unwrap();
        let j = jacobian(&m, &s, StepParams::new(1.0, 0.1, 0.0)).unwrap();
        let out = j.apply(&vec![1.0; 16]);
        // HJ row: v - g'(1) f = 0. Transport row: -div(Dv + 0 f) + f = f.
        assert!(out[..8].iter().all(|v| v.abs() < 1e-15));
        assert!(out[8..].iter().all(|v| (v - 1.0).abs() < 1e-15));
        assert_eq!(j.get(0, 0), 1.0);
        assert_eq!(j.get(0, 8), -1.0);
        // theta = 1: the u-block of the transport row is minus the wide Laplacian.
        let inv = 1.0 / (4.0 * grid.spacing() * grid.spacing());
        assert!((j.get(8, 0) - 2.0 * inv).abs() < 1e-12);
        assert!((j.get(8, 2) + inv).abs() < 1e-12);
        assert!((j.get(8, 6) + inv).abs() < 1e-12);
    }

    #[test]
    fn viscosity_adds_negative_laplacian_on_diagonal_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = model(2, 5, 2, CouplingLaw::Log, PenaltyFamily::Cubic);
        let s = random_state(&m, &mut rng);
        let j0 = jacobian(&m, &s, StepParams::new(1.0, 0.2, 0.0)).unwrap();
        let j1 = jacobian(&m, &s, StepParams::new(1.0, 0.2, 0.03)).unwrap();
        let w: Vec<f64> = (0..j0.ncols()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a = j0.apply(&w);
        let b = j1.apply(&w);
        let mm = m.grid.len();
        for block in 0..4 {
            let f = m.grid.field(w[block * mm..(block + 1) * mm].to_vec()).unwrap();
            let lap = laplacian(&f);
            for x in 0..mm {
                let k = block * mm + x;
                assert!((b[k] - a[k] + 0.03 * lap[x]).abs() < 1e-10);
            }
        }
    }

    fn directional_check(m: &ModelSpec, params: StepParams, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_state(m, &mut rng);
        let j = jacobian(m, &s, params).unwrap();
        let x0 = s.to_vec();
        let w: Vec<f64> = (0..x0.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let t = 1e-5;
        let eval = |sign: f64| {
            let x: Vec<f64> = x0.iter().zip(&w).map(|(a, b)| a + sign * t * b).collect();
            let st = SolverState::from_vec(&m.grid, m.modes(), &x).unwrap();
            residual(m, &st, params).unwrap().to_vec()
        };
        let rp = eval(1.0);
        let rm = eval(-1.0);
        let jw = j.apply(&w);
        let fd: Vec<f64> = rp.iter().zip(&rm).map(|(a, b)| (a - b) / (2.0 * t)).collect();
        let num = fd.iter().zip(&jw).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let den = jw.iter().map(|a| a * a).sum::<f64>().sqrt();
        num / den
    }

    #[test]
    fn jacobian_matches_symmetric_differences() {
        let cases = [
            (1, 12, 2, CouplingLaw::Log, PenaltyFamily::Cubic),
            (1, 9, 3, CouplingLaw::Power { alpha: 0.5 }, PenaltyFamily::Exponential),
            (2, 5, 2, CouplingLaw::Log, PenaltyFamily::Quadratic),
            (3, 4, 2, CouplingLaw::Power { alpha: 0.3 }, PenaltyFamily::Cubic),
        ];
        for (k, (dim, n, d, c, f)) in cases.into_iter().enumerate() {
            let m = model(dim, n, d, c, f);
            let err = directional_check(&m, StepParams::new(0.6, 0.05, 0.01), k as u64);
            assert!(err < 1e-6, "case {k}: {err}");
        }
    }
}
