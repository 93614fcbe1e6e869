use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;

use super::CsrMatrix;

/// Required relative residual `|A x - b| / |b|` of a linear solve.
pub const LINEAR_TOLERANCE: f64 = 1e-12;

const MAX_REFINEMENTS: usize = 3;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Solves `A x = b` by sparse LU with iterative refinement.
pub fn solve_sparse(matrix: &CsrMatrix, rhs: &[f64]) -> Result<Vec<f64>, String> {
    let n = matrix.nrows();
    if matrix.ncols() != n || rhs.len() != n {
        return Err(format!("shape mismatch: {}x{} system with {} rhs", n, matrix.ncols(), rhs.len()));
    }
    let rhs_norm = norm(rhs);
    if rhs_norm == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let triplets: Vec<Triplet<usize, usize, f64>> = matrix
        .triplets()
        .map(|(r, c, v)| Triplet::new(r, c, v))
        .collect();
    let a = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &triplets)
        .map_err(|e| format!("matrix assembly: {e:?}"))?;
    let lu = a.sp_lu().map_err(|e| format!("LU factorization: {e:?}"))?;

    let solve = |b: &[f64]| -> Vec<f64> {
        let mut col = Mat::<f64>::from_fn(n, 1, |i, _| b[i]);
        lu.solve_in_place(col.as_mut());
        (0..n).map(|i| col[(i, 0)]).collect()
    };

    let mut x = solve(rhs);
    for _ in 0..=MAX_REFINEMENTS {
        if x.iter().any(|v| !v.is_finite()) {
            return Err("singular Jacobian: non-finite solution".into());
        }
        let ax = matrix.apply(&x);
        let r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let rel = norm(&r) / rhs_norm;
        if rel <= LINEAR_TOLERANCE {
            return Ok(x);
        }
        let dx = solve(&r);
        for (xi, di) in x.iter_mut().zip(dx) {
            *xi += di;
        }
    }
    let ax = matrix.apply(&x);
    let rel = norm(&rhs.iter().zip(&ax).map(|(b, a)| b - a).collect::<Vec<_>>()) / rhs_norm;
    if rel <= LINEAR_TOLERANCE {
        Ok(x)
    } else {
        Err(format!("relative linear residual {rel:.3e} above {LINEAR_TOLERANCE:e}"))
    }
}
