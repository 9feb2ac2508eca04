//! Dense phase-1 simplex for small feasibility problems `A x ≤ b` with free
//! variables. Instances here have at most a few hundred variables, so a
//! plain tableau with Bland's rule (which cannot cycle) is plenty.

use crate::{Error, Result};

const PIVOT_TOL: f64 = 1e-9;

/// Decide feasibility of `A x ≤ b` over free `x`; returns a feasible point
/// if one exists.
pub fn feasible_point(a: &[Vec<f64>], b: &[f64], tol: f64) -> Result<Option<Vec<f64>>> {
    let m = a.len();
    if m != b.len() {
        return Err(Error::Shape("constraint matrix and rhs lengths differ".into()));
    }
    if m == 0 {
        return Ok(Some(Vec::new()));
    }
    let n = a[0].len();
    if a.iter().any(|row| row.len() != n) {
        return Err(Error::Shape("constraint rows have unequal lengths".into()));
    }

    // Free variables split as x⁺ − x⁻, one slack per row, one artificial per
    // negative-rhs row.
    let num_art = b.iter().filter(|&&bi| bi < 0.0).count();
    let cols = 2 * n + m + num_art;
    let mut tableau = vec![vec![0.0; cols + 1]; m];
    let mut basis = vec![0usize; m];
    let mut art_idx = 0;
    for i in 0..m {
        let negate = b[i] < 0.0;
        let sign = if negate { -1.0 } else { 1.0 };
        for j in 0..n {
            tableau[i][j] = sign * a[i][j];
            tableau[i][n + j] = -sign * a[i][j];
        }
        tableau[i][2 * n + i] = sign;
        tableau[i][cols] = sign * b[i];
        if negate {
            let col = 2 * n + m + art_idx;
            tableau[i][col] = 1.0;
            basis[i] = col;
            art_idx += 1;
        } else {
            basis[i] = 2 * n + i;
        }
    }

    // Phase-1 objective: minimize the sum of artificials. Price out the
    // artificial basis rows into the objective.
    let mut obj = vec![0.0; cols + 1];
    for i in 0..m {
        if basis[i] >= 2 * n + m {
            for j in 0..=cols {
                obj[j] += tableau[i][j];
            }
        }
    }

    loop {
        // Bland's rule: smallest-index column with positive reduced profit.
        // Artificial columns are never re-admitted once they leave.
        let entering = (0..2 * n + m).find(|&j| obj[j] > PIVOT_TOL);
        let Some(col) = entering else { break };
        let mut leaving: Option<(usize, f64)> = None;
        for i in 0..m {
            if tableau[i][col] > PIVOT_TOL {
                let ratio = tableau[i][cols] / tableau[i][col];
                let better = match leaving {
                    None => true,
                    Some((li, lr)) => {
                        ratio < lr - PIVOT_TOL
                            || (ratio <= lr + PIVOT_TOL && basis[i] < basis[li])
                    }
                };
                if better {
                    leaving = Some((i, ratio));
                }
            }
        }
        let Some((row, _)) = leaving else {
            // Unbounded phase-1 objective cannot happen (it is bounded below
            // by zero); treat defensively as a numerical failure.
            return Err(Error::Verification("phase-1 simplex lost boundedness".into()));
        };
        let pivot = tableau[row][col];
        for v in tableau[row].iter_mut() {
            *v /= pivot;
        }
        for i in 0..m {
            if i != row && tableau[i][col].abs() > 0.0 {
                let factor = tableau[i][col];
                for j in 0..=cols {
                    tableau[i][j] -= factor * tableau[row][j];
                }
            }
        }
        if obj[col].abs() > 0.0 {
            let factor = obj[col];
            for j in 0..=cols {
                obj[j] -= factor * tableau[row][j];
            }
        }
        basis[row] = col;
    }

    let infeasibility = obj[cols];
    if infeasibility > tol {
        return Ok(None);
    }
    let mut x = vec![0.0; n];
    for i in 0..m {
        let value = tableau[i][cols];
        if basis[i] < n {
            x[basis[i]] += value;
        } else if basis[i] < 2 * n {
            x[basis[i] - n] -= value;
        }
    }
    Ok(Some(x))
}
