//! Phase-one simplex for box-interval linear systems.
//!
//! Decides whether some unrestricted `eta` satisfies `l <= A eta <= u`
//! componentwise. Free variables are split into nonnegative parts, a single
//! artificial variable measures the worst constraint violation, and Bland's
//! rule guards against cycling.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Tolerance on the optimal artificial value below which the system is
/// declared feasible.
pub const LP_TOL: f64 = 1e-9;

const MAX_PIVOTS: usize = 50_000;
const PIVOT_EPS: f64 = 1e-12;

/// Outcome of the feasibility check.
#[derive(Debug, Clone)]
pub struct Feasibility {
    /// True when some eta satisfies every finite bound.
    pub feasible: bool,
    /// Optimal artificial value: the smallest achievable worst violation.
    pub infeasibility: f64,
    /// A satisfying eta, present when feasible.
    pub witness: Option<Vec<f64>>,
}

/// Decide feasibility of `l <= A eta <= u` with `eta` unrestricted in sign.
///
/// Infinite bounds drop the corresponding one-sided constraint. An empty box
/// (`l[i] > u[i]`) is reported infeasible without running the simplex.
pub fn box_system_feasible(a: &DMatrix<f64>, l: &[f64], u: &[f64]) -> Result<Feasibility> {
    let (n, m) = a.shape();
    if l.len() != n || u.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "bounds of length {}/{} for {} rows",
            l.len(),
            u.len(),
            n
        )));
    }
    if l.iter().zip(u).any(|(lo, hi)| lo > hi) {
        return Ok(Feasibility {
            feasible: false,
            infeasibility: f64::INFINITY,
            witness: None,
        });
    }
    // one-sided rows of G eta <= h
    let mut g_rows: Vec<Vec<f64>> = Vec::new();
    let mut h: Vec<f64> = Vec::new();
    for i in 0..n {
        if u[i].is_finite() {
            g_rows.push((0..m).map(|j| a[(i, j)]).collect());
            h.push(u[i]);
        }
        if l[i].is_finite() {
            g_rows.push((0..m).map(|j| -a[(i, j)]).collect());
            h.push(-l[i]);
        }
    }
    let rows = g_rows.len();
    if rows == 0 {
        return Ok(Feasibility {
            feasible: true,
            infeasibility: 0.0,
            witness: Some(vec![0.0; m]),
        });
    }

    // tableau columns: eta+ (m), eta- (m), artificial t, slacks (rows), rhs
    let t_col = 2 * m;
    let ncols = 2 * m + 1 + rows;
    let rhs = ncols;
    let mut tab = DMatrix::<f64>::zeros(rows + 1, ncols + 1);
    for (r, row) in g_rows.iter().enumerate() {
        for j in 0..m {
            tab[(r, j)] = row[j];
            tab[(r, m + j)] = -row[j];
        }
        tab[(r, t_col)] = -1.0;
        tab[(r, t_col + 1 + r)] = 1.0;
        tab[(r, rhs)] = h[r];
    }
    tab[(rows, t_col)] = 1.0;
    let mut basis: Vec<usize> = (0..rows).map(|r| t_col + 1 + r).collect();

    // drive rhs nonnegative by pivoting t into the most violated row
    let mut worst = 0;
    for r in 1..rows {
        if tab[(r, rhs)] < tab[(worst, rhs)] {
            worst = r;
        }
    }
    if tab[(worst, rhs)] < 0.0 {
        pivot(&mut tab, &mut basis, worst, t_col);
    }

    for _ in 0..MAX_PIVOTS {
        // Bland: entering column is the smallest index with negative reduced cost
        let entering = (0..ncols).find(|&j| tab[(rows, j)] < -PIVOT_EPS);
        let Some(col) = entering else { break };
        // ratio test, ties broken by smallest basic variable index
        let mut leave: Option<(usize, f64)> = None;
        for r in 0..rows {
            let coef = tab[(r, col)];
            if coef <= PIVOT_EPS {
                continue;
            }
            let ratio = tab[(r, rhs)] / coef;
            match leave {
                None => leave = Some((r, ratio)),
                Some((lr, lratio)) => {
                    if ratio < lratio - PIVOT_EPS
                        || (ratio < lratio + PIVOT_EPS && basis[r] < basis[lr])
                    {
                        leave = Some((r, ratio));
                    }
                }
            }
        }
        let Some((row, _)) = leave else {
            // the artificial objective is bounded below by zero, so an
            // unbounded ray means the tableau degenerated numerically
            return Err(Error::DegenerateCycle);
        };
        pivot(&mut tab, &mut basis, row, col);
    }
    if (0..ncols).any(|j| tab[(rows, j)] < -PIVOT_EPS) {
        return Err(Error::DegenerateCycle);
    }

    let objective = -tab[(rows, rhs)];
    let scale = 1.0 + h.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let feasible = objective <= LP_TOL * scale;
    let witness = if feasible {
        let mut eta = vec![0.0; m];
        for (r, &b) in basis.iter().enumerate() {
            if b < m {
                eta[b] += tab[(r, rhs)];
            } else if b < 2 * m {
                eta[b - m] -= tab[(r, rhs)];
            }
        }
        Some(eta)
    } else {
        None
    };
    Ok(Feasibility {
        feasible,
        infeasibility: objective.max(0.0),
        witness,
    })
}

fn pivot(tab: &mut DMatrix<f64>, basis: &mut [usize], row: usize, col: usize) {
    let ncols = tab.ncols();
    let p = tab[(row, col)];
    for j in 0..ncols {
        tab[(row, j)] /= p;
    }
    for i in 0..tab.nrows() {
        if i == row {
            continue;
        }
        let f = tab[(i, col)];
        if f != 0.0 {
            for j in 0..ncols {
                tab[(i, j)] -= f * tab[(row, j)];
            }
        }
    }
    basis[row] = col;
}
