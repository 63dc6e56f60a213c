//! Rectangular minimum-cost assignment (Hungarian method with potentials).
//!
//! Among all optimal assignments the solver returns the lexicographically
//! smallest one: row 0 takes the lowest column that still admits an optimum,
//! then row 1, and so on.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `(row, column)` pairs sorted by row.
    pub pairs: Vec<(usize, usize)>,
    pub total_cost: f64,
}

impl Assignment {
    pub fn empty() -> Self {
        Assignment {
            pairs: Vec::new(),
            total_cost: 0.0,
        }
    }

    pub fn column_of(&self, row: usize) -> Option<usize> {
        self.pairs.iter().find(|&&(r, _)| r == row).map(|&(_, c)| c)
    }
}

struct Solution {
    row_to_col: Vec<Option<usize>>,
    row_dual: Vec<f64>,
    col_dual: Vec<f64>,
}

/// Core O(n^2 m) solver for `n <= m`; every row is assigned.
fn solve_wide(cost: &dyn Fn(usize, usize) -> f64, n: usize, m: usize) -> Solution {
    debug_assert!(n <= m);
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    // p[j]: 1-based row assigned to column j (0 = none); column 0 is a sentinel.
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![None; n];
    for j in 1..=m {
        if p[j] != 0 {
            row_to_col[p[j] - 1] = Some(j - 1);
        }
    }
    Solution {
        row_to_col,
        row_dual: u[1..].to_vec(),
        col_dual: v[1..].to_vec(),
    }
}

/// Solves any orientation; the smaller side is fully matched.
fn solve(cost: &dyn Fn(usize, usize) -> f64, rows: usize, cols: usize) -> Solution {
    if rows <= cols {
        return solve_wide(cost, rows, cols);
    }
    let t = solve_wide(&|i, j| cost(j, i), cols, rows);
    let mut row_to_col = vec![None; rows];
    for (c, r) in t.row_to_col.iter().enumerate() {
        if let Some(r) = r {
            row_to_col[*r] = Some(c);
        }
    }
    Solution {
        row_to_col,
        row_dual: t.col_dual,
        col_dual: t.row_dual,
    }
}

fn total(cost: &[Vec<f64>], row_to_col: &[Option<usize>]) -> f64 {
    row_to_col
        .iter()
        .enumerate()
        .filter_map(|(r, c)| c.map(|c| cost[r][c]))
        .sum()
}

/// Minimum-cost assignment between rows and columns of a finite cost matrix.
/// Rectangular matrices are allowed; `min(rows, cols)` pairs are returned.
pub fn hungarian(cost: &[Vec<f64>]) -> Result<Assignment> {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    if let Some(r) = cost.iter().position(|row| row.len() != cols) {
        return Err(Error::parameter(
            "cost matrix",
            format!("row {r} has {} entries, expected {cols}", cost[r].len()),
        ));
    }
    if cost.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::parameter("cost matrix", "entries must be finite"));
    }
    if rows == 0 || cols == 0 {
        return Ok(Assignment::empty());
    }

    let full = solve(&|i, j| cost[i][j], rows, cols);
    let optimum = total(cost, &full.row_to_col);
    let scale = cost.iter().flatten().fold(1.0f64, |a, c| a.max(c.abs()));
    let eps = 1e-9 * scale * rows.min(cols) as f64;

    // Lexicographic refinement. An edge with positive reduced cost cannot be
    // part of any optimal assignment, so only tight edges are re-checked.
    let mut current = full.row_to_col.clone();
    let mut taken = vec![false; cols];
    let mut fixed_cost = 0.0;
    for i in 0..rows {
        let tight = (0..cols).filter(|&j| {
            !taken[j] && cost[i][j] - full.row_dual[i] - full.col_dual[j] <= eps
        });
        for j in tight {
            if current[i] == Some(j) {
                break;
            }
            let rest_rows: Vec<usize> = (i + 1..rows).collect();
            let rest_cols: Vec<usize> = (0..cols).filter(|&c| !taken[c] && c != j).collect();
            let sub = solve(
                &|a, b| cost[rest_rows[a]][rest_cols[b]],
                rest_rows.len(),
                rest_cols.len(),
            );
            let sub_cost: f64 = sub
                .row_to_col
                .iter()
                .enumerate()
                .filter_map(|(a, b)| b.map(|b| cost[rest_rows[a]][rest_cols[b]]))
                .sum();
            if fixed_cost + cost[i][j] + sub_cost <= optimum + eps {
                current[i] = Some(j);
                for (a, b) in sub.row_to_col.iter().enumerate() {
                    current[rest_rows[a]] = b.map(|b| rest_cols[b]);
                }
                break;
            }
        }
        if let Some(j) = current[i] {
            taken[j] = true;
            fixed_cost += cost[i][j];
        }
    }

    let pairs: Vec<(usize, usize)> = current
        .iter()
        .enumerate()
        .filter_map(|(r, c)| c.map(|c| (r, c)))
        .collect();
    if pairs.len() != rows.min(cols) {
        return Err(Error::Invariant(format!(
            "assignment has {} pairs, expected {}",
            pairs.len(),
            rows.min(cols)
        )));
    }
    Ok(Assignment {
        total_cost: total(cost, &current),
        pairs,
    })
}
