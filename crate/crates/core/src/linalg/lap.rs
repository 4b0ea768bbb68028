//! Exact linear assignment.
//!
//! Shortest-augmenting-path Hungarian method (O(d³)) on the negated score,
//! followed by a pass over the tight edges of the optimal dual solution that
//! selects the lexicographically smallest optimal permutation. The second pass
//! makes merges reproducible when scores tie (duplicate or dead units).

use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{dim_err, invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    /// `perm[r]` is the column assigned to row `r`.
    pub perm: Vec<usize>,
    /// `Σ_r score[r][perm[r]]`, summed in row order.
    pub objective: f64,
}

/// Permutation maximizing `Σ_r score[r][perm[r]]`.
pub fn solve_lap_max(score: &Matrix) -> Result<Assignment> {
    if !score.is_square() {
        return dim_err(format!(
            "assignment needs a square score matrix, got {}x{}",
            score.rows(),
            score.cols()
        ));
    }
    if score.as_slice().iter().any(|x| x.is_nan()) {
        return invalid("score matrix contains NaN");
    }
    if !score.is_finite() {
        return invalid("score matrix contains infinite entries");
    }
    let d = score.rows();
    if d == 0 {
        return Ok(Assignment {
            perm: Vec::new(),
            objective: 0.0,
        });
    }

    let cost = |r: usize, c: usize| -score[(r, c)];
    let (mut perm, row_pot, col_pot) = hungarian_min(d, cost);

    let tol = 1e-12 * (1.0 + score.max_abs()) * d as f64;
    let tight: Vec<Vec<usize>> = (0..d)
        .map(|r| {
            (0..d)
                .filter(|&c| cost(r, c) - row_pot[r] - col_pot[c] <= tol || perm[r] == c)
                .collect()
        })
        .collect();
    lexicographic_min_matching(&tight, &mut perm);

    let objective = perm
        .iter()
        .enumerate()
        .fold(0.0, |acc, (r, &c)| acc + score[(r, c)]);
    Ok(Assignment { perm, objective })
}

/// Minimum-cost assignment. Returns `(row -> col, row potentials, column
/// potentials)` with `cost(r, c) - u[r] - v[c] >= 0` and equality on the
/// assignment.
fn hungarian_min(d: usize, cost: impl Fn(usize, usize) -> f64) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    // 1-based bookkeeping; index 0 is the virtual source column.
    let mut u = vec![0.0; d + 1];
    let mut v = vec![0.0; d + 1];
    let mut owner = vec![0usize; d + 1];
    let mut way = vec![0usize; d + 1];

    for i in 1..=d {
        owner[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; d + 1];
        let mut used = vec![false; d + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=d {
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
            for j in 0..=d {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut perm = vec![0usize; d];
    for j in 1..=d {
        perm[owner[j] - 1] = j - 1;
    }
    (perm, u[1..].to_vec(), v[1..].to_vec())
}

/// Rewrites the perfect matching `perm` (which must use only `tight` edges)
/// into the lexicographically smallest perfect matching of the tight graph.
fn lexicographic_min_matching(tight: &[Vec<usize>], perm: &mut [usize]) {
    let d = perm.len();
    let mut owner = vec![0usize; d];
    for (r, &c) in perm.iter().enumerate() {
        owner[c] = r;
    }
    for r in 0..d {
        for &c in &tight[r] {
            if c >= perm[r] {
                break;
            }
            let holder = owner[c];
            if holder < r {
                continue;
            }
            // Try to free column `c` by rematching `holder` along an
            // alternating path that ends at r's current column.
            let target = perm[r];
            let mut visited = vec![false; d];
            visited[r] = true;
            let mut trail = Vec::new();
            if alternating_path(tight, perm, &owner, holder, target, r, &mut visited, &mut trail) {
                // trail holds (row, new column) pairs.
                for &(row, col) in &trail {
                    perm[row] = col;
                    owner[col] = row;
                }
                perm[r] = c;
                owner[c] = r;
                break;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn alternating_path(
    tight: &[Vec<usize>],
    perm: &[usize],
    owner: &[usize],
    row: usize,
    target: usize,
    fixed_upto: usize,
    visited: &mut [bool],
    trail: &mut Vec<(usize, usize)>,
) -> bool {
    if visited[row] {
        return false;
    }
    visited[row] = true;
    for &col in &tight[row] {
        if col == perm[row] {
            continue;
        }
        if col == target {
            trail.push((row, col));
            return true;
        }
        let next = owner[col];
        if next <= fixed_upto {
            continue;
        }
        if alternating_path(tight, perm, owner, next, target, fixed_upto, visited, trail) {
            trail.push((row, col));
            return true;
        }
    }
    false
}
