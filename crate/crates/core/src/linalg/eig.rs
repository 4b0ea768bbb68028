//! Symmetric eigenvalue routines: shifted power iteration for the extreme
//! eigenvalues, a deflated variant for the second-largest magnitude of a
//! doubly stochastic matrix, and a cyclic Jacobi full-spectrum solver.

use super::matrix::{dot, norm_sq};
use super::Matrix;
use crate::error::{dim_err, invalid, Result};

pub const SYMMETRY_TOL: f64 = 1e-10;
pub const POWER_REL_TOL: f64 = 1e-9;
pub const POWER_MAX_ITERS: usize = 10_000;

/// Largest and smallest eigenvalue of a symmetric matrix.
///
/// Both come from power iteration on a shifted copy: `m + sI` for the top
/// end and `sI - m` for the bottom end, where `s` is the Gershgorin radius so
/// that both shifted matrices are positive semidefinite.
pub fn extreme_eigs_symmetric(m: &Matrix) -> Result<(f64, f64)> {
    check_symmetric(m)?;
    let n = m.rows();
    if n == 0 {
        return dim_err("empty matrix has no eigenvalues");
    }
    let radius = (0..n)
        .map(|r| m.row(r).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    if radius == 0.0 {
        return Ok((0.0, 0.0));
    }
    let top = dominant_eigenvalue(m, radius, 1.0)? - radius;
    let bottom = radius - dominant_eigenvalue(m, radius, -1.0)?;
    Ok((top, bottom))
}

/// `max{|λ₂|, |λ_N|}` of a symmetric doubly stochastic matrix, obtained by
/// removing the known top eigenpair `(1, 1/√N)` and taking the extreme
/// eigenvalues of what remains.
pub fn second_largest_magnitude(m: &Matrix) -> Result<f64> {
    check_symmetric(m)?;
    let n = m.rows();
    if n <= 1 {
        return Ok(0.0);
    }
    let inv_n = 1.0 / n as f64;
    let deflated = Matrix::from_fn(n, n, |r, c| m[(r, c)] - inv_n);
    let (top, bottom) = extreme_eigs_symmetric(&deflated)?;
    Ok(top.abs().max(bottom.abs()))
}

fn check_symmetric(m: &Matrix) -> Result<()> {
    if !m.is_square() {
        return dim_err(format!("expected a square matrix, got {}x{}", m.rows(), m.cols()));
    }
    m.ensure_finite("matrix")?;
    if !m.is_symmetric(SYMMETRY_TOL) {
        return invalid("matrix is not symmetric within 1e-10");
    }
    Ok(())
}

/// Largest eigenvalue of `sign·m + shift·I` (assumed PSD) by power iteration.
/// Stops once the eigen-residual `‖Ax − λx‖` falls below `1e-9` relative to
/// the shifted scale, which bounds the eigenvalue error by the same amount.
fn dominant_eigenvalue(m: &Matrix, shift: f64, sign: f64) -> Result<f64> {
    let n = m.rows();
    // Fixed, non-degenerate start vector: deterministic and not orthogonal to
    // any coordinate-aligned or constant eigenvector.
    let mut x: Vec<f64> = (0..n)
        .map(|i| 1.0 + ((i as f64 + 1.0) * 0.754_877_666_246_692_8).fract())
        .collect();
    normalize(&mut x);
    let scale = 2.0 * shift;

    let mut lambda = 0.0;
    for _ in 0..POWER_MAX_ITERS {
        let mx = m.matvec(&x)?;
        let y: Vec<f64> = mx.iter().zip(&x).map(|(a, b)| sign * a + shift * b).collect();
        lambda = dot(&x, &y);
        let residual = y
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - lambda * b).powi(2))
            .sum::<f64>()
            .sqrt();
        if residual <= POWER_REL_TOL * scale {
            return Ok(lambda);
        }
        let ny = norm_sq(&y).sqrt();
        if ny == 0.0 {
            return Ok(0.0);
        }
        x = y.into_iter().map(|v| v / ny).collect();
    }
    Ok(lambda)
}

fn normalize(x: &mut [f64]) {
    let n = norm_sq(x).sqrt();
    if n > 0.0 {
        x.iter_mut().for_each(|v| *v /= n);
    }
}

/// All eigenvalues of a symmetric matrix, descending, by cyclic Jacobi
/// rotations.
pub fn jacobi_eigenvalues(m: &Matrix) -> Result<Vec<f64>> {
    check_symmetric(m)?;
    let n = m.rows();
    let mut a = m.clone();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|r| (0..n).filter(move |&c| c != r).map(move |c| (r, c)))
            .map(|(r, c)| a[(r, c)] * a[(r, c)])
            .sum();
        let scale: f64 = a.as_slice().iter().map(|x| x * x).sum();
        if off <= 1e-30 * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    eig.sort_by(|x, y| y.total_cmp(x));
    Ok(eig)
}
