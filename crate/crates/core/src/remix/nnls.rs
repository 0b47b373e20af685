//! Non-negative least squares, Lawson-Hanson active-set method.
//!
//! Columns are scaled to unit norm before solving so that the stopping test
//! on the dual vector `A^T (b - A x)` is independent of stem loudness.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};

/// Dual-feasibility tolerance relative to `|b|`.
pub const GRADIENT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct NnlsSolution {
    pub x: Vec<f64>,
    /// `|A x - b|_2`.
    pub residual: f64,
    /// Columns with zero norm; their coefficient is pinned to 0.
    pub zero_columns: Vec<usize>,
    pub iterations: usize,
}

fn solve_passive(g: &DMatrix<f64>, h: &DVector<f64>, passive: &[usize]) -> DVector<f64> {
    let k = passive.len();
    let gp = DMatrix::from_fn(k, k, |r, c| g[(passive[r], passive[c])]);
    let hp = DVector::from_fn(k, |r, _| h[passive[r]]);
    match gp.clone().cholesky() {
        Some(ch) => ch.solve(&hp),
        None => gp.svd(true, true).solve(&hp, 1e-14).unwrap_or_else(|_| DVector::zeros(k)),
    }
}

/// Minimises `|A x - b|_2` subject to `x >= 0`.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<NnlsSolution> {
    let (m, n) = a.shape();
    if b.len() != m {
        return invalid(format!("right-hand side has {} rows, matrix has {m}", b.len()));
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return invalid("non-finite value in least-squares problem");
    }
    let norms: Vec<f64> = a.column_iter().map(|c| c.norm()).collect();
    let zero_columns: Vec<usize> = (0..n).filter(|&j| norms[j] == 0.0).collect();
    let mut scaled = a.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        if norms[j] > 0.0 {
            col /= norms[j];
        }
    }
    let g = scaled.transpose() * &scaled;
    let h = scaled.transpose() * b;
    let tol = GRADIENT_TOL * b.norm().max(f64::MIN_POSITIVE);

    let mut x = DVector::zeros(n);
    let mut passive: Vec<usize> = Vec::new();
    let mut eligible: Vec<bool> = norms.iter().map(|&v| v > 0.0).collect();
    let max_iter = 30 * n.max(1) + 30;
    let mut iterations = 0;
    loop {
        let w = &h - &g * &x;
        let entering = (0..n)
            .filter(|&j| eligible[j] && !passive.contains(&j))
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(j) = entering.filter(|&j| w[j] > tol) else { break };
        passive.push(j);
        loop {
            iterations += 1;
            if iterations > max_iter {
                return Err(Error::Numerical(format!("NNLS did not converge in {max_iter} iterations")));
            }
            let z = solve_passive(&g, &h, &passive);
            if z.iter().all(|&v| v > 0.0) {
                for (i, &p) in passive.iter().enumerate() {
                    x[p] = z[i];
                }
                break;
            }
            // Step towards z until the first passive coefficient hits zero.
            let mut alpha = f64::INFINITY;
            for (i, &p) in passive.iter().enumerate() {
                if z[i] <= 0.0 {
                    let denom = x[p] - z[i];
                    if denom > 0.0 {
                        alpha = alpha.min(x[p] / denom);
                    }
                }
            }
            if !alpha.is_finite() {
                alpha = 0.0;
            }
            for (i, &p) in passive.iter().enumerate() {
                x[p] += alpha * (z[i] - x[p]);
            }
            let before = passive.len();
            passive.retain(|&p| x[p] > 1e-15);
            for p in 0..n {
                if !passive.contains(&p) {
                    x[p] = 0.0;
                }
            }
            if passive.is_empty() && before == 1 {
                // The entering column could not take a positive value.
                eligible[j] = false;
                break;
            }
        }
    }
    let out: Vec<f64> = (0..n).map(|j| if norms[j] > 0.0 { x[j] / norms[j] } else { 0.0 }).collect();
    let residual = (a * DVector::from_column_slice(&out) - b).norm();
    Ok(NnlsSolution {
        x: out,
        residual,
        zero_columns,
        iterations,
    })
}
