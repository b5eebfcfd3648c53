//! Lawson–Hanson active-set nonnegative least squares.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SstaError};

/// Minimises ‖Ax - y‖₂ subject to x ≥ 0.
pub fn nnls(a: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let (rows, cols) = a.shape();
    if rows != y.len() {
        return Err(SstaError::domain(format!(
            "nnls: matrix has {rows} rows but rhs has {}",
            y.len()
        )));
    }
    let scale = a
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    let tol = 1e-12 * scale * scale * rows.max(1) as f64 * y.amax().max(1.0);
    let mut x = DVector::zeros(cols);
    let mut passive = vec![false; cols];
    let max_outer = 3 * cols + 10;

    for _ in 0..max_outer {
        let w = a.transpose() * (y - a * &x);
        let candidate = (0..cols)
            .filter(|&j| !passive[j] && w[j] > tol)
            .max_by(|&i, &j| w[i].total_cmp(&w[j]).then(j.cmp(&i)));
        let Some(t) = candidate else {
            return Ok(x);
        };
        passive[t] = true;
        loop {
            let z = solve_passive(a, y, &passive)?;
            let infeasible: Vec<usize> = (0..cols).filter(|&j| passive[j] && z[j] <= 0.0).collect();
            if infeasible.is_empty() {
                x = z;
                break;
            }
            let alpha = infeasible
                .iter()
                .map(|&j| x[j] / (x[j] - z[j]))
                .fold(f64::INFINITY, f64::min);
            x += alpha * (&z - &x);
            for j in 0..cols {
                if passive[j] && x[j] <= tol {
                    x[j] = 0.0;
                    passive[j] = false;
                }
            }
        }
    }
    Err(SstaError::numerical(format!(
        "nnls did not converge within {max_outer} outer iterations"
    )))
}

fn solve_passive(a: &DMatrix<f64>, y: &DVector<f64>, passive: &[bool]) -> Result<DVector<f64>> {
    let idx: Vec<usize> = (0..passive.len()).filter(|&j| passive[j]).collect();
    let sub = a.select_columns(&idx);
    let qr = sub.qr();
    let qty = qr.q().transpose() * y;
    let z = qr
        .r()
        .solve_upper_triangular(&qty)
        .ok_or_else(|| SstaError::numerical("nnls: rank-deficient passive set"))?;
    let mut full = DVector::zeros(passive.len());
    for (k, &j) in idx.iter().enumerate() {
        full[j] = z[k];
    }
    Ok(full)
}
