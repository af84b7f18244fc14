//! 1-D helpers: eigenvectors of a tridiagonal operator with high componentwise
//! accuracy, and sign-change counting.
//!
//! A localized eigenvector of a 1-D problem has exponentially small tails, and
//! the Sturm oscillation count lives partly in those tails. A Krylov solver
//! only resolves them to absolute precision, so their signs are noise. The
//! twisted factorization below builds the vector from ratios of pivots of
//! `T - λI`, which keeps every component's sign and leading digits.

use crate::error::{Error, Result};
use crate::operator::SparseOperator;

/// Number of sign changes between consecutive non-zero entries.
pub fn sign_changes(values: &[f64]) -> usize {
    let mut last = 0.0f64;
    let mut count = 0;
    for &v in values {
        if v == 0.0 {
            continue;
        }
        if last != 0.0 && (v > 0.0) != (last > 0.0) {
            count += 1;
        }
        last = v;
    }
    count
}

/// Diagonal and sub-diagonal of a tridiagonal operator.
fn tridiagonal(op: &SparseOperator) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = op.n();
    let mut diag = Vec::with_capacity(n);
    let mut off = vec![0.0; n.saturating_sub(1)];
    for i in 0..n {
        let (cols, vals) = op.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            if j + 1 < i || j > i + 1 {
                return Err(Error::InvalidInput(format!(
                    "operator is not tridiagonal: entry ({i}, {j})"
                )));
            }
            if j + 1 == i {
                off[j] = v;
            }
        }
        diag.push(op.get(i, i));
    }
    if off.contains(&0.0) {
        return Err(Error::InvalidInput(
            "tridiagonal operator decouples (zero off-diagonal)".into(),
        ));
    }
    Ok((diag, off))
}

/// Eigenvector of the tridiagonal `op` for the eigenvalue approximation
/// `lambda`, unit Euclidean norm, largest entry positive.
pub fn tridiagonal_eigenvector(op: &SparseOperator, lambda: f64) -> Result<Vec<f64>> {
    let (a, b) = tridiagonal(op)?;
    let n = a.len();
    if n == 1 {
        return Ok(vec![1.0]);
    }
    let floor = f64::MIN_POSITIVE.sqrt() * a.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let guard = |d: f64| if d == 0.0 { floor } else { d };
    let mut dp = vec![0.0; n];
    dp[0] = guard(a[0] - lambda);
    for i in 1..n {
        dp[i] = guard(a[i] - lambda - b[i - 1] * b[i - 1] / dp[i - 1]);
    }
    let mut dm = vec![0.0; n];
    dm[n - 1] = guard(a[n - 1] - lambda);
    for i in (0..n - 1).rev() {
        dm[i] = guard(a[i] - lambda - b[i] * b[i] / dm[i + 1]);
    }
    let twist = (0..n)
        .min_by(|&i, &j| {
            let gi = (dp[i] + dm[i] - (a[i] - lambda)).abs();
            let gj = (dp[j] + dm[j] - (a[j] - lambda)).abs();
            gi.total_cmp(&gj)
        })
        .expect("n > 0");
    let mut z = vec![0.0; n];
    z[twist] = 1.0;
    for i in (0..twist).rev() {
        z[i] = -(b[i] / dp[i]) * z[i + 1];
    }
    for i in twist..n - 1 {
        z[i + 1] = -(b[i] / dm[i + 1]) * z[i];
    }
    let scale = z.iter().map(|x| x * x).sum::<f64>().sqrt();
    let (imax, _) = z.iter().enumerate().fold((0, 0.0f64), |(bi, bv), (i, &v)| {
        if v.abs() > bv {
            (i, v.abs())
        } else {
            (bi, bv)
        }
    });
    let sign = z[imax].signum();
    Ok(z.iter().map(|x| sign * x / scale).collect())
}
