//! Thick-restart Lanczos for the largest eigenpairs of a symmetric operator.
//!
//! The basis is kept fully orthogonal (two Gram–Schmidt passes per step), so
//! the projected matrix is formed column by column as in Arnoldi and a restart
//! reduces to: rotate the basis onto the best Ritz vectors, keep the residual
//! direction, and put the Ritz values on the diagonal. Vectors in `locked`
//! are projected out of every new direction, which deflates them.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::rng::CounterRng;

#[derive(Clone, Copy, Debug)]
pub(crate) struct LanczosOptions {
    pub want: usize,
    pub max_basis: usize,
    /// Converged when `‖B y - θ y‖ ≤ tol · θ`.
    pub tol: f64,
    pub max_restarts: usize,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub(crate) struct RitzPairs {
    /// Ritz vectors, largest Ritz value first.
    pub vectors: Vec<Vec<f64>>,
    pub restarts: usize,
    pub applications: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Projects `w` off `locked` and `basis` twice; returns the coefficients on `basis`.
fn orthogonalize(w: &mut [f64], locked: &[Vec<f64>], basis: &[Vec<f64>]) -> Vec<f64> {
    let mut coef = vec![0.0; basis.len()];
    for _ in 0..2 {
        for q in locked {
            let c = dot(q, w);
            axpy(-c, q, w);
        }
        for (k, q) in basis.iter().enumerate() {
            let c = dot(q, w);
            axpy(-c, q, w);
            coef[k] += c;
        }
    }
    coef
}

/// A unit vector orthogonal to `locked` and `basis`, drawn from the counter stream.
fn fresh_direction(
    n: usize,
    rng: &CounterRng,
    draw: &mut u64,
    locked: &[Vec<f64>],
    basis: &[Vec<f64>],
) -> Option<Vec<f64>> {
    for _ in 0..8 {
        let base = *draw * n as u64;
        *draw += 1;
        let mut v: Vec<f64> = (0..n as u64)
            .map(|i| rng.uniform_at(base + i) - 0.5)
            .collect();
        let before = norm(&v);
        orthogonalize(&mut v, locked, basis);
        let after = norm(&v);
        if after > 1e-8 * before {
            v.iter_mut().for_each(|x| *x /= after);
            return Some(v);
        }
    }
    None
}

pub(crate) fn largest_eigenpairs(
    n: usize,
    mut apply: impl FnMut(&[f64], &mut [f64]),
    locked: &[Vec<f64>],
    opts: LanczosOptions,
) -> Result<RitzPairs> {
    let avail = n.saturating_sub(locked.len());
    let want = opts.want.min(avail);
    if want == 0 {
        return Ok(RitzPairs {
            vectors: vec![],
            restarts: 0,
            applications: 0,
        });
    }
    let m = opts
        .max_basis
        .clamp(want + 1, avail.max(want + 1))
        .min(avail);
    let rng = CounterRng::new(opts.seed);
    let mut draw = 0u64;
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
    basis.push(
        fresh_direction(n, &rng, &mut draw, locked, &[])
            .ok_or_else(|| Error::InvalidInput("no direction left to search".into()))?,
    );
    let mut h = DMatrix::<f64>::zeros(m, m);
    let mut start = 0;
    let mut restarts = 0;
    let mut applications = 0;
    let mut w = vec![0.0; n];
    loop {
        // extend to m columns; `beta` couples the last column to basis[m]
        let mut beta = 0.0;
        for j in start..m {
            apply(&basis[j], &mut w);
            applications += 1;
            let scale = norm(&w);
            let coef = orthogonalize(&mut w, locked, &basis);
            for (i, &c) in coef.iter().enumerate().take(j + 1) {
                h[(i, j)] = c;
                h[(j, i)] = c;
            }
            beta = norm(&w);
            if j + 1 == avail {
                // the whole admissible space is spanned
                beta = 0.0;
                break;
            }
            let next = if beta > 1e-12 * scale.max(f64::MIN_POSITIVE) {
                w.iter().map(|x| x / beta).collect()
            } else {
                beta = 0.0;
                fresh_direction(n, &rng, &mut draw, locked, &basis)
                    .ok_or_else(|| Error::InvalidInput("Krylov space exhausted".into()))?
            };
            if j + 1 < m {
                h[(j + 1, j)] = beta;
                h[(j, j + 1)] = beta;
            }
            basis.push(next);
        }
        let size = m.min(basis.len());
        let proj = h.view((0, 0), (size, size)).into_owned();
        let eig = SymmetricEigen::new(proj);
        let mut order: Vec<usize> = (0..size).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let estimates: Vec<f64> = order
            .iter()
            .map(|&k| (beta * eig.eigenvectors[(size - 1, k)]).abs())
            .collect();
        let converged = (0..want).all(|i| {
            let theta = eig.eigenvalues[order[i]];
            theta > 0.0 && estimates[i] <= opts.tol * theta
        });
        let exhausted = size == avail;
        let keep = if converged || exhausted {
            want
        } else {
            (want + (size - want) / 2).clamp(want, size - 1)
        };
        let ritz: Vec<Vec<f64>> = order[..keep]
            .iter()
            .map(|&k| {
                let mut y = vec![0.0; n];
                for (row, q) in basis.iter().take(size).enumerate() {
                    axpy(eig.eigenvectors[(row, k)], q, &mut y);
                }
                y
            })
            .collect();
        if converged || exhausted {
            return Ok(RitzPairs {
                vectors: ritz,
                restarts,
                applications,
            });
        }
        if restarts == opts.max_restarts {
            let rel: Vec<f64> = (0..want)
                .map(|i| estimates[i] / eig.eigenvalues[order[i]].abs().max(f64::MIN_POSITIVE))
                .collect();
            return Err(Error::NonConvergence {
                solver: "thick-restart Lanczos",
                iterations: applications,
                residuals: rel,
            });
        }
        restarts += 1;
        let residual_dir = basis.pop().expect("basis holds m + 1 vectors");
        basis = ritz;
        basis.push(residual_dir);
        h.fill(0.0);
        for (i, &k) in order[..keep].iter().enumerate() {
            h[(i, i)] = eig.eigenvalues[k];
            let c = beta * eig.eigenvectors[(size - 1, k)];
            h[(i, keep)] = c;
            h[(keep, i)] = c;
        }
        start = keep;
    }
}
