//! Variable-band (profile) `L D Lᵀ` factorization of `A - σI`.
//!
//! Row-major interior numbering keeps the profile of a 2-D grid operator at
//! one grid row, so the factor costs `O(n·w²)` flops and `O(n·w)` memory for a
//! grid of width `w`. No pivoting is done: for σ = 0 the operator is an SPD
//! M-matrix and the pivots stay positive; for σ > 0 the number of negative
//! pivots is the number of eigenvalues below σ (Sylvester's law of inertia).

use crate::error::{Error, Result};
use crate::operator::SparseOperator;

#[derive(Clone, Debug)]
pub struct ProfileLdl {
    n: usize,
    first: Vec<usize>,
    offset: Vec<usize>,
    /// Row `i` holds `L[i, first[i]..i]` followed by `D[i]`.
    data: Vec<f64>,
}

impl ProfileLdl {
    /// Factors `A - shift·I`. Fails only on an exactly zero pivot.
    pub fn factor(op: &SparseOperator, shift: f64) -> Result<Self> {
        let n = op.n();
        let mut first = Vec::with_capacity(n);
        let mut offset = Vec::with_capacity(n + 1);
        offset.push(0);
        for i in 0..n {
            let f = op.row(i).0.first().copied().unwrap_or(i).min(i);
            first.push(f);
            offset.push(offset[i] + (i - f + 1));
        }
        let mut data = vec![0.0; offset[n]];
        for i in 0..n {
            let f = first[i];
            let (done, rest) = data.split_at_mut(offset[i]);
            let row = &mut rest[..i - f + 1];
            let (cols, vals) = op.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                if j <= i {
                    row[j - f] = v;
                }
            }
            row[i - f] -= shift;
            // row[j - f] becomes u_j = L_ij D_j for j < i
            for j in f..i {
                let fj = first[j];
                let k0 = f.max(fj);
                let lj = &done[offset[j]..offset[j + 1]];
                let dot: f64 = row[k0 - f..j - f]
                    .iter()
                    .zip(&lj[k0 - fj..j - fj])
                    .map(|(a, b)| a * b)
                    .sum();
                row[j - f] -= dot;
            }
            let mut d = row[i - f];
            for j in f..i {
                let dj = done[offset[j + 1] - 1];
                let u = row[j - f];
                let l = u / dj;
                d -= u * l;
                row[j - f] = l;
            }
            if d == 0.0 || !d.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "zero or non-finite pivot {d} in row {i} of A - {shift}·I"
                )));
            }
            row[i - f] = d;
        }
        Ok(Self {
            n,
            first,
            offset,
            data,
        })
    }

    /// Factors `A` and checks that it is positive definite.
    pub fn factor_spd(op: &SparseOperator) -> Result<Self> {
        let f = Self::factor(op, 0.0)?;
        if let Some(i) = (0..f.n).find(|&i| f.pivot(i) <= 0.0) {
            return Err(Error::InvalidInput(format!(
                "operator is not positive definite (pivot {} in row {i})",
                f.pivot(i)
            )));
        }
        Ok(f)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn pivot(&self, i: usize) -> f64 {
        self.data[self.offset[i + 1] - 1]
    }

    /// Number of negative pivots, i.e. eigenvalues of `A` below the shift.
    pub fn negative_pivots(&self) -> usize {
        (0..self.n).filter(|&i| self.pivot(i) < 0.0).count()
    }

    /// Overwrites `b` with `(A - σI)⁻¹ b`.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        debug_assert_eq!(b.len(), self.n);
        for i in 0..self.n {
            let f = self.first[i];
            let l = &self.data[self.offset[i]..self.offset[i + 1] - 1];
            let dot: f64 = l.iter().zip(&b[f..i]).map(|(a, x)| a * x).sum();
            b[i] -= dot;
        }
        for (i, bi) in b.iter_mut().enumerate() {
            *bi /= self.pivot(i);
        }
        for i in (0..self.n).rev() {
            let f = self.first[i];
            let xi = b[i];
            let l = &self.data[self.offset[i]..self.offset[i + 1] - 1];
            for (bk, a) in b[f..i].iter_mut().zip(l) {
                *bk -= a * xi;
            }
        }
    }
}
