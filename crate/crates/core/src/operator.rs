//! Flux-form finite-difference discretization of `-∇·(μ ∇u)` with homogeneous
//! Dirichlet conditions on Γ.
//!
//! Each face between neighbouring nodes `p`, `q` carries the conductance
//! `c_pq = avg(μ_p, μ_q) / h²`. Faces between two interior nodes produce the
//! off-diagonal `-c_pq`; faces to Γ only add to the diagonal and are recorded
//! in [`BoundaryCoupling`] so inhomogeneous Dirichlet data can be moved to the
//! right-hand side.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{DomainMask, NodeKind, ScalarField};
use crate::weight::WeightField;

/// Rows above this count are multiplied in parallel.
const PAR_ROWS: usize = 1 << 14;

/// Rule combining two nodal weights into a face weight.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaceAverage {
    #[default]
    Harmonic,
    Arithmetic,
}

impl FaceAverage {
    pub fn combine(self, a: f64, b: f64) -> f64 {
        match self {
            FaceAverage::Harmonic => 2.0 * a * b / (a + b),
            FaceAverage::Arithmetic => 0.5 * (a + b),
        }
    }
}

/// Symmetric sparse matrix over the interior DOFs, stored as full CSR.
#[derive(Clone, Debug)]
pub struct SparseOperator {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    /// Σ of face conductances from each row to Γ.
    boundary_sum: Vec<f64>,
    mask: DomainMask,
}

/// Conductances from interior nodes to their Dirichlet neighbours.
#[derive(Clone, Debug)]
pub struct BoundaryCoupling {
    row_ptr: Vec<usize>,
    links: Vec<(usize, f64)>,
}

impl BoundaryCoupling {
    /// `(boundary node, conductance)` pairs of interior DOF `row`.
    pub fn links(&self, row: usize) -> &[(usize, f64)] {
        &self.links[self.row_ptr[row]..self.row_ptr[row + 1]]
    }

    /// Right-hand side `Σ_q c_pq g_q` for boundary data `g`.
    pub fn rhs(&self, g: &ScalarField) -> Vec<f64> {
        let g = g.values();
        (0..self.row_ptr.len() - 1)
            .map(|r| self.links(r).iter().map(|&(q, c)| c * g[q]).sum())
            .collect()
    }
}

/// Builds the operator and its boundary coupling from `weight` on `mask`.
pub fn assemble(
    weight: &WeightField,
    mask: &DomainMask,
    average: FaceAverage,
) -> Result<(SparseOperator, BoundaryCoupling)> {
    let mu = weight.mu();
    mu.same_shape(mask.width(), mask.height())?;
    let mu = mu.values();
    let inv_h2 = {
        let h = mask.spacing();
        1.0 / (h * h)
    };
    let n = mask.interior_count();
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut cols = Vec::with_capacity(5 * n);
    let mut vals = Vec::with_capacity(5 * n);
    let mut b_ptr = Vec::with_capacity(n + 1);
    let mut links = Vec::new();
    let mut boundary_sum = Vec::with_capacity(n);
    row_ptr.push(0);
    b_ptr.push(0);
    let mut row: Vec<(usize, f64)> = Vec::with_capacity(5);
    for (r, &p) in mask.interior_nodes().iter().enumerate() {
        if !(mu[p] > 0.0) {
            return Err(Error::InvalidInput(format!("weight {} at node {p}", mu[p])));
        }
        row.clear();
        let mut diag = 0.0;
        let mut to_gamma = 0.0;
        for q in mask.neighbors(p) {
            let c = average.combine(mu[p], mu[q]) * inv_h2;
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "face conductance {c} between nodes {p} and {q}"
                )));
            }
            diag += c;
            match mask.kind(q) {
                NodeKind::Interior => row.push((mask.dof(q).expect("interior node"), -c)),
                NodeKind::Boundary => {
                    links.push((q, c));
                    to_gamma += c;
                }
                NodeKind::Excluded => {
                    unreachable!("mask invariant: interior never touches excluded")
                }
            }
        }
        row.push((r, diag));
        row.sort_unstable_by_key(|e| e.0);
        for &(c, v) in &row {
            cols.push(c);
            vals.push(v);
        }
        row_ptr.push(cols.len());
        b_ptr.push(links.len());
        boundary_sum.push(to_gamma);
    }
    Ok((
        SparseOperator {
            n,
            row_ptr,
            cols,
            vals,
            boundary_sum,
            mask: mask.clone(),
        },
        BoundaryCoupling {
            row_ptr: b_ptr,
            links,
        },
    ))
}

impl SparseOperator {
    /// Number of interior DOFs.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn mask(&self) -> &DomainMask {
        &self.mask
    }

    /// Column indices and values of `row`, sorted by column.
    pub fn row(&self, row: usize) -> (&[usize], &[f64]) {
        let range = self.row_ptr[row]..self.row_ptr[row + 1];
        (&self.cols[range.clone()], &self.vals[range])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).map(|k| vals[k]).unwrap_or(0.0)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// Induced 1-norm (equal to the ∞-norm for a symmetric matrix).
    pub fn norm1(&self) -> f64 {
        (0..self.n)
            .map(|i| self.row(i).1.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// `y = A v`.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.n {
            return Err(Error::Dimension(format!(
                "vector of length {} for operator of size {}",
                v.len(),
                self.n
            )));
        }
        let mut y = vec![0.0; self.n];
        self.apply_into(v, &mut y);
        Ok(y)
    }

    /// `y = A v` without length checks beyond debug assertions.
    ///
    /// Rows are independent and each is reduced in column order, so the
    /// result does not depend on how many threads run it.
    pub fn apply_into(&self, v: &[f64], y: &mut [f64]) {
        debug_assert_eq!(v.len(), self.n);
        debug_assert_eq!(y.len(), self.n);
        if self.n >= PAR_ROWS && rayon::current_num_threads() > 1 {
            y.par_chunks_mut(1024).enumerate().for_each(|(chunk, out)| {
                let base = chunk * 1024;
                for (k, yi) in out.iter_mut().enumerate() {
                    *yi = self.row_dot(base + k, v);
                }
            });
        } else {
            for (i, yi) in y.iter_mut().enumerate() {
                *yi = self.row_dot(i, v);
            }
        }
    }

    /// Serial product, used for timing and as the reference for the parallel path.
    pub fn apply_serial_into(&self, v: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = self.row_dot(i, v);
        }
    }

    #[inline]
    fn row_dot(&self, i: usize, v: &[f64]) -> f64 {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[range.clone()]
            .iter()
            .zip(&self.vals[range])
            .map(|(&j, &a)| a * v[j])
            .sum()
    }

    /// `vᵀ A v` summed face by face, `Σ c_pq (v_p - v_q)² + Σ c_pΓ v_p²`.
    ///
    /// Every term is non-negative, so the result keeps full relative accuracy
    /// even when `vᵀ A v` is many orders of magnitude below `‖A‖ ‖v‖²`.
    pub fn energy(&self, v: &[f64]) -> f64 {
        let mut e = 0.0;
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &a) in cols.iter().zip(vals) {
                if j < i {
                    let d = v[i] - v[j];
                    e -= a * d * d;
                }
            }
            e += self.boundary_sum[i] * v[i] * v[i];
        }
        e
    }

    /// Dense row-major copy. Test and oracle use only.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n * self.n];
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                d[i * self.n + j] = v;
            }
        }
        d
    }

    /// Writes the lower triangle in Matrix Market symmetric coordinate format.
    pub fn write_matrix_market<W: Write>(&self, mut out: W) -> Result<()> {
        let lower: usize = (0..self.n)
            .map(|i| self.row(i).0.iter().filter(|&&j| j <= i).count())
            .sum();
        writeln!(out, "%%MatrixMarket matrix coordinate real symmetric")?;
        writeln!(out, "{} {} {}", self.n, self.n, lower)?;
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                if j <= i {
                    writeln!(out, "{} {} {:.17e}", i + 1, j + 1, v)?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::DomainMask;
    use crate::weight::{image_weight, WeightKind, WeightLaw};
    use proptest::prelude::*;

    fn weight_from(values: Vec<f64>, w: usize, h: usize) -> WeightField {
        WeightField::from_values(
            ScalarField::new(w, h, values).unwrap(),
            WeightLaw::lorentzian(1.0).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn constant_1d_is_the_scaled_laplacian() {
        let mask = DomainMask::full(5, 1).unwrap();
        let img = ScalarField::filled(5, 1, 0.4).unwrap();
        let (w, g) = image_weight(&img, &mask, WeightKind::Lorentzian).unwrap();
        assert!(g.degenerate);
        let (op, coupling) = assemble(&w, &mask, FaceAverage::Harmonic).unwrap();
        assert_eq!(
            op.to_dense(),
            vec![32.0, -16.0, 0.0, -16.0, 32.0, -16.0, 0.0, -16.0, 32.0]
        );
        assert_eq!(coupling.links(0), &[(0, 16.0)]);
        assert!(coupling.links(1).is_empty());
        assert_eq!(coupling.links(2), &[(4, 16.0)]);
        assert_eq!(op.apply(&[1.0, 1.0, 1.0]).unwrap(), vec![16.0, 0.0, 16.0]);
        assert_eq!(op.apply(&[0.0; 3]).unwrap(), vec![0.0; 3]);
        assert!(op.apply(&[1.0; 2]).is_err());
    }

    #[test]
    fn harmonic_face_collapses_across_weak_node() {
        let h = 0.25;
        let mask = DomainMask::full(5, 1).unwrap();
        let w = weight_from(vec![1.0, 1.0, 1.0, 1e-6, 1e-6], 5, 1);
        let (op, _) = assemble(&w, &mask, FaceAverage::Harmonic).unwrap();
        let junction = -op.get(1, 2);
        let expected = 2.0 * 1e-6 / (1.0 + 1e-6) / (h * h);
        assert!((junction - expected).abs() <= 1e-18);
        assert!((junction / (2e-6 / (h * h)) - 1.0).abs() < 2e-6);
        let (arith, _) = assemble(&w, &mask, FaceAverage::Arithmetic).unwrap();
        assert!((-arith.get(1, 2) - 0.5 * (1.0 + 1e-6) * 16.0).abs() < 1e-12);
    }

    #[test]
    fn matrix_market_dump() {
        let mask = DomainMask::full(5, 1).unwrap();
        let w = weight_from(vec![1.0; 5], 5, 1);
        let (op, _) = assemble(&w, &mask, FaceAverage::Harmonic).unwrap();
        let mut buf = Vec::new();
        op.write_matrix_market(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "%%MatrixMarket matrix coordinate real symmetric");
        assert_eq!(lines[1], "3 3 5");
        assert_eq!(lines[2], "1 1 3.20000000000000000e1");
        assert_eq!(lines[3], "2 1 -1.60000000000000000e1");
        assert_eq!(lines.len(), 7);
    }

    #[test]
    fn roi_operator_only_couples_to_region_boundary() {
        let fg: Vec<bool> = (0..64).map(|i| (i % 8) >= 2).collect();
        let mask = DomainMask::from_foreground(8, 8, &fg).unwrap();
        let w = weight_from(vec![1.0; 64], 8, 8);
        let (op, coupling) = assemble(&w, &mask, FaceAverage::Harmonic).unwrap();
        assert_eq!(op.n(), 4 * 6);
        for r in 0..op.n() {
            for &(q, _) in coupling.links(r) {
                assert_eq!(mask.kind(q), NodeKind::Boundary);
            }
        }
    }

    #[test]
    fn rejects_mismatched_weight() {
        let mask = DomainMask::full(6, 1).unwrap();
        let w = weight_from(vec![1.0; 5], 5, 1);
        assert!(assemble(&w, &mask, FaceAverage::Harmonic).is_err());
    }

    fn random_operator(values: &[f64], w: usize, h: usize) -> SparseOperator {
        let mu: Vec<f64> = values.iter().map(|v| 10f64.powf(*v)).collect();
        let mask = DomainMask::full(w, h).unwrap();
        assemble(&weight_from(mu, w, h), &mask, FaceAverage::Harmonic)
            .unwrap()
            .0
    }

    proptest! {
        #[test]
        fn assembled_operator_is_a_symmetric_m_matrix(exps in proptest::collection::vec(-8.0f64..3.0, 42)) {
            let op = random_operator(&exps, 7, 6);
            for i in 0..op.n() {
                let (cols, vals) = op.row(i);
                let mut sum = 0.0;
                for (&j, &v) in cols.iter().zip(vals) {
                    prop_assert_eq!(v, op.get(j, i));
                    if i == j { prop_assert!(v > 0.0) } else { prop_assert!(v <= 0.0) }
                    sum += v;
                }
                prop_assert!(sum >= -1e-12 * op.get(i, i));
            }
        }

        #[test]
        fn quadratic_form_is_positive(exps in proptest::collection::vec(-6.0f64..2.0, 36), v in proptest::collection::vec(-1.0f64..1.0, 16)) {
            prop_assume!(v.iter().any(|x| x.abs() > 1e-3));
            let op = random_operator(&exps, 6, 6);
            let av = op.apply(&v).unwrap();
            let q: f64 = av.iter().zip(&v).map(|(a, b)| a * b).sum();
            prop_assert!(q > 0.0);
        }
    }

    #[test]
    fn parallel_apply_matches_serial_bitwise() {
        let (w, h) = (200, 120);
        let mu: Vec<f64> = (0..w * h).map(|i| 1.0 + ((i * 7919) % 97) as f64).collect();
        let mask = DomainMask::full(w, h).unwrap();
        let (op, _) = assemble(&weight_from(mu, w, h), &mask, FaceAverage::Harmonic).unwrap();
        let v: Vec<f64> = (0..op.n()).map(|i| ((i * 31) % 17) as f64 - 8.0).collect();
        let mut a = vec![0.0; op.n()];
        let mut b = vec![0.0; op.n()];
        op.apply_into(&v, &mut a);
        op.apply_serial_into(&v, &mut b);
        assert_eq!(a, b);
    }
}
