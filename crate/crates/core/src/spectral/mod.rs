//! Low eigenpairs of the weighted operator, the prolongation `I₀` of the
//! boundary data, and the eigen-expansion `I = I₀ + Σ βₘ φₘ`.
//!
//! The smallest eigenvalues are found by shift-invert: thick-restart Lanczos
//! runs on `A⁻¹`, applied through a profile `L D Lᵀ` factor. Single-vector
//! Krylov methods can miss copies of repeated eigenvalues, so after each run
//! the number of eigenvalues below the largest accepted one is counted from
//! the inertia of `A - σI`; any that were missed are searched for in the
//! orthogonal complement of the vectors already found.

mod cg;
mod dense;
mod factor;
mod lanczos;
mod sturm;

pub use cg::{pcg, CgOutcome, Jacobi, Preconditioner};
pub use dense::{dense_eigs_oracle, symmetric_eigen, DenseEigen, ORACLE_LIMIT};
pub use factor::ProfileLdl;
pub use sturm::{sign_changes, tridiagonal_eigenvector};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{cell_volume, inner_product, DomainMask, NodeKind, ScalarField};
use crate::operator::{BoundaryCoupling, SparseOperator};
use crate::weight::{Gamma, WeightLaw};
use lanczos::LanczosOptions;

/// Default eigen-residual tolerance.
pub const DEFAULT_EIG_TOL: f64 = 1e-8;
/// Default relative residual for linear solves.
pub const DEFAULT_SOLVE_TOL: f64 = 1e-10;
/// Relative eigenvalue separation below which pairs count as one cluster.
pub const CLUSTER_TOL: f64 = 1e-6;

const MAX_DEFLATION_ROUNDS: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct EigenOptions {
    /// Bound on `‖Aφ - λφ‖ / ‖A‖₁` for every returned pair.
    pub tol: f64,
    /// Lanczos basis size; `None` picks `max(2k + 20, k + 32)`.
    pub max_basis: Option<usize>,
    pub max_restarts: usize,
    pub seed: u64,
    /// Confirm with an inertia count that no eigenvalue was skipped.
    pub verify_count: bool,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_EIG_TOL,
            max_basis: None,
            max_restarts: 400,
            seed: 0x5eed,
            verify_count: true,
        }
    }
}

impl EigenOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }
}

/// How a basis was obtained and what it was built from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BasisMetadata {
    pub method: String,
    pub tol: f64,
    pub restarts: usize,
    pub solves: usize,
    pub deflation_rounds: usize,
    pub gamma: Option<Gamma>,
    pub weight_law: Option<WeightLaw>,
}

/// Ascending eigenvalues with mesh-orthonormal eigenfunctions on the full grid.
#[derive(Clone, Debug)]
pub struct EigenBasis {
    eigenvalues: Vec<f64>,
    eigenfields: Vec<ScalarField>,
    residuals: Vec<f64>,
    mask: DomainMask,
    meta: BasisMetadata,
}

impl EigenBasis {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenfields(&self) -> &[ScalarField] {
        &self.eigenfields
    }

    /// `‖Aφ - λφ‖ / ‖A‖₁` per pair.
    pub fn residuals(&self) -> &[f64] {
        &self.residuals
    }

    pub fn mask(&self) -> &DomainMask {
        &self.mask
    }

    pub fn metadata(&self) -> &BasisMetadata {
        &self.meta
    }

    pub fn set_weight_info(&mut self, gamma: Gamma, law: WeightLaw) {
        self.meta.gamma = Some(gamma);
        self.meta.weight_law = Some(law);
    }

    /// `⟨φᵢ, φⱼ⟩` for all pairs.
    pub fn gram(&self) -> Result<Vec<Vec<f64>>> {
        self.eigenfields
            .iter()
            .map(|a| {
                self.eigenfields
                    .iter()
                    .map(|b| inner_product(a, b, &self.mask))
                    .collect()
            })
            .collect()
    }

    /// `max |⟨φᵢ, φⱼ⟩ - δᵢⱼ|`.
    pub fn orthonormality_error(&self) -> Result<f64> {
        let g = self.gram()?;
        let mut worst = 0.0f64;
        for (i, row) in g.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((v - target).abs());
            }
        }
        Ok(worst)
    }

    /// First `count` pairs of a dense decomposition of `op`, normalized like
    /// the iterative path.
    pub fn from_dense(op: &SparseOperator, dense: &DenseEigen, count: usize) -> Result<Self> {
        if count > dense.values.len() {
            return Err(Error::InvalidInput(format!(
                "{count} pairs requested from a spectrum of {}",
                dense.values.len()
            )));
        }
        let pairs = dense.values[..count]
            .iter()
            .zip(&dense.vectors[..count])
            .map(|(&l, v)| (l, v.clone()))
            .collect();
        let meta = BasisMetadata {
            method: "dense tridiagonal QL".into(),
            tol: 0.0,
            ..Default::default()
        };
        finish_basis(op, pairs, meta)
    }
}

/// Normalizes, sign-fixes and scatters Euclidean eigenvectors.
fn finish_basis(
    op: &SparseOperator,
    pairs: Vec<(f64, Vec<f64>)>,
    meta: BasisMetadata,
) -> Result<EigenBasis> {
    let mask = op.mask().clone();
    let norm_a = op.norm1();
    let mass = cell_volume(&mask).sqrt();
    let mut eigenvalues = Vec::with_capacity(pairs.len());
    let mut eigenfields = Vec::with_capacity(pairs.len());
    let mut residuals = Vec::with_capacity(pairs.len());
    let mut av = vec![0.0; op.n()];
    for (lambda, mut v) in pairs {
        let len = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let (imax, _) = v.iter().enumerate().fold((0, 0.0f64), |(bi, bv), (i, &x)| {
            if x.abs() > bv {
                (i, x.abs())
            } else {
                (bi, bv)
            }
        });
        let scale = v[imax].signum() / len;
        v.iter_mut().for_each(|x| *x *= scale);
        op.apply_into(&v, &mut av);
        let res = av
            .iter()
            .zip(&v)
            .map(|(a, x)| (a - lambda * x).powi(2))
            .sum::<f64>()
            .sqrt()
            / norm_a;
        v.iter_mut().for_each(|x| *x /= mass);
        eigenvalues.push(lambda);
        eigenfields.push(mask.scatter(&v)?);
        residuals.push(res);
    }
    Ok(EigenBasis {
        eigenvalues,
        eigenfields,
        residuals,
        mask,
        meta,
    })
}

fn default_basis(k: usize) -> usize {
    (2 * k + 20).max(k + 32)
}

/// The `k` smallest eigenpairs of `op`.
pub fn smallest_eigenpairs(
    op: &SparseOperator,
    k: usize,
    opts: &EigenOptions,
) -> Result<EigenBasis> {
    let factor = ProfileLdl::factor_spd(op)?;
    smallest_eigenpairs_with(op, &factor, k, opts)
}

/// As [`smallest_eigenpairs`], reusing a factorization of `op`.
pub fn smallest_eigenpairs_with(
    op: &SparseOperator,
    factor: &ProfileLdl,
    k: usize,
    opts: &EigenOptions,
) -> Result<EigenBasis> {
    let n = op.n();
    if k == 0 || k > n {
        return Err(Error::InvalidInput(format!(
            "k = {k} must lie in 1..={n} (interior DOFs)"
        )));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidInput(format!(
            "tol must be > 0, got {}",
            opts.tol
        )));
    }
    if factor.n() != n {
        return Err(Error::Dimension(format!(
            "factor of size {} for operator of size {n}",
            factor.n()
        )));
    }
    let mut pairs: Vec<(f64, Vec<f64>)> = Vec::with_capacity(k);
    let mut meta = BasisMetadata {
        method: "shift-invert thick-restart Lanczos".into(),
        tol: opts.tol,
        ..Default::default()
    };
    let mut need = k;
    for round in 0..MAX_DEFLATION_ROUNDS {
        let locked: Vec<Vec<f64>> = pairs.iter().map(|p| p.1.clone()).collect();
        let ritz = lanczos::largest_eigenpairs(
            n,
            |x, y| {
                y.copy_from_slice(x);
                factor.solve_in_place(y);
            },
            &locked,
            LanczosOptions {
                want: need,
                max_basis: opts.max_basis.unwrap_or_else(|| default_basis(need)),
                tol: 0.1 * opts.tol,
                max_restarts: opts.max_restarts,
                seed: opts.seed.wrapping_add(round as u64),
            },
        )?;
        meta.restarts += ritz.restarts;
        meta.solves += ritz.applications;
        for v in ritz.vectors {
            // face-wise Rayleigh quotient keeps relative accuracy for tiny λ
            let lambda = op.energy(&v) / v.iter().map(|x| x * x).sum::<f64>();
            pairs.push((lambda, v));
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        if !opts.verify_count || pairs.len() >= n {
            break;
        }
        let top = pairs[k.min(pairs.len()) - 1].0;
        let mut sigma = top * (1.0 + CLUSTER_TOL);
        let below = loop {
            match ProfileLdl::factor(op, sigma) {
                Ok(f) => break f.negative_pivots(),
                Err(Error::InvalidInput(_)) => sigma *= 1.0 + 1e-9,
                Err(e) => return Err(e),
            }
        };
        let found = pairs.iter().filter(|p| p.0 < sigma).count();
        if below <= found {
            break;
        }
        if round + 1 == MAX_DEFLATION_ROUNDS {
            return Err(Error::NonConvergence {
                solver: "eigenvalue count verification",
                iterations: round + 1,
                residuals: vec![(below - found) as f64],
            });
        }
        meta.deflation_rounds += 1;
        need = below - found;
    }
    pairs.truncate(k);
    let basis = finish_basis(op, pairs, meta)?;
    if basis.residuals.iter().any(|&r| !(r <= opts.tol)) {
        return Err(Error::NonConvergence {
            solver: "shift-invert Lanczos",
            iterations: basis.meta.solves,
            residuals: basis.residuals.clone(),
        });
    }
    Ok(basis)
}

/// Solves `A u = C g` for the interior values of `I₀` given Dirichlet data `g`.
///
/// Returns `u` on the interior, `g` on Γ and zero on excluded nodes. With
/// `zero_boundary` the data is replaced by zero, so `I₀ ≡ 0`.
pub fn solve_prolongation(
    op: &SparseOperator,
    coupling: &BoundaryCoupling,
    boundary_values: &ScalarField,
    zero_boundary: bool,
) -> Result<ScalarField> {
    let factor = ProfileLdl::factor_spd(op)?;
    solve_prolongation_with(op, coupling, boundary_values, zero_boundary, &factor)
}

pub fn solve_prolongation_with(
    op: &SparseOperator,
    coupling: &BoundaryCoupling,
    boundary_values: &ScalarField,
    zero_boundary: bool,
    precond: &dyn Preconditioner,
) -> Result<ScalarField> {
    let mask = op.mask();
    boundary_values.same_shape(mask.width(), mask.height())?;
    if zero_boundary {
        return ScalarField::zeros(mask.width(), mask.height());
    }
    let rhs = coupling.rhs(boundary_values);
    let mut u = vec![0.0; op.n()];
    pcg(op, &rhs, &mut u, precond, DEFAULT_SOLVE_TOL, 1000)?;
    let mut values = vec![0.0; mask.len()];
    for (node, kind) in mask.labels().iter().enumerate() {
        values[node] = match kind {
            NodeKind::Interior => u[mask.dof(node).expect("interior")],
            NodeKind::Boundary => boundary_values.values()[node],
            NodeKind::Excluded => 0.0,
        };
    }
    ScalarField::new(mask.width(), mask.height(), values)
}

/// `I₀` and the coefficients `βₘ` of `I - I₀` in an eigenbasis.
#[derive(Clone, Debug, PartialEq)]
pub struct Expansion {
    pub i0: ScalarField,
    pub coefficients: Vec<f64>,
}

/// `βₘ = ⟨I - I₀, φₘ⟩`.
pub fn project(image: &ScalarField, basis: &EigenBasis, i0: &ScalarField) -> Result<Expansion> {
    let mask = basis.mask();
    image.same_shape(mask.width(), mask.height())?;
    i0.same_shape(mask.width(), mask.height())?;
    let diff = image.with_values(
        image
            .values()
            .iter()
            .zip(i0.values())
            .map(|(a, b)| a - b)
            .collect(),
    )?;
    let coefficients = basis
        .eigenfields()
        .iter()
        .map(|phi| inner_product(&diff, phi, mask))
        .collect::<Result<_>>()?;
    Ok(Expansion {
        i0: i0.clone(),
        coefficients,
    })
}

/// `Ĩ = I₀ + Σ_{m ≤ K} βₘ φₘ`. No clamping.
pub fn reconstruct(expansion: &Expansion, basis: &EigenBasis, terms: usize) -> Result<ScalarField> {
    if terms > expansion.coefficients.len() || terms > basis.len() {
        return Err(Error::InvalidInput(format!(
            "K = {terms} exceeds the {} available coefficients",
            expansion.coefficients.len().min(basis.len())
        )));
    }
    let mut values = expansion.i0.values().to_vec();
    for (beta, phi) in expansion.coefficients[..terms]
        .iter()
        .zip(basis.eigenfields())
    {
        for (v, p) in values.iter_mut().zip(phi.values()) {
            *v += beta * p;
        }
    }
    expansion.i0.with_values(values)
}

/// Per-function fraction of interior entries zeroed by [`sparsify`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsityReport {
    pub tau: f64,
    pub zeroed_fraction: Vec<f64>,
}

/// Zeroes entries with `|φ| < τ · max|φ|` in every eigenfunction.
pub fn sparsify(basis: &EigenBasis, tau: f64) -> Result<(EigenBasis, SparsityReport)> {
    if !(0.0..1.0).contains(&tau) {
        return Err(Error::InvalidInput(format!(
            "tau must lie in [0, 1), got {tau}"
        )));
    }
    let interior = basis.mask.interior_nodes();
    let mut out = basis.clone();
    let mut fractions = Vec::with_capacity(basis.len());
    for field in out.eigenfields.iter_mut() {
        let cut = tau * field.max_abs();
        let mut zeroed = 0usize;
        for &i in interior {
            if field.values()[i].abs() < cut {
                zeroed += 1;
            }
        }
        let values = field
            .values()
            .iter()
            .map(|&v| if v.abs() < cut { 0.0 } else { v })
            .collect();
        *field = field.with_values(values)?;
        fractions.push(zeroed as f64 / interior.len() as f64);
    }
    Ok((
        out,
        SparsityReport {
            tau,
            zeroed_fraction: fractions,
        },
    ))
}
