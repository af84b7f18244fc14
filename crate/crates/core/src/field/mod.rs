//! Uniform grids, domain masks and the small amount of discrete calculus the
//! weight and operator modules need.
//!
//! Every grid is normalized so that its longest axis spans `[0, 1]`; the grid
//! step is therefore `h = 1 / (max(width, height) - 1)` on both axes. A grid
//! with `height == 1` is a 1-D signal.

mod io;

pub use io::{
    decode_pfm, decode_pgm, encode_pfm, encode_pgm, read_field, read_image, write_field,
    write_image,
};

use crate::error::{Error, Result};

/// Real-valued function sampled on a uniform grid, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    width: usize,
    height: usize,
    spacing: f64,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        check_shape(width, height)?;
        if values.len() != width * height {
            return Err(Error::Dimension(format!(
                "{} values for a {width}x{height} grid",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite value {} at node {i}",
                values[i]
            )));
        }
        Ok(Self {
            width,
            height,
            spacing: grid_spacing(width, height),
            values,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn zeros(width: usize, height: usize) -> Result<Self> {
        Self::filled(width, height, 0.0)
    }

    /// Samples `f(x, y)` at the physical node coordinates (`y = 0` in 1-D).
    pub fn from_fn(width: usize, height: usize, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        check_shape(width, height)?;
        let h = grid_spacing(width, height);
        let values = (0..width * height)
            .map(|i| f((i % width) as f64 * h, (i / width) as f64 * h))
            .collect();
        Self::new(width, height, values)
    }

    /// Same grid, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.width, self.height, values)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Spatial dimension: 1 for a single-row grid, 2 otherwise.
    pub fn dim(&self) -> usize {
        if self.height == 1 {
            1
        } else {
            2
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Physical coordinates of node `i`.
    pub fn coords(&self, i: usize) -> (f64, f64) {
        (
            (i % self.width) as f64 * self.spacing,
            (i / self.width) as f64 * self.spacing,
        )
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Root-mean-square difference over all nodes.
    pub fn rmse(&self, other: &ScalarField) -> Result<f64> {
        same_grid(self.width, self.height, other.width, other.height)?;
        let ss: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok((ss / self.len() as f64).sqrt())
    }

    pub(crate) fn same_shape(&self, width: usize, height: usize) -> Result<()> {
        same_grid(self.width, self.height, width, height)
    }
}

fn check_shape(width: usize, height: usize) -> Result<()> {
    if width < 2 || height < 1 {
        return Err(Error::InvalidInput(format!(
            "grid must be at least 2x1, got {width}x{height}"
        )));
    }
    Ok(())
}

fn grid_spacing(width: usize, height: usize) -> f64 {
    1.0 / (width.max(height) - 1) as f64
}

fn same_grid(w0: usize, h0: usize, w1: usize, h1: usize) -> Result<()> {
    if w0 != w1 || h0 != h1 {
        return Err(Error::Dimension(format!("{w0}x{h0} vs {w1}x{h1}")));
    }
    Ok(())
}

/// Classification of a grid node with respect to the computational domain.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeKind {
    /// Unknown of the eigenproblem.
    Interior,
    /// Dirichlet node on Γ.
    Boundary,
    /// Outside the region of interest.
    Excluded,
}

/// Interior / boundary / excluded labelling of a grid plus the compact
/// numbering of interior nodes (row-major).
#[derive(Clone, Debug, PartialEq)]
pub struct DomainMask {
    width: usize,
    height: usize,
    labels: Vec<NodeKind>,
    interior: Vec<usize>,
    dof: Vec<Option<usize>>,
}

impl DomainMask {
    /// The whole rectangle; the outer ring of nodes (both ends in 1-D) is Γ.
    pub fn full(width: usize, height: usize) -> Result<Self> {
        Self::from_foreground(width, height, &vec![true; width * height])
    }

    /// Region of interest. Foreground nodes on the grid border or next to a
    /// background node become Γ; the remaining foreground nodes are interior.
    pub fn from_foreground(width: usize, height: usize, foreground: &[bool]) -> Result<Self> {
        check_shape(width, height)?;
        if foreground.len() != width * height {
            return Err(Error::Dimension(format!(
                "{} mask entries for a {width}x{height} grid",
                foreground.len()
            )));
        }
        let labels = (0..width * height)
            .map(|i| {
                if !foreground[i] {
                    NodeKind::Excluded
                } else if on_border(width, height, i)
                    || neighbors(width, height, i).any(|j| !foreground[j])
                {
                    NodeKind::Boundary
                } else {
                    NodeKind::Interior
                }
            })
            .collect();
        Self::from_labels(width, height, labels)
    }

    /// Binary mask image: zero means excluded, anything else is foreground.
    pub fn from_field(mask: &ScalarField) -> Result<Self> {
        let fg: Vec<bool> = mask.values().iter().map(|&v| v != 0.0).collect();
        Self::from_foreground(mask.width(), mask.height(), &fg)
    }

    pub fn from_labels(width: usize, height: usize, labels: Vec<NodeKind>) -> Result<Self> {
        check_shape(width, height)?;
        if labels.len() != width * height {
            return Err(Error::Dimension(format!(
                "{} labels for a {width}x{height} grid",
                labels.len()
            )));
        }
        let mut interior = Vec::new();
        let mut dof = vec![None; labels.len()];
        for (i, kind) in labels.iter().enumerate() {
            if *kind != NodeKind::Interior {
                continue;
            }
            if on_border(width, height, i) {
                return Err(Error::InvalidInput(format!(
                    "interior node {i} lies on the grid border"
                )));
            }
            if neighbors(width, height, i).any(|j| labels[j] == NodeKind::Excluded) {
                return Err(Error::InvalidInput(format!(
                    "interior node {i} touches an excluded node"
                )));
            }
            dof[i] = Some(interior.len());
            interior.push(i);
        }
        if interior.is_empty() {
            return Err(Error::InvalidInput("domain has no interior nodes".into()));
        }
        Ok(Self {
            width,
            height,
            labels,
            interior,
            dof,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        if self.height == 1 {
            1
        } else {
            2
        }
    }

    pub fn spacing(&self) -> f64 {
        grid_spacing(self.width, self.height)
    }

    pub fn kind(&self, node: usize) -> NodeKind {
        self.labels[node]
    }

    pub fn labels(&self) -> &[NodeKind] {
        &self.labels
    }

    /// Number of interior nodes (degrees of freedom).
    pub fn interior_count(&self) -> usize {
        self.interior.len()
    }

    /// Grid index of every interior node, in DOF order.
    pub fn interior_nodes(&self) -> &[usize] {
        &self.interior
    }

    /// DOF number of a grid node, if it is interior.
    pub fn dof(&self, node: usize) -> Option<usize> {
        self.dof[node]
    }

    /// In-bounds 4-neighbours (2 in 1-D) of `node`, in the order -x, +x, -y, +y.
    pub fn neighbors(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        neighbors(self.width, self.height, node)
    }

    /// Interior values of `field` in DOF order.
    pub fn gather(&self, field: &ScalarField) -> Result<Vec<f64>> {
        field.same_shape(self.width, self.height)?;
        Ok(self.interior.iter().map(|&i| field.values()[i]).collect())
    }

    /// Full-grid field holding `dofs` on interior nodes and zero elsewhere.
    pub fn scatter(&self, dofs: &[f64]) -> Result<ScalarField> {
        if dofs.len() != self.interior.len() {
            return Err(Error::Dimension(format!(
                "{} values for {} interior nodes",
                dofs.len(),
                self.interior.len()
            )));
        }
        let mut values = vec![0.0; self.len()];
        for (&node, &v) in self.interior.iter().zip(dofs) {
            values[node] = v;
        }
        ScalarField::new(self.width, self.height, values)
    }

    /// Foreground (interior or boundary) indicator as a 0/1 field.
    pub fn foreground_field(&self) -> ScalarField {
        let values = self
            .labels
            .iter()
            .map(|k| if *k == NodeKind::Excluded { 0.0 } else { 1.0 })
            .collect();
        ScalarField::new(self.width, self.height, values).expect("mask shape already validated")
    }
}

fn on_border(width: usize, height: usize, i: usize) -> bool {
    let (x, y) = (i % width, i / width);
    if x == 0 || x + 1 == width {
        return true;
    }
    height > 1 && (y == 0 || y + 1 == height)
}

fn neighbors(width: usize, height: usize, i: usize) -> impl Iterator<Item = usize> {
    let (x, y) = (i % width, i / width);
    [
        (x > 0).then(|| i - 1),
        (x + 1 < width).then(|| i + 1),
        (y > 0).then(|| i - width),
        (y + 1 < height).then(|| i + width),
    ]
    .into_iter()
    .flatten()
}

/// Per-node gradient; the second component is zero for 1-D grids.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientField {
    width: usize,
    height: usize,
    components: Vec<[f64; 2]>,
}

impl GradientField {
    pub fn components(&self) -> &[[f64; 2]] {
        &self.components
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// `|∇I|²` per node.
    pub fn norm_sq(&self) -> Vec<f64> {
        self.components
            .iter()
            .map(|[gx, gy]| gx * gx + gy * gy)
            .collect()
    }
}

/// Finite-difference gradient restricted to the foreground of `mask`.
///
/// Along each axis a node uses the central difference when both neighbours are
/// in the foreground, a one-sided difference when only one is, and zero when
/// neither is. Excluded nodes get a zero gradient.
pub fn gradient(field: &ScalarField, mask: &DomainMask) -> Result<GradientField> {
    field.same_shape(mask.width, mask.height)?;
    let (w, h) = (field.width, field.height);
    let step = field.spacing;
    let v = field.values();
    let usable = |j: usize| mask.labels[j] != NodeKind::Excluded;
    let axis = |i: usize, lo: Option<usize>, hi: Option<usize>| -> f64 {
        match (lo.filter(|&j| usable(j)), hi.filter(|&j| usable(j))) {
            (Some(a), Some(b)) => (v[b] - v[a]) / (2.0 * step),
            (Some(a), None) => (v[i] - v[a]) / step,
            (None, Some(b)) => (v[b] - v[i]) / step,
            (None, None) => 0.0,
        }
    };
    let components = (0..w * h)
        .map(|i| {
            if !usable(i) {
                return [0.0, 0.0];
            }
            let (x, y) = (i % w, i / w);
            let gx = axis(i, (x > 0).then(|| i - 1), (x + 1 < w).then(|| i + 1));
            let gy = if h > 1 {
                axis(i, (y > 0).then(|| i - w), (y + 1 < h).then(|| i + w))
            } else {
                0.0
            };
            [gx, gy]
        })
        .collect();
    Ok(GradientField {
        width: w,
        height: h,
        components,
    })
}

/// Discrete L² pairing `h^d Σ_interior a·b`.
pub fn inner_product(a: &ScalarField, b: &ScalarField, mask: &DomainMask) -> Result<f64> {
    a.same_shape(mask.width, mask.height)?;
    b.same_shape(mask.width, mask.height)?;
    let sum: f64 = mask
        .interior
        .iter()
        .map(|&i| a.values[i] * b.values[i])
        .sum();
    Ok(cell_volume(mask) * sum)
}

/// `h^d`, the quadrature weight of one node.
pub fn cell_volume(mask: &DomainMask) -> f64 {
    mask.spacing().powi(mask.dim() as i32)
}

/// Distribution of the multiplicative noise factor ξ.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseDistribution {
    /// ξ uniform on the open interval (0, 1).
    Uniform01,
    /// ξ standard normal.
    Gaussian01,
}

/// Noise model `I (1 + δ ξ)`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NoiseSpec {
    pub delta: f64,
    pub distribution: NoiseDistribution,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(delta: f64, distribution: NoiseDistribution, seed: u64) -> Result<Self> {
        if !(delta >= 0.0 && delta.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "noise level must be >= 0, got {delta}"
            )));
        }
        Ok(Self {
            delta,
            distribution,
            seed,
        })
    }
}
