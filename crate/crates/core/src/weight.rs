//! Diffusivity fields μ(x) derived from an image.
//!
//! The Lorentzian law `μ = γ / (1 + γ |∇I|²)²` is the default. It equals γ on
//! flat regions and collapses at strong edges, which is what decouples the
//! eigenfunctions across object boundaries. The penalized-TV law
//! `μ = 1 / √(|∇I|² + ε²)` is kept as an alternative.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{gradient, DomainMask, NodeKind, ScalarField};

/// Below this the image is treated as constant and γ falls back to 1.
pub const DEGENERATE_GRADIENT: f64 = 1e-12;

/// Weight law selected by the user; γ is resolved from the image later.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightKind {
    Lorentzian,
    PenalizedTv { epsilon: f64 },
}

impl WeightKind {
    pub fn name(&self) -> &'static str {
        match self {
            WeightKind::Lorentzian => "lorentzian",
            WeightKind::PenalizedTv { .. } => "tv",
        }
    }
}

/// A fully parameterized weight law.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightLaw {
    Lorentzian { gamma: f64 },
    PenalizedTv { epsilon: f64 },
}

impl WeightLaw {
    pub fn lorentzian(gamma: f64) -> Result<Self> {
        positive("gamma", gamma)?;
        Ok(WeightLaw::Lorentzian { gamma })
    }

    pub fn penalized_tv(epsilon: f64) -> Result<Self> {
        positive("epsilon", epsilon)?;
        Ok(WeightLaw::PenalizedTv { epsilon })
    }

    pub fn name(&self) -> &'static str {
        match self {
            WeightLaw::Lorentzian { .. } => "lorentzian",
            WeightLaw::PenalizedTv { .. } => "tv",
        }
    }

    /// μ for a single value of `|∇I|²`.
    pub fn eval(&self, grad_sq: f64) -> f64 {
        match *self {
            WeightLaw::Lorentzian { gamma } => {
                let d = 1.0 + gamma * grad_sq;
                gamma / (d * d)
            }
            WeightLaw::PenalizedTv { epsilon } => 1.0 / (grad_sq + epsilon * epsilon).sqrt(),
        }
    }

    /// Upper bound of μ over all inputs: γ or 1/ε.
    pub fn ceiling(&self) -> f64 {
        match *self {
            WeightLaw::Lorentzian { gamma } => gamma,
            WeightLaw::PenalizedTv { epsilon } => 1.0 / epsilon,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{name} must be > 0, got {v}")))
    }
}

/// γ together with the constant-image fallback flag.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gamma {
    pub value: f64,
    pub degenerate: bool,
}

/// `γ = max |∇I|` over interior nodes, or 1 when the image is flat there.
pub fn compute_gamma(image: &ScalarField, mask: &DomainMask) -> Result<Gamma> {
    let grad_sq = gradient(image, mask)?.norm_sq();
    Ok(gamma_from_grad_sq(&grad_sq, mask))
}

fn gamma_from_grad_sq(grad_sq: &[f64], mask: &DomainMask) -> Gamma {
    let max = mask
        .interior_nodes()
        .iter()
        .fold(0.0f64, |m, &i| m.max(grad_sq[i]))
        .sqrt();
    if max < DEGENERATE_GRADIENT {
        Gamma {
            value: 1.0,
            degenerate: true,
        }
    } else {
        Gamma {
            value: max,
            degenerate: false,
        }
    }
}

/// Strictly positive diffusivity on every node of a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightField {
    mu: ScalarField,
    law: WeightLaw,
}

impl WeightField {
    /// Wraps an externally built μ, e.g. a piecewise-constant test coefficient.
    pub fn from_values(mu: ScalarField, law: WeightLaw) -> Result<Self> {
        if let Some(i) = mu.values().iter().position(|&m| m <= 0.0) {
            return Err(Error::InvalidInput(format!(
                "weight must be > 0, got {} at node {i}",
                mu.values()[i]
            )));
        }
        Ok(Self { mu, law })
    }

    pub fn mu(&self) -> &ScalarField {
        &self.mu
    }

    pub fn law(&self) -> WeightLaw {
        self.law
    }
}

fn apply_law(grad_sq: &ScalarField, law: WeightLaw) -> Result<WeightField> {
    let mut mu = Vec::with_capacity(grad_sq.len());
    for (i, &g) in grad_sq.values().iter().enumerate() {
        if !(g >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "|grad I|^2 must be >= 0, got {g} at node {i}"
            )));
        }
        let m = law.eval(g);
        if !(m > 0.0) {
            return Err(Error::InvalidInput(format!(
                "weight underflows to {m} at node {i} (|grad I|^2 = {g})"
            )));
        }
        mu.push(m);
    }
    WeightField::from_values(grad_sq.with_values(mu)?, law)
}

/// `μ = γ / (1 + γ·grad_sq)²` per node.
pub fn lorentzian_weight(grad_sq: &ScalarField, gamma: f64) -> Result<WeightField> {
    apply_law(grad_sq, WeightLaw::lorentzian(gamma)?)
}

/// `μ = 1 / √(grad_sq + ε²)` per node.
pub fn tv_weight(grad_sq: &ScalarField, epsilon: f64) -> Result<WeightField> {
    apply_law(grad_sq, WeightLaw::penalized_tv(epsilon)?)
}

/// Weight field of `image` on `mask` under `kind`, resolving γ from the image.
///
/// γ is reported for both laws; only the Lorentzian law uses it.
pub fn image_weight(
    image: &ScalarField,
    mask: &DomainMask,
    kind: WeightKind,
) -> Result<(WeightField, Gamma)> {
    let mut grad_sq = gradient(image, mask)?.norm_sq();
    let gamma = gamma_from_grad_sq(&grad_sq, mask);
    // excluded nodes never enter the operator; keep them at the flat-region weight
    for (g, kind) in grad_sq.iter_mut().zip(mask.labels()) {
        if *kind == NodeKind::Excluded {
            *g = 0.0;
        }
    }
    let grad_sq = image.with_values(grad_sq)?;
    let weight = match kind {
        WeightKind::Lorentzian => lorentzian_weight(&grad_sq, gamma.value)?,
        WeightKind::PenalizedTv { epsilon } => tv_weight(&grad_sq, epsilon)?,
    };
    Ok((weight, gamma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn step(n: usize) -> ScalarField {
        ScalarField::from_fn(n, 1, |x, _| if x < 0.5 { 0.0 } else { 1.0 }).unwrap()
    }

    #[test]
    fn gamma_of_constant_falls_back() {
        let f = ScalarField::filled(8, 8, 0.3).unwrap();
        let g = compute_gamma(&f, &DomainMask::full(8, 8).unwrap()).unwrap();
        assert_eq!(g.value, 1.0);
        assert!(g.degenerate);
    }

    #[test]
    fn gamma_of_ramp_is_one() {
        let f = ScalarField::from_fn(21, 1, |x, _| x).unwrap();
        let g = compute_gamma(&f, &DomainMask::full(21, 1).unwrap()).unwrap();
        assert!((g.value - 1.0).abs() < 1e-12);
        assert!(!g.degenerate);
    }

    #[test]
    fn gamma_of_step() {
        let g = compute_gamma(&step(101), &DomainMask::full(101, 1).unwrap()).unwrap();
        assert!((g.value - 50.0).abs() < 1e-9);
    }

    #[test]
    fn lorentzian_values() {
        let law = WeightLaw::lorentzian(1.0).unwrap();
        assert_eq!(law.eval(0.0), 1.0);
        assert_eq!(law.eval(1.0), 0.25);
        let edge = WeightLaw::lorentzian(50.0).unwrap().eval(2500.0);
        let expected = 50.0 / (1.0f64 + 125_000.0).powi(2);
        assert!((edge - expected).abs() <= 1e-24);
        assert!((edge - 3.2e-9).abs() < 0.01e-9);
    }

    #[test]
    fn tv_values() {
        let law = WeightLaw::penalized_tv(1.0).unwrap();
        assert_eq!(law.eval(0.0), 1.0);
        assert_eq!(law.eval(3.0), 0.5);
        let edge = WeightLaw::penalized_tv(0.01).unwrap().eval(2500.0);
        assert!((edge - 0.02).abs() < 1e-6);
    }

    #[test]
    fn step_weights_collapse_at_the_edge() {
        let img = step(101);
        let mask = DomainMask::full(101, 1).unwrap();
        let (w, gamma) = image_weight(&img, &mask, WeightKind::Lorentzian).unwrap();
        assert!((gamma.value - 50.0).abs() < 1e-9);
        let mu = w.mu().values();
        assert!((mu[10] - 50.0).abs() < 1e-12);
        assert!(mu[49] < 4e-9 && mu[50] < 4e-9);
        let (tv, _) = image_weight(&img, &mask, WeightKind::PenalizedTv { epsilon: 0.01 }).unwrap();
        assert!((tv.mu().values()[50] - 0.02).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_parameters_and_inputs() {
        assert!(WeightLaw::lorentzian(0.0).is_err());
        assert!(WeightLaw::penalized_tv(-1.0).is_err());
        let g = ScalarField::new(2, 1, vec![0.0, -1.0]).unwrap();
        assert!(lorentzian_weight(&g, 1.0).is_err());
        let huge = ScalarField::new(2, 1, vec![0.0, 1e200]).unwrap();
        assert!(lorentzian_weight(&huge, 1.0).is_err());
    }

    #[test]
    fn scaling_image_scales_gamma_and_keeps_edges() {
        let img = ScalarField::from_fn(
            41,
            1,
            |x, _| {
                if (0.3..0.5).contains(&x) {
                    0.8
                } else {
                    0.1
                }
            },
        )
        .unwrap();
        let mask = DomainMask::full(41, 1).unwrap();
        let c = 2.5;
        let scaled = img
            .with_values(img.values().iter().map(|v| c * v).collect())
            .unwrap();
        let (w0, g0) = image_weight(&img, &mask, WeightKind::Lorentzian).unwrap();
        let (w1, g1) = image_weight(&scaled, &mask, WeightKind::Lorentzian).unwrap();
        assert!((g1.value - c * g0.value).abs() < 1e-9 * g1.value);
        let low = |w: &WeightField, g: &Gamma| -> Vec<usize> {
            w.mu()
                .values()
                .iter()
                .enumerate()
                .filter(|(_, &m)| m < 1e-3 * g.value)
                .map(|(i, _)| i)
                .collect()
        };
        assert_eq!(low(&w0, &g0), low(&w1, &g1));
        assert!(!low(&w0, &g0).is_empty());
    }

    proptest! {
        #[test]
        fn weights_are_bounded_and_monotone(gamma in 0.01f64..100.0, eps in 0.01f64..10.0, a in 0.0f64..1e3, b in 0.0f64..1e3) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            for law in [WeightLaw::lorentzian(gamma).unwrap(), WeightLaw::penalized_tv(eps).unwrap()] {
                let (ml, mh) = (law.eval(lo), law.eval(hi));
                prop_assert!(mh <= ml);
                prop_assert!(mh > 0.0);
                prop_assert!(ml <= law.ceiling() * (1.0 + 1e-15));
            }
            prop_assert_eq!(WeightLaw::lorentzian(gamma).unwrap().eval(0.0), gamma);
        }
    }
}
