//! Synthetic phantoms with known object supports, and multiplicative noise.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{NoiseDistribution, NoiseSpec, ScalarField};
use crate::rng::CounterRng;

/// Disk `|x - c| ≤ r` of constant intensity in normalized coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Disk {
    pub cx: f64,
    pub cy: f64,
    pub r: f64,
    pub height: f64,
}

impl Disk {
    fn contains(&self, x: f64, y: f64) -> bool {
        (x - self.cx).powi(2) + (y - self.cy).powi(2) <= self.r * self.r
    }

    fn validate(&self, y_extent: f64) -> Result<()> {
        let inside = self.r > 0.0
            && self.cx - self.r >= 0.0
            && self.cx + self.r <= 1.0
            && self.cy - self.r >= 0.0
            && self.cy + self.r <= y_extent;
        if !inside {
            return Err(Error::InvalidInput(format!(
                "disk {self:?} leaves the domain"
            )));
        }
        height_in_range(self.height)
    }
}

fn height_in_range(h: f64) -> Result<()> {
    if (0.0..=1.0).contains(&h) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("height {h} outside [0, 1]")))
    }
}

/// Which phantom to draw, with its geometry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PhantomKind {
    /// Two plateaus on a zero baseline with linear ramps of one hundredth:
    /// up on [0.19, 0.2), down on [0.3, 0.31), up on [0.89, 0.9], down on
    /// [0.95, 0.96).
    Profile1d {
        heights: [f64; 2],
    },
    /// Unit step at `x = 0.5`.
    Step1d,
    TwoDisks {
        disks: [Disk; 2],
    },
    /// One disk smoothed by a Gaussian of standard deviation `blur / 2`,
    /// truncated at `blur` (normalized length). `blur = 0` means no blur.
    BlobWithBlur {
        disk: Disk,
        blur: f64,
    },
}

/// A phantom kind at a resolution; 1-D kinds use `n × 1`, 2-D kinds `n × n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub kind: PhantomKind,
    pub n: usize,
}

impl PhantomSpec {
    pub fn profile1d(n: usize) -> Self {
        Self {
            kind: PhantomKind::Profile1d {
                heights: [1.0, 1.0],
            },
            n,
        }
    }

    pub fn step1d(n: usize) -> Self {
        Self {
            kind: PhantomKind::Step1d,
            n,
        }
    }

    /// Two disks of different radii, so their indicator modes do not pair up.
    pub fn two_disks(n: usize) -> Self {
        Self {
            kind: PhantomKind::TwoDisks {
                disks: [
                    Disk {
                        cx: 0.3,
                        cy: 0.35,
                        r: 0.15,
                        height: 1.0,
                    },
                    Disk {
                        cx: 0.7,
                        cy: 0.65,
                        r: 0.1,
                        height: 1.0,
                    },
                ],
            },
            n,
        }
    }

    pub fn blob(n: usize, blur: f64) -> Self {
        Self {
            kind: PhantomKind::BlobWithBlur {
                disk: Disk {
                    cx: 0.5,
                    cy: 0.5,
                    r: 0.25,
                    height: 1.0,
                },
                blur,
            },
            n,
        }
    }

    fn dims(&self) -> (usize, usize) {
        match self.kind {
            PhantomKind::Profile1d { .. } | PhantomKind::Step1d => (self.n, 1),
            _ => (self.n, self.n),
        }
    }
}

/// Phantom image plus one ground-truth support mask (values 0/1) per object.
#[derive(Clone, Debug, PartialEq)]
pub struct Phantom {
    pub image: ScalarField,
    pub objects: Vec<ScalarField>,
}

/// Piecewise-linear profile with the two plateaus.
fn profile(x: f64, heights: [f64; 2]) -> f64 {
    let ramp = |x: f64, a: f64, b: f64| ((x - a) / (b - a)).clamp(0.0, 1.0);
    if x < 0.6 {
        heights[0] * (ramp(x, 0.19, 0.2) - ramp(x, 0.3, 0.31))
    } else {
        heights[1] * (ramp(x, 0.89, 0.9) - ramp(x, 0.95, 0.96))
    }
}

fn indicator(w: usize, h: usize, f: impl Fn(f64, f64) -> bool) -> Result<ScalarField> {
    ScalarField::from_fn(w, h, |x, y| if f(x, y) { 1.0 } else { 0.0 })
}

pub fn make_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    if spec.n < 3 {
        return Err(Error::InvalidInput(format!(
            "phantom resolution must be >= 3, got {}",
            spec.n
        )));
    }
    let (w, h) = spec.dims();
    match &spec.kind {
        PhantomKind::Profile1d { heights } => {
            for &v in heights {
                height_in_range(v)?;
            }
            let image = ScalarField::from_fn(w, h, |x, _| profile(x, *heights))?;
            // supports are where the unit-height profile reaches one half
            let objects = vec![
                indicator(w, h, |x, _| x < 0.6 && profile(x, [1.0, 1.0]) >= 0.5)?,
                indicator(w, h, |x, _| x >= 0.6 && profile(x, [1.0, 1.0]) >= 0.5)?,
            ];
            Ok(Phantom { image, objects })
        }
        PhantomKind::Step1d => {
            let image = ScalarField::from_fn(w, h, |x, _| if x < 0.5 { 0.0 } else { 1.0 })?;
            let objects = vec![image.clone()];
            Ok(Phantom { image, objects })
        }
        PhantomKind::TwoDisks { disks } => {
            for d in disks {
                d.validate(1.0)?;
            }
            let [a, b] = disks;
            if (a.cx - b.cx).hypot(a.cy - b.cy) <= a.r + b.r {
                return Err(Error::InvalidInput("disks overlap".into()));
            }
            let image = ScalarField::from_fn(w, h, |x, y| {
                if a.contains(x, y) {
                    a.height
                } else if b.contains(x, y) {
                    b.height
                } else {
                    0.0
                }
            })?;
            let objects = vec![
                indicator(w, h, |x, y| a.contains(x, y))?,
                indicator(w, h, |x, y| b.contains(x, y))?,
            ];
            Ok(Phantom { image, objects })
        }
        PhantomKind::BlobWithBlur { disk, blur } => {
            disk.validate(1.0)?;
            if !(*blur >= 0.0 && blur.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "blur must be >= 0, got {blur}"
                )));
            }
            let sharp = ScalarField::from_fn(w, h, |x, y| {
                if disk.contains(x, y) {
                    disk.height
                } else {
                    0.0
                }
            })?;
            let objects = vec![indicator(w, h, |x, y| disk.contains(x, y))?];
            Ok(Phantom {
                image: gaussian_blur(&sharp, *blur)?,
                objects,
            })
        }
    }
}

/// Separable Gaussian blur with edge replication.
pub fn gaussian_blur(field: &ScalarField, radius: f64) -> Result<ScalarField> {
    let half = (radius / field.spacing()).floor() as usize;
    if half == 0 {
        return Ok(field.clone());
    }
    let sigma = 0.5 * radius / field.spacing();
    let mut kernel: Vec<f64> = (0..=2 * half)
        .map(|i| {
            let d = i as f64 - half as f64;
            (-0.5 * d * d / (sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let (w, h) = (field.width(), field.height());
    let pass = |src: &[f64], along_x: bool| -> Vec<f64> {
        let mut out = vec![0.0; src.len()];
        for y in 0..h {
            for x in 0..w {
                let (pos, len) = if along_x { (x, w) } else { (y, h) };
                let mut acc = 0.0;
                for (i, k) in kernel.iter().enumerate() {
                    let p = (pos + i).saturating_sub(half).min(len - 1);
                    let idx = if along_x { y * w + p } else { p * w + x };
                    acc += k * src[idx];
                }
                out[y * w + x] = acc;
            }
        }
        out
    };
    let mut values = pass(field.values(), true);
    if h > 1 {
        values = pass(&values, false);
    }
    field.with_values(values)
}

/// `I (1 + δ ξ)` with ξ drawn per node index from the seeded stream.
pub fn add_noise(image: &ScalarField, spec: &NoiseSpec) -> Result<ScalarField> {
    let spec = NoiseSpec::new(spec.delta, spec.distribution, spec.seed)?;
    let rng = CounterRng::new(spec.seed);
    let values = image
        .values()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let xi = match spec.distribution {
                NoiseDistribution::Uniform01 => rng.uniform_at(i as u64),
                NoiseDistribution::Gaussian01 => rng.gaussian_at(i as u64),
            };
            v * (1.0 + spec.delta * xi)
        })
        .collect();
    image.with_values(values)
}

/// Dice coefficient `2|A∩B| / (|A| + |B|)` of two masks (nonzero = inside).
/// Two empty masks score 1.
pub fn dice(a: &ScalarField, b: &ScalarField) -> Result<f64> {
    b.same_shape(a.width(), a.height())?;
    let (mut both, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.values().iter().zip(b.values()) {
        let (x, y) = (x != 0.0, y != 0.0);
        na += x as usize;
        nb += y as usize;
        both += (x && y) as usize;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (na + nb) as f64)
}
