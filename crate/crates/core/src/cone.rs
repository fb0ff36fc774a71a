//! The cone `P` of nonnegative fields, its metric projection in the energy
//! inner product, the neighborhoods `D±(μ)`, region labels and the
//! Schauder-invariance check used to pick `μ₀`.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::calculus::EnergyProblem;
use crate::error::{Error, Result};
use crate::mesh::{DiscreteSpace, Field};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Positive,
    Negative,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Positive => 1.0,
            Sign::Negative => -1.0,
        }
    }

    pub fn both() -> [Sign; 2] {
        [Sign::Positive, Sign::Negative]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConeNeighborhood {
    pub sign: Sign,
    pub mu: f64,
}

impl ConeNeighborhood {
    pub fn new(sign: Sign, mu: f64) -> Result<Self> {
        if !(mu > 0.0 && mu < 1.0) {
            return Err(Error::Config(format!(
                "cone neighborhood radius must lie in (0, 1), got {mu}"
            )));
        }
        Ok(Self { sign, mu })
    }

    pub fn contains(&self, space: &DiscreteSpace, u: &Field, tol: f64) -> Result<bool> {
        Ok(project_cone(space, u, self.sign)?.distance <= self.mu + tol)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProjectionResult {
    pub projection: Field,
    pub residual: Field,
    pub distance: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegionLabel {
    PositiveRegion,
    NegativeRegion,
    SignChangingRegion,
    Overlap,
}

impl RegionLabel {
    pub fn classify(d_plus: f64, d_minus: f64, mu: f64) -> Self {
        match (d_plus <= mu, d_minus <= mu) {
            (true, true) => RegionLabel::Overlap,
            (true, false) => RegionLabel::PositiveRegion,
            (false, true) => RegionLabel::NegativeRegion,
            (false, false) => RegionLabel::SignChangingRegion,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RegionLabel::PositiveRegion => "positive",
            RegionLabel::NegativeRegion => "negative",
            RegionLabel::SignChangingRegion => "sign_changing",
            RegionLabel::Overlap => "overlap",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "positive" => Some(RegionLabel::PositiveRegion),
            "negative" => Some(RegionLabel::NegativeRegion),
            "sign_changing" => Some(RegionLabel::SignChangingRegion),
            "overlap" => Some(RegionLabel::Overlap),
            _ => None,
        }
    }

    /// Whether the label places the state inside `D^sign(μ)`.
    pub fn inside(self, sign: Sign) -> bool {
        matches!(
            (self, sign),
            (RegionLabel::Overlap, _)
                | (RegionLabel::PositiveRegion, Sign::Positive)
                | (RegionLabel::NegativeRegion, Sign::Negative)
        )
    }
}

/// Projection of `u` onto `{v ≥ 0}` in the energy inner product: the
/// obstacle problem `min ½(v−u)ᵀA(v−u)` over `v ≥ 0`, solved by a
/// primal-dual active-set iteration (finite for the M-matrix `A`).
fn project_nonnegative(
    space: &DiscreteSpace,
    u: &DVector<f64>,
) -> Result<(DVector<f64>, f64, usize)> {
    let n = u.len();
    if u.iter().all(|&x| x >= 0.0) {
        return Ok((u.clone(), 0.0, 0));
    }
    let a = space.stiffness();
    let au = a.mul_vec(u);
    let mut active: Vec<bool> = u.iter().map(|&x| x <= 0.0).collect();
    let max_iter = n + 20;
    for it in 1..=max_iter {
        let free: Vec<usize> = (0..n).filter(|&i| !active[i]).collect();
        let mut v = DVector::zeros(n);
        if !free.is_empty() {
            let rhs = DVector::from_iterator(free.len(), free.iter().map(|&i| au[i]));
            let sol = a.principal(&free).cholesky()?.solve(&rhs);
            for (k, &i) in free.iter().enumerate() {
                v[i] = sol[k];
            }
        }
        let mult = a.mul_vec(&(&v - u));
        let mut next = active.clone();
        // roundoff-level hysteresis; exact sign tests can cycle on ties
        let (tol_v, tol_m) = (1e-14 * (1.0 + u.amax()), 1e-14 * (1.0 + au.amax()));
        for i in 0..n {
            next[i] = if active[i] {
                mult[i] > -tol_m
            } else {
                v[i] < -tol_v
            };
        }
        if next == active {
            for x in v.iter_mut() {
                *x = x.max(0.0);
            }
            let mult = a.mul_vec(&(&v - u));
            let scale = 1.0 + au.amax();
            let kkt = (0..n)
                .map(|i| {
                    let comp = v[i].min(mult[i]).abs();
                    let dual = (-mult[i]).max(0.0);
                    comp.max(dual)
                })
                .fold(0.0, f64::max)
                / scale;
            return Ok((v, kkt, it));
        }
        active = next;
    }
    Err(Error::ProjectionNotConverged {
        iterations: max_iter,
        residual: f64::NAN,
    })
}

/// Metric projection onto `sign·P`.
pub fn project_cone(space: &DiscreteSpace, u: &Field, sign: Sign) -> Result<ProjectionResult> {
    space.check(u)?;
    let s = sign.value();
    let (v, kkt, iterations) = project_nonnegative(space, &(u.as_vector() * s))?;
    let projection = v * s;
    let residual = u.as_vector() - &projection;
    let distance = space.a_norm(&residual);
    Ok(ProjectionResult {
        projection: projection.into(),
        residual: residual.into(),
        distance,
        kkt_residual: kkt,
        iterations,
    })
}

/// `(dist(u, P), dist(u, −P))`.
pub fn dist_to_cones(space: &DiscreteSpace, u: &Field) -> Result<(f64, f64)> {
    Ok((
        project_cone(space, u, Sign::Positive)?.distance,
        project_cone(space, u, Sign::Negative)?.distance,
    ))
}

pub fn region_of(space: &DiscreteSpace, u: &Field, mu0: f64) -> Result<RegionLabel> {
    let (dp, dm) = dist_to_cones(space, u)?;
    Ok(RegionLabel::classify(dp, dm, mu0))
}

/// Random field with Gaussian coefficients on the lowest eigenmodes plus
/// a small nodal perturbation, scaled to energy norm `norm`.
pub fn random_field<R: Rng + ?Sized>(
    space: &DiscreteSpace,
    rng: &mut R,
    norm: f64,
) -> Result<Field> {
    let n = space.len();
    let modes = space.eigenpairs(n.min(8))?;
    let mut u = DVector::zeros(n);
    for p in &modes {
        let a: f64 = rng.sample(StandardNormal);
        u.axpy(a / p.value.sqrt(), p.vector.as_vector(), 1.0);
    }
    let base = space.a_norm(&u).max(1e-300);
    let noise = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let nn = space.a_norm(&noise).max(1e-300);
    u = u / base + noise * (0.1 / nn);
    let un = space.a_norm(&u);
    Ok((u * (norm / un)).into())
}

/// Point at distance exactly `d` from `sign·P`: `π + d·T/‖T‖` for the
/// projection `π` of a random field.
pub fn boundary_sample<R: Rng + ?Sized>(
    space: &DiscreteSpace,
    rng: &mut R,
    sign: Sign,
    d: f64,
) -> Result<Field> {
    loop {
        let norm = rng.gen_range(0.2..4.0);
        let u = random_field(space, rng, norm)?;
        let p = project_cone(space, &u, sign)?;
        if p.distance > 1e-3 * norm {
            let t = p.residual.as_vector() * (d / p.distance);
            return Ok((p.projection.as_vector() + t).into());
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchauderWitness {
    pub sign: Sign,
    pub sample: usize,
    /// `dist(u, sign·P)` of the sampled state.
    pub distance: f64,
    /// `dist(λA⁻¹Mw, sign·P)` of the worst box vertex.
    pub image_distance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub mu0: f64,
    pub samples: usize,
    pub worst_ratio: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub fitted_c: f64,
    pub exponent: f64,
    /// Largest `dist(image) − (d/3 + C·d^{q−1})` over all samples.
    pub inequality_worst_slack: f64,
    pub inequality_holds: bool,
    pub witness: Option<SchauderWitness>,
}

/// Images `λA⁻¹Mw` at the all-lower and all-upper selections of the
/// subdifferential box of `u`.
fn vertex_images(prob: &EnergyProblem, u: &Field) -> Result<[Field; 2]> {
    let b = prob.subdifferential_box(u)?;
    let space = prob.space();
    let lam = prob.lambda();
    let image = |w: &[f64]| -> Field {
        let mw = DVector::from_iterator(
            w.len(),
            w.iter().zip(space.mass().iter()).map(|(a, m)| lam * a * m),
        );
        space.riesz(&mw).into()
    };
    Ok([image(&b.lo), image(&b.hi)])
}

fn image_distance(prob: &EnergyProblem, u: &Field, sign: Sign) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for img in vertex_images(prob, u)? {
        worst = worst.max(project_cone(prob.space(), &img, sign)?.distance);
    }
    Ok(worst)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mu0Selection {
    pub mu0: f64,
    pub fitted_c: f64,
    pub exponent: f64,
    pub samples: usize,
}

/// Fits `C` in `dist(image, νP) ≤ d/3 + C·d^{q−1}` over boundary samples at
/// log-spaced distances `d ∈ [10⁻³, 1]`, then picks the largest `μ` with
/// `μ/3 + Cμ^{q−1} ≤ μ/2`, halved. The fitted constant carries a safety
/// factor of 2.
pub fn select_mu0<R: Rng + ?Sized>(
    prob: &EnergyProblem,
    samples: usize,
    rng: &mut R,
) -> Result<Mu0Selection> {
    let q = prob.potential().growth().q;
    let mut c: f64 = 0.0;
    for k in 0..samples {
        let sign = if k % 2 == 0 {
            Sign::Positive
        } else {
            Sign::Negative
        };
        let d = 10f64.powf(rng.gen_range(-3.0..0.0));
        let u = boundary_sample(prob.space(), rng, sign, d)?;
        let dist = image_distance(prob, &u, sign)?;
        c = c.max((dist - d / 3.0) / d.powf(q - 1.0));
    }
    let fitted_c = 2.0 * c.max(0.0);
    let largest = if fitted_c > 0.0 {
        (1.0 / (6.0 * fitted_c)).powf(1.0 / (q - 2.0))
    } else {
        1.0
    };
    Ok(Mu0Selection {
        mu0: 0.5 * largest.min(1.0 - 1e-9),
        fitted_c,
        exponent: q - 1.0,
        samples,
    })
}

/// Samples states on `∂D^ν(μ₀)` (plus any `extra` states inside a
/// neighborhood), maps them through `u ↦ λA⁻¹Mw` at the box vertices and
/// checks that the images land in `D^ν(μ₀/2)`.
pub fn check_schauder<R: Rng + ?Sized>(
    prob: &EnergyProblem,
    mu0: f64,
    sample_count: usize,
    fitted_c: f64,
    extra: &[Field],
    rng: &mut R,
) -> Result<InvarianceReport> {
    let tolerance = 1e-6;
    let q = prob.potential().growth().q;
    let mut worst_ratio: f64 = 0.0;
    let mut worst_slack = f64::NEG_INFINITY;
    let mut witness = None;
    let mut record = |sign: Sign, idx: usize, d: f64, dist: f64| {
        let ratio = dist / mu0;
        if ratio > worst_ratio || witness.is_none() {
            worst_ratio = ratio;
            witness = Some(SchauderWitness {
                sign,
                sample: idx,
                distance: d,
                image_distance: dist,
            });
        }
        worst_slack = worst_slack.max(dist - (d / 3.0 + fitted_c * d.powf(q - 1.0)));
    };
    for k in 0..sample_count {
        let sign = if k % 2 == 0 {
            Sign::Positive
        } else {
            Sign::Negative
        };
        let u = boundary_sample(prob.space(), rng, sign, mu0)?;
        let dist = image_distance(prob, &u, sign)?;
        record(sign, k, mu0, dist);
    }
    for (k, u) in extra.iter().enumerate() {
        for sign in Sign::both() {
            let d = project_cone(prob.space(), u, sign)?.distance;
            if d <= mu0 {
                let dist = image_distance(prob, u, sign)?;
                record(sign, sample_count + k, d, dist);
            }
        }
    }
    Ok(InvarianceReport {
        mu0,
        samples: sample_count + extra.len(),
        worst_ratio,
        tolerance,
        passed: worst_ratio <= 0.5 + tolerance,
        fitted_c,
        exponent: q - 1.0,
        inequality_worst_slack: worst_slack,
        inequality_holds: worst_slack <= 1e-12,
        witness,
    })
}
