//! Finite-difference discretization of H¹₀ on an interval or a rectangle.
//!
//! The stiffness operator `A` is the standard 3- or 5-point difference
//! operator scaled so that `uᵀAu ≈ ∫|∇u|²`; the mass operator `M` is lumped,
//! `M = hᵈ I`, so that `uᵀMu ≈ ∫u²`. Boundary nodes are not stored: every
//! field vanishes on the boundary.

use std::io::{BufRead, Write};
use std::ops::{Add, Deref, Mul, Neg, Sub};
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::banded::{BandedCholesky, BandedSym};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// `(a, b)` per axis; one entry for an interval, two for a rectangle.
    pub bounds: Vec<(f64, f64)>,
    /// Interior node count per axis.
    pub n: Vec<usize>,
}

impl GridSpec {
    pub fn interval(a: f64, b: f64, n: usize) -> Self {
        Self {
            bounds: vec![(a, b)],
            n: vec![n],
        }
    }

    pub fn rectangle(x: (f64, f64), y: (f64, f64), nx: usize, ny: usize) -> Self {
        Self {
            bounds: vec![x, y],
            n: vec![nx, ny],
        }
    }

    pub fn dimension(&self) -> usize {
        self.bounds.len()
    }

    pub fn spacing(&self) -> Vec<f64> {
        self.bounds
            .iter()
            .zip(&self.n)
            .map(|(&(a, b), &n)| (b - a) / (n as f64 + 1.0))
            .collect()
    }

    pub fn node_count(&self) -> usize {
        self.n.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dimension();
        if d != 1 && d != 2 {
            return Err(Error::InvalidGrid(format!(
                "dimension must be 1 or 2, got {d}"
            )));
        }
        if self.n.len() != d {
            return Err(Error::InvalidGrid(format!(
                "{} node counts for {} axes",
                self.n.len(),
                d
            )));
        }
        for (axis, (&(a, b), &n)) in self.bounds.iter().zip(&self.n).enumerate() {
            if n < 2 {
                return Err(Error::InvalidGrid(format!(
                    "axis {axis}: need n >= 2, got {n}"
                )));
            }
            if !(a.is_finite() && b.is_finite() && b > a) {
                return Err(Error::InvalidGrid(format!(
                    "axis {axis}: degenerate bounds ({a}, {b})"
                )));
            }
        }
        Ok(())
    }
}

/// Nodal values of a function vanishing on the boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<f64>", into = "Vec<f64>")]
pub struct Field(DVector<f64>);

impl Field {
    pub fn zeros(len: usize) -> Self {
        Field(DVector::zeros(len))
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        Field(DVector::from_vec(values))
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.0
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.iter().copied().collect()
    }

    pub fn scale(&self, c: f64) -> Field {
        Field(&self.0 * c)
    }
}

impl Deref for Field {
    type Target = DVector<f64>;
    fn deref(&self) -> &DVector<f64> {
        &self.0
    }
}

impl From<DVector<f64>> for Field {
    fn from(v: DVector<f64>) -> Self {
        Field(v)
    }
}

impl From<Vec<f64>> for Field {
    fn from(v: Vec<f64>) -> Self {
        Field::from_vec(v)
    }
}

impl From<Field> for Vec<f64> {
    fn from(f: Field) -> Self {
        f.to_vec()
    }
}

impl Add for &Field {
    type Output = Field;
    fn add(self, rhs: &Field) -> Field {
        Field(&self.0 + &rhs.0)
    }
}

impl Sub for &Field {
    type Output = Field;
    fn sub(self, rhs: &Field) -> Field {
        Field(&self.0 - &rhs.0)
    }
}

impl Mul<f64> for &Field {
    type Output = Field;
    fn mul(self, c: f64) -> Field {
        Field(&self.0 * c)
    }
}

impl Neg for &Field {
    type Output = Field;
    fn neg(self) -> Field {
        Field(-&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Eigenpair {
    pub value: f64,
    pub vector: Field,
}

#[derive(Debug)]
pub struct DiscreteSpace {
    grid: GridSpec,
    spacing: Vec<f64>,
    coords: Vec<Vec<f64>>,
    stiffness: BandedSym,
    mass: DVector<f64>,
    factor: BandedCholesky,
    eigen: OnceLock<std::result::Result<Vec<Eigenpair>, String>>,
}

impl DiscreteSpace {
    pub fn new(grid: GridSpec) -> Result<Self> {
        grid.validate()?;
        let spacing = grid.spacing();
        let count = grid.node_count();
        let (stiffness, coords) = match grid.dimension() {
            1 => {
                let (a, _) = grid.bounds[0];
                let h = spacing[0];
                let n = grid.n[0];
                let mut s = BandedSym::zeros(n, 1);
                for i in 0..n {
                    s.add(i, i, 2.0 / h);
                    if i + 1 < n {
                        s.add(i + 1, i, -1.0 / h);
                    }
                }
                let coords = (0..n).map(|i| vec![a + (i as f64 + 1.0) * h]).collect();
                (s, coords)
            }
            _ => {
                let (nx, ny) = (grid.n[0], grid.n[1]);
                let (hx, hy) = (spacing[0], spacing[1]);
                let (ax, ay) = (grid.bounds[0].0, grid.bounds[1].0);
                let cx = hy / hx;
                let cy = hx / hy;
                let mut s = BandedSym::zeros(count, nx);
                let mut coords = Vec::with_capacity(count);
                for j in 0..ny {
                    for i in 0..nx {
                        let k = i + nx * j;
                        s.add(k, k, 2.0 * cx + 2.0 * cy);
                        if i + 1 < nx {
                            s.add(k + 1, k, -cx);
                        }
                        if j + 1 < ny {
                            s.add(k + nx, k, -cy);
                        }
                        coords.push(vec![ax + (i as f64 + 1.0) * hx, ay + (j as f64 + 1.0) * hy]);
                    }
                }
                (s, coords)
            }
        };
        let weight: f64 = spacing.iter().product();
        let mass = DVector::from_element(count, weight);
        let factor = stiffness.cholesky()?;
        Ok(Self {
            grid,
            spacing,
            coords,
            stiffness,
            mass,
            factor,
            eigen: OnceLock::new(),
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    /// Number of interior nodes.
    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    pub fn coords(&self) -> &[Vec<f64>] {
        &self.coords
    }

    pub fn stiffness(&self) -> &BandedSym {
        &self.stiffness
    }

    pub fn stiffness_factor(&self) -> &BandedCholesky {
        &self.factor
    }

    /// Diagonal of the lumped mass operator.
    pub fn mass(&self) -> &DVector<f64> {
        &self.mass
    }

    pub fn check(&self, u: &DVector<f64>) -> Result<()> {
        if u.len() != self.len() {
            return Err(Error::ShapeMismatch {
                expected: self.len(),
                got: u.len(),
            });
        }
        Ok(())
    }

    pub fn field_from_fn(&self, f: impl Fn(&[f64]) -> f64) -> Field {
        Field::from_vec(self.coords.iter().map(|x| f(x)).collect())
    }

    pub fn apply_stiffness(&self, u: &DVector<f64>) -> DVector<f64> {
        self.stiffness.mul_vec(u)
    }

    pub fn apply_mass(&self, u: &DVector<f64>) -> DVector<f64> {
        u.component_mul(&self.mass)
    }

    /// Riesz representative `A⁻¹g` of a dual vector.
    pub fn riesz(&self, g: &DVector<f64>) -> DVector<f64> {
        self.factor.solve(g)
    }

    /// `√(gᵀA⁻¹g)`, the norm dual to the H¹₀ norm.
    pub fn dual_norm(&self, g: &DVector<f64>) -> f64 {
        self.factor.forward(g).norm()
    }

    pub(crate) fn a_inner(&self, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        u.dot(&self.stiffness.mul_vec(v))
    }

    pub(crate) fn a_norm(&self, u: &DVector<f64>) -> f64 {
        self.stiffness.quad_form(u).max(0.0).sqrt()
    }

    pub fn h1_inner(&self, u: &Field, v: &Field) -> Result<f64> {
        self.check(u)?;
        self.check(v)?;
        Ok(self.a_inner(u, v))
    }

    pub fn h1_norm(&self, u: &Field) -> Result<f64> {
        self.check(u)?;
        Ok(self.a_norm(u))
    }

    pub fn l2_inner(&self, u: &Field, v: &Field) -> Result<f64> {
        self.check(u)?;
        self.check(v)?;
        Ok(u.component_mul(&self.mass).dot(v))
    }

    /// Discrete Lᵖ norm with nodal quadrature weight `hᵈ`; `p = f64::INFINITY`
    /// gives the max norm.
    pub fn lp_norm(&self, u: &Field, p: f64) -> Result<f64> {
        self.check(u)?;
        if p.is_infinite() {
            return Ok(u.amax());
        }
        if !(p >= 1.0) {
            return Err(Error::InvalidGrid(format!("Lp norm needs p >= 1, got {p}")));
        }
        let s: f64 = u
            .iter()
            .zip(self.mass.iter())
            .map(|(x, w)| w * x.abs().powf(p))
            .sum();
        Ok(s.powf(1.0 / p))
    }

    fn compute_eigen(&self) -> std::result::Result<Vec<Eigenpair>, String> {
        let n = self.len();
        let inv_sqrt_m = self.mass.map(|m| 1.0 / m.sqrt());
        let a = self.stiffness.to_dense();
        let s = DMatrix::from_fn(n, n, |i, j| a[(i, j)] * inv_sqrt_m[i] * inv_sqrt_m[j]);
        let eig =
            SymmetricEigen::try_new(s, 1e-14, 0).ok_or("symmetric eigensolver did not converge")?;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
        let mut pairs = Vec::with_capacity(n);
        for (rank, &i) in order.iter().enumerate() {
            let y = eig.eigenvectors.column(i);
            let mut phi: DVector<f64> = y.component_mul(&inv_sqrt_m);
            let norm = phi.component_mul(&self.mass).dot(&phi).sqrt();
            phi /= norm;
            let flip = if rank == 0 {
                phi.sum() < 0.0
            } else {
                let tol = 1e-8 * phi.amax();
                phi.iter().find(|x| x.abs() > tol).is_some_and(|&x| x < 0.0)
            };
            if flip {
                phi.neg_mut();
            }
            pairs.push(Eigenpair {
                value: eig.eigenvalues[i],
                vector: Field(phi),
            });
        }
        Ok(pairs)
    }

    /// First `k` generalized eigenpairs of `Aφ = λMφ`, ascending, with
    /// `(φ, φ)_{L²} = 1`; `φ₁` is sign-fixed positive.
    pub fn eigenpairs(&self, k: usize) -> Result<Vec<Eigenpair>> {
        let dim = self.len();
        if k == 0 || k > dim {
            return Err(Error::EigenIndex { k, dim });
        }
        match self.eigen.get_or_init(|| self.compute_eigen()) {
            Ok(all) => Ok(all[..k].to_vec()),
            Err(msg) => Err(Error::Eigen(msg.clone())),
        }
    }

    pub fn write_field_csv<W: Write>(&self, u: &Field, mut out: W) -> Result<()> {
        self.check(u)?;
        let header = if self.grid.dimension() == 1 {
            "x,value"
        } else {
            "x,y,value"
        };
        writeln!(out, "{header}")?;
        for (x, v) in self.coords.iter().zip(u.iter()) {
            for c in x {
                write!(out, "{c:e},")?;
            }
            writeln!(out, "{v:e}")?;
        }
        Ok(())
    }

    /// Reads a field written by [`write_field_csv`](Self::write_field_csv);
    /// node coordinates must match the grid.
    pub fn read_field_csv<R: BufRead>(&self, input: R) -> Result<Field> {
        let d = self.grid.dimension();
        let tol = 1e-9 * self.spacing.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut values = Vec::with_capacity(self.len());
        let mut header_seen = false;
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if !header_seen {
                header_seen = true;
                continue;
            }
            let cols: Vec<f64> = line
                .split(',')
                .map(|c| c.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Config(format!("field csv line {}: {e}", lineno + 1)))?;
            if cols.len() != d + 1 {
                return Err(Error::Config(format!(
                    "field csv line {}: expected {} columns",
                    lineno + 1,
                    d + 1
                )));
            }
            let idx = values.len();
            let node = self.coords.get(idx).ok_or(Error::ShapeMismatch {
                expected: self.len(),
                got: idx + 1,
            })?;
            if node.iter().zip(&cols).any(|(a, b)| (a - b).abs() > tol) {
                return Err(Error::Config(format!(
                    "field csv line {}: coordinates do not match grid node {idx}",
                    lineno + 1
                )));
            }
            values.push(cols[d]);
        }
        if values.len() != self.len() {
            return Err(Error::ShapeMismatch {
                expected: self.len(),
                got: values.len(),
            });
        }
        Ok(Field::from_vec(values))
    }
}
