//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use nodal_core::calculus::EnergyProblem;
use nodal_core::cone::Sign;
use nodal_core::potential::Piece;
use nodal_core::{DiscreteSpace, Field, GridSpec, Growth, PiecewisePotential};

pub fn interval_space(n: usize) -> DiscreteSpace {
    DiscreteSpace::new(GridSpec::interval(0.0, 1.0, n)).unwrap()
}

pub fn benchmark(n: usize, lambda: f64) -> EnergyProblem {
    EnergyProblem::new(
        interval_space(n),
        PiecewisePotential::power(4.0).unwrap(),
        lambda,
    )
    .unwrap()
}

pub fn h1(space: &DiscreteSpace, u: &DVector<f64>) -> f64 {
    space
        .h1_norm(&Field::from_vec(u.iter().copied().collect()))
        .unwrap()
}

/// `λ_k = (4/h²) sin²(kπh/2)` for the 1D three-point stencil on (0, 1).
pub fn closed_form_eigenvalue(n: usize, k: usize) -> f64 {
    let h = 1.0 / (n + 1) as f64;
    4.0 / (h * h) * (k as f64 * std::f64::consts::PI * h / 2.0).sin().powi(2)
}

/// Generalized eigenvalues of `(A, M)` from a dense symmetric solve of
/// `M^{-1/2} A M^{-1/2}`, ascending.
pub fn dense_eigenvalues(space: &DiscreteSpace) -> Vec<f64> {
    let a = space.stiffness().to_dense();
    let m = space.mass();
    let n = a.nrows();
    let s = DMatrix::from_fn(n, n, |i, j| a[(i, j)] / (m[i] * m[j]).sqrt());
    let mut v: Vec<f64> = s.symmetric_eigen().eigenvalues.iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Projection onto `sign·P` in the energy norm by enumerating every
/// active set; inverses of the principal blocks are cached.
pub struct ExhaustiveProjector {
    a: DMatrix<f64>,
    blocks: Vec<(Vec<usize>, DMatrix<f64>)>,
}

impl ExhaustiveProjector {
    pub fn new(a: DMatrix<f64>) -> Self {
        let n = a.nrows();
        assert!(n <= 12, "exhaustive projection is exponential in n");
        let blocks = (0..1usize << n)
            .map(|mask| {
                let idx: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
                let sub = DMatrix::from_fn(idx.len(), idx.len(), |r, c| a[(idx[r], idx[c])]);
                let inv = if idx.is_empty() {
                    sub
                } else {
                    sub.try_inverse().unwrap()
                };
                (idx, inv)
            })
            .collect();
        Self { a, blocks }
    }

    /// `(π, dist)` for the cone `sign·P`.
    pub fn project(&self, y: &DVector<f64>, sign: Sign) -> (DVector<f64>, f64) {
        let s = sign.value();
        let y = y * s;
        let ay = &self.a * &y;
        let n = y.len();
        let mut best: Option<(DVector<f64>, f64)> = None;
        for (idx, inv) in &self.blocks {
            let rhs = DVector::from_iterator(idx.len(), idx.iter().map(|&i| ay[i]));
            let vs = inv * rhs;
            if vs.iter().any(|&v| v < -1e-12) {
                continue;
            }
            let mut v = DVector::zeros(n);
            for (k, &i) in idx.iter().enumerate() {
                v[i] = vs[k].max(0.0);
            }
            let r = &v - &y;
            let grad = &self.a * &r;
            let scale = 1e-10 * (1.0 + ay.amax());
            if (0..n).any(|i| !idx.contains(&i) && grad[i] < -scale) {
                continue;
            }
            let d = r.dot(&(&self.a * &r)).max(0.0).sqrt();
            if best.as_ref().is_none_or(|(_, bd)| d < *bd) {
                best = Some((v, d));
            }
        }
        let (v, d) = best.expect("some active set satisfies the optimality conditions");
        (v * s, d)
    }

    pub fn distance(&self, y: &DVector<f64>, sign: Sign) -> f64 {
        self.project(y, sign).1
    }
}

/// `min_{w ∈ box} ‖Au − λMw‖_*` by grid search (21 points per interval)
/// followed by a shrinking pattern search on the same objective.
pub fn slope_grid_oracle(
    space: &DiscreteSpace,
    lambda: f64,
    u: &DVector<f64>,
    lo: &[f64],
    hi: &[f64],
) -> f64 {
    let a = space.stiffness().to_dense();
    let ainv = a.clone().try_inverse().unwrap();
    let m = space.mass();
    let au = &a * u;
    let n = u.len();
    let f = |w: &DVector<f64>| -> f64 {
        let g = DVector::from_fn(n, |i, _| au[i] - lambda * m[i] * w[i]);
        g.dot(&(&ainv * &g)).max(0.0)
    };
    let free: Vec<usize> = (0..n).filter(|&i| lo[i] < hi[i]).collect();
    let mut w = DVector::from_column_slice(lo);
    if free.is_empty() {
        return f(&w).sqrt();
    }
    let steps = 20usize;
    let total = (steps + 1).pow(free.len() as u32);
    let mut best = f64::INFINITY;
    let mut best_w = w.clone();
    for code in 0..total {
        let mut c = code;
        for &i in &free {
            let k = c % (steps + 1);
            c /= steps + 1;
            w[i] = lo[i] + (hi[i] - lo[i]) * k as f64 / steps as f64;
        }
        let v = f(&w);
        if v < best {
            best = v;
            best_w = w.clone();
        }
    }
    let mut w = best_w;
    let mut h: Vec<f64> = free
        .iter()
        .map(|&i| (hi[i] - lo[i]) / steps as f64)
        .collect();
    while h.iter().cloned().fold(0.0, f64::max) > 1e-13 {
        let mut moved = false;
        let patterns = 5usize.pow(free.len() as u32);
        let centre = w.clone();
        for code in 0..patterns {
            let mut c = code;
            let mut cand = centre.clone();
            for (k, &i) in free.iter().enumerate() {
                let off = (c % 5) as f64 - 2.0;
                c /= 5;
                cand[i] = (centre[i] + off * h[k]).clamp(lo[i], hi[i]);
            }
            let v = f(&cand);
            if v < best - 1e-300 {
                best = v;
                w = cand;
                moved = true;
            }
        }
        if !moved {
            h.iter_mut().for_each(|x| *x *= 0.5);
        }
    }
    best.sqrt()
}

/// `m_D(u)` for `D` an intersection of cone neighborhoods, evaluated in
/// the swapped order `sup_d inf_w ⟨Au − λMw, d⟩` over feasible
/// displacements `d = u − y` (`y ∈ D`, `‖d‖ ≤ 1`). The inner infimum is
/// closed-form on the box; the outer supremum is a direction search on the
/// energy-norm sphere with bisection for the feasible radius.
pub struct SaddleOracle<'a> {
    pub projector: &'a ExhaustiveProjector,
    pub a: DMatrix<f64>,
    pub l_inv_t: DMatrix<f64>,
    pub mass: DVector<f64>,
    pub lambda: f64,
    pub u: DVector<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub cones: Vec<(Sign, f64)>,
}

impl<'a> SaddleOracle<'a> {
    pub fn new(
        projector: &'a ExhaustiveProjector,
        space: &DiscreteSpace,
        lambda: f64,
        u: DVector<f64>,
        lo: Vec<f64>,
        hi: Vec<f64>,
        cones: Vec<(Sign, f64)>,
    ) -> Self {
        let a = space.stiffness().to_dense();
        let l = a.clone().cholesky().unwrap().l();
        let l_inv_t = l.transpose().try_inverse().unwrap();
        Self {
            projector,
            a,
            l_inv_t,
            mass: space.mass().clone(),
            lambda,
            u,
            lo,
            hi,
            cones,
        }
    }

    fn feasible(&self, y: &DVector<f64>) -> bool {
        self.cones
            .iter()
            .all(|&(s, mu)| self.projector.distance(y, s) <= mu + 1e-12)
    }

    fn inner(&self, d: &DVector<f64>) -> f64 {
        let au = &self.a * &self.u;
        let mut v = au.dot(d);
        for i in 0..d.len() {
            v -= self.lambda * self.mass[i] * (self.lo[i] * d[i]).max(self.hi[i] * d[i]);
        }
        v
    }

    fn radius(&self, d: &DVector<f64>, iters: usize) -> f64 {
        if self.feasible(&(&self.u - d)) {
            return 1.0;
        }
        let (mut a, mut b) = (0.0, 1.0);
        for _ in 0..iters {
            let mid = 0.5 * (a + b);
            if self.feasible(&(&self.u - d * mid)) {
                a = mid;
            } else {
                b = mid;
            }
        }
        a
    }

    /// Objective at the unit vector `z` (Cholesky coordinates).
    fn value(&self, z: &DVector<f64>, iters: usize) -> f64 {
        let d = &self.l_inv_t * z;
        let phi = self.inner(&d);
        if phi <= 0.0 {
            return 0.0;
        }
        phi * self.radius(&d, iters)
    }

    pub fn evaluate(&self, coarse: usize, rng: &mut impl rand::Rng) -> f64 {
        let n = self.u.len();
        let mut pts: Vec<(f64, DVector<f64>)> = (0..coarse)
            .map(|_| {
                let z =
                    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
                let z = z.normalize();
                (self.value(&z, 20), z)
            })
            .collect();
        pts.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut best: f64 = 0.0;
        for (_, z0) in pts.into_iter().take(10) {
            let mut z = z0;
            let mut v = self.value(&z, 60);
            let mut step = 0.05;
            while step > 1e-9 {
                let mut basis = tangent_basis(&z);
                // random tangent directions get past ridges of the kinked objective
                for _ in 0..4 * n {
                    let mut t = DVector::from_fn(n, |_, _| {
                        rng.sample::<f64, _>(rand_distr::StandardNormal)
                    });
                    t -= &z * z.dot(&t);
                    basis.push(t.normalize());
                }
                let mut improved = false;
                for t in &basis {
                    for sgn in [1.0, -1.0] {
                        let cand = (&z + t * (sgn * step)).normalize();
                        let cv = self.value(&cand, 60);
                        if cv > v {
                            v = cv;
                            z = cand;
                            improved = true;
                        }
                    }
                }
                if !improved {
                    step *= 0.5;
                }
            }
            best = best.max(v);
        }
        best
    }
}

fn tangent_basis(z: &DVector<f64>) -> Vec<DVector<f64>> {
    let n = z.len();
    let mut out: Vec<DVector<f64>> = vec![];
    for k in 0..n {
        let mut e = DVector::zeros(n);
        e[k] = 1.0;
        e -= z * z.dot(&e);
        for b in &out {
            e -= b * b.dot(&e);
        }
        if e.norm() > 1e-6 {
            out.push(e.normalize());
        }
        if out.len() == n - 1 {
            break;
        }
    }
    out
}

/// Potential with a kink at each `breaks[k]` whose one-sided derivatives
/// are `(left[k], right[k])`; derivatives interpolate linearly between
/// breakpoints and stay constant outside.
pub fn kinked_potential(breaks: &[f64], left: &[f64], right: &[f64]) -> PiecewisePotential {
    let nb = breaks.len();
    // (C, α, β) for j = C + α s + β s²/2
    let mut coefs: Vec<(f64, f64, f64)> = Vec::with_capacity(nb + 1);
    coefs.push((0.0, left[0], 0.0));
    for k in 1..nb {
        let beta = (left[k] - right[k - 1]) / (breaks[k] - breaks[k - 1]);
        coefs.push((0.0, right[k - 1] - beta * breaks[k - 1], beta));
    }
    coefs.push((0.0, right[nb - 1], 0.0));
    let eval = |c: (f64, f64, f64), s: f64| c.0 + c.1 * s + 0.5 * c.2 * s * s;
    for k in 1..=nb {
        let b = breaks[k - 1];
        coefs[k].0 += eval(coefs[k - 1], b) - eval(coefs[k], b);
    }
    let zero_piece = breaks.iter().take_while(|&&b| b < 0.0).count();
    let j0 = eval(coefs[zero_piece], 0.0);
    let pieces = coefs
        .iter()
        .map(|c| Piece::polynomial(&[c.0 - j0, c.1, 0.5 * c.2]))
        .collect();
    let growth = Growth {
        a1: 1.0,
        q: 3.0,
        mu: 3.0,
        mu_hat: 1.0,
    };
    PiecewisePotential::new(breaks.to_vec(), pieces, growth).unwrap()
}

/// First positive zero `X0` of `U'' = −U³`, `U(0) = 0`, `U'(0) = 1`, and
/// `∫₀^{X0} U'² dx`, by RK4.
fn unit_shot() -> (f64, f64) {
    let h = 1e-5;
    let f = |y: [f64; 2]| [y[1], -y[0].powi(3)];
    let (mut x, mut y) = (0.0, [0.0, 1.0]);
    let mut kinetic = 0.0;
    loop {
        let k1 = f(y);
        let k2 = f([y[0] + 0.5 * h * k1[0], y[1] + 0.5 * h * k1[1]]);
        let k3 = f([y[0] + 0.5 * h * k2[0], y[1] + 0.5 * h * k2[1]]);
        let k4 = f([y[0] + h * k3[0], y[1] + h * k3[1]]);
        let next = [
            y[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
            y[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        ];
        if x > 0.0 && next[0] <= 0.0 {
            // linear interpolation of the crossing inside the last step
            let frac = y[0] / (y[0] - next[0]);
            kinetic += frac * h * 0.5 * (y[1] * y[1] + next[1] * next[1]);
            return (x + frac * h, kinetic);
        }
        kinetic += h * 0.5 * (y[1] * y[1] + next[1] * next[1]);
        x += h;
        y = next;
    }
}

/// Continuum sign-changing solution of `−u'' = λu³` on (0, 1) with one
/// interior zero (odd reflection of the positive solution on (0, ½)).
pub struct ShootingSolution {
    pub energy: f64,
    /// `max |u|`.
    pub amplitude: f64,
}

pub fn shooting_nodal(lambda: f64) -> ShootingSolution {
    let (x0, kinetic) = unit_shot();
    // u(x) = r U(r x) solves the equation; its first zero X0/r sits at ½
    let r = 2.0 * x0;
    // u'(x) = r² U'(r x), so ∫₀^{½} u'² = r³ ∫₀^{X0} U'²
    let total_kinetic = 2.0 * r.powi(3) * kinetic;
    // on a solution ∫u'² = ∫u⁴, hence J = ¼∫u'²
    let energy_unit = 0.25 * total_kinetic;
    // U'² + U⁴/2 = 1 along the shot, so max U = 2^{1/4}
    let amp_unit = r * 2f64.powf(0.25);
    ShootingSolution {
        energy: energy_unit / lambda,
        amplitude: amp_unit / lambda.sqrt(),
    }
}

/// Damped Newton on `Au = λM u³` with a dense Jacobian.
pub fn damped_newton_cubic(
    space: &DiscreteSpace,
    lambda: f64,
    u0: &DVector<f64>,
) -> Option<DVector<f64>> {
    let a = space.stiffness().to_dense();
    let m = space.mass();
    let ainv = a.clone().try_inverse().unwrap();
    let res = |u: &DVector<f64>| -> DVector<f64> {
        &a * u - u.map(|v| v * v * v).component_mul(m) * lambda
    };
    let dual = |g: &DVector<f64>| g.dot(&(&ainv * g)).max(0.0).sqrt();
    let mut u = u0.clone();
    let mut r = res(&u);
    for _ in 0..200 {
        let nr = dual(&r);
        if nr < 1e-12 {
            return Some(u);
        }
        let jac = &a - DMatrix::from_diagonal(&u.map(|v| 3.0 * v * v).component_mul(m)) * lambda;
        let d = jac.lu().solve(&(-&r))?;
        let mut t = 1.0;
        loop {
            let cand = &u + &d * t;
            let rc = res(&cand);
            if dual(&rc) < (1.0 - 1e-4 * t) * nr {
                u = cand;
                r = rc;
                break;
            }
            t *= 0.5;
            if t < 1e-12 {
                return None;
            }
        }
    }
    None
}

/// Limsup difference-quotient sampler for `j⁰(s; h)`: the largest
/// `(j(y + t h) − j(y))/t` over `y ∈ s ± 1e−6` (401 points) and
/// `t ∈ {1e−8, 1e−9}`.
pub fn dir_derivative_oracle(p: &PiecewisePotential, s: f64, h: f64) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for t in [1e-8, 1e-9] {
        for k in -200..=200 {
            let y = s + 1e-6 * k as f64 / 200.0;
            let q = (p.eval(&[], y + t * h) - p.eval(&[], y)) / t;
            best = best.max(q);
        }
    }
    best
}
