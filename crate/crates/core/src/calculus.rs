//! The energy `J_λ(u) = ½‖u‖² − λ∫j(x,u)`, its subdifferential box, the
//! slope `m(u)` and the slope `m_D(u)` relative to cone neighborhoods.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::cone::{project_cone, Sign};
use crate::error::{Error, Result};
use crate::mesh::{DiscreteSpace, Field};
use crate::potential::{ClarkeInterval, PiecewisePotential};
use crate::qp::{BoxQp, QpOptions};

#[derive(Debug)]
pub struct EnergyProblem {
    space: DiscreteSpace,
    potential: PiecewisePotential,
    lambda: f64,
}

/// Per-node subdifferential `{Au − λMw : lo ≤ w ≤ hi}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubdifferentialBox {
    pub base: Field,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub lambda: f64,
    pub weights: Vec<f64>,
}

impl SubdifferentialBox {
    pub fn is_singleton(&self) -> bool {
        self.lo.iter().zip(&self.hi).all(|(a, b)| a == b)
    }

    pub fn contains(&self, w: &[f64]) -> bool {
        w.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(x, (a, b))| x >= a && x <= b)
    }

    /// The dual vector `Au − λMw`.
    pub fn element(&self, w: &[f64]) -> DVector<f64> {
        DVector::from_fn(self.base.len(), |i, _| {
            self.base[i] - self.lambda * self.weights[i] * w[i]
        })
    }

    /// `max{⟨x*, d⟩ : x* in the box}`.
    pub fn support(&self, d: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..d.len() {
            let iv = ClarkeInterval {
                lo: self.lo[i],
                hi: self.hi[i],
            };
            s += self.base[i] * d[i] + self.lambda * self.weights[i] * iv.support(-d[i]);
        }
        s
    }

    fn lowest_norm_start(&self) -> DVector<f64> {
        DVector::from_fn(self.base.len(), |i, _| {
            (self.base[i] / (self.lambda * self.weights[i])).clamp(self.lo[i], self.hi[i])
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlopeResult {
    pub value: f64,
    pub selection: Field,
    pub certificate: Field,
    pub riesz: Field,
    pub iterations: usize,
    pub qp_residual: f64,
}

/// Closed convex sets `D` for the relative slope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "mu", rename_all = "snake_case")]
pub enum ConstraintSet {
    Whole,
    Positive(f64),
    Negative(f64),
    Intersection(f64),
}

impl ConstraintSet {
    fn cones(&self) -> Vec<(Sign, f64)> {
        match *self {
            ConstraintSet::Whole => vec![],
            ConstraintSet::Positive(mu) => vec![(Sign::Positive, mu)],
            ConstraintSet::Negative(mu) => vec![(Sign::Negative, mu)],
            ConstraintSet::Intersection(mu) => vec![(Sign::Positive, mu), (Sign::Negative, mu)],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SetSlopeResult {
    pub value: f64,
    pub selection: Field,
    /// Dual multipliers `q_k` (one per cone) of the support-function split.
    pub multipliers: Vec<Field>,
    pub solver_iterations: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormalConeCriterion {
    /// `min ‖x* + n‖_*` over `x*` in the box and `n` in the normal cone.
    pub value: f64,
    pub selection: Field,
    /// Normal-cone coefficients `s_k ≥ 0`, one per active cone.
    pub coefficients: Vec<f64>,
    pub active: Vec<Sign>,
}

const MEMBERSHIP_TOL: f64 = 1e-8;

impl EnergyProblem {
    pub fn new(space: DiscreteSpace, potential: PiecewisePotential, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!(
                "lambda must be positive, got {lambda}"
            )));
        }
        Ok(Self {
            space,
            potential,
            lambda,
        })
    }

    pub fn space(&self) -> &DiscreteSpace {
        &self.space
    }

    pub fn potential(&self) -> &PiecewisePotential {
        &self.potential
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub(crate) fn potential_integral(&self, u: &DVector<f64>) -> f64 {
        let m = self.space.mass();
        self.space
            .coords()
            .iter()
            .zip(u.iter())
            .zip(m.iter())
            .map(|((x, &s), &w)| w * self.potential.eval(x, s))
            .sum()
    }

    pub(crate) fn energy_vec(&self, u: &DVector<f64>) -> f64 {
        0.5 * self.space.stiffness().quad_form(u) - self.lambda * self.potential_integral(u)
    }

    pub fn energy(&self, u: &Field) -> Result<f64> {
        self.space.check(u)?;
        Ok(self.energy_vec(u))
    }

    pub fn subdifferential_box(&self, u: &Field) -> Result<SubdifferentialBox> {
        self.space.check(u)?;
        let (lo, hi): (Vec<f64>, Vec<f64>) = self
            .space
            .coords()
            .iter()
            .zip(u.iter())
            .map(|(x, &s)| {
                let iv = self.potential.clarke_interval(x, s);
                (iv.lo, iv.hi)
            })
            .unzip();
        Ok(SubdifferentialBox {
            base: self.space.apply_stiffness(u).into(),
            lo,
            hi,
            lambda: self.lambda,
            weights: self.space.mass().iter().copied().collect(),
        })
    }

    fn slope_result(
        &self,
        w: DVector<f64>,
        b: &SubdifferentialBox,
        iterations: usize,
        qp_residual: f64,
    ) -> SlopeResult {
        let g = b.element(w.as_slice());
        let v = self.space.riesz(&g);
        SlopeResult {
            value: self.space.dual_norm(&g),
            selection: w.into(),
            certificate: g.into(),
            riesz: v.into(),
            iterations,
            qp_residual,
        }
    }

    /// `m(u) = min{‖x*‖_* : x* ∈ ∂J_λ(u)}` as a box QP over selections.
    pub fn slope(&self, u: &Field) -> Result<SlopeResult> {
        let b = self.subdifferential_box(u)?;
        if b.is_singleton() {
            let w = DVector::from_column_slice(&b.lo);
            return Ok(self.slope_result(w, &b, 0, 0.0));
        }
        let lm = self.space.mass() * self.lambda;
        let hess = |w: &DVector<f64>| -> DVector<f64> {
            let z = w.component_mul(&lm);
            self.space.riesz(&z).component_mul(&lm)
        };
        let qp = BoxQp {
            hessian: &hess,
            linear: -u.as_vector().component_mul(&lm),
            lo: DVector::from_column_slice(&b.lo),
            hi: DVector::from_column_slice(&b.hi),
        };
        let sol = qp.solve(Some(&b.lowest_norm_start()), QpOptions::default())?;
        Ok(self.slope_result(sol.x, &b, sol.iterations, sol.residual))
    }

    fn check_membership(&self, u: &Field, set: ConstraintSet) -> Result<Vec<(Sign, f64, Field)>> {
        let mut out = Vec::new();
        for (sign, mu) in set.cones() {
            if !(mu > 0.0) {
                return Err(Error::SetSlope(format!(
                    "cone neighborhood radius must be positive, got {mu}"
                )));
            }
            let p = project_cone(&self.space, u, sign)?;
            if p.distance > mu + MEMBERSHIP_TOL {
                return Err(Error::OutsideSet {
                    distance: p.distance,
                    radius: mu,
                });
            }
            out.push((sign, mu, p.residual));
        }
        Ok(out)
    }

    /// `m_D(u) = inf_{x*} sup{⟨x*, u − y⟩ : y ∈ D, ‖u − y‖ < 1}`.
    ///
    /// With `D = sign·P + μB` the inner supremum has the closed dual form
    /// `min_q qᵀu + μ‖q‖_* + ‖x* − q‖_*` over `q` in the polar sign cone,
    /// so the whole inf-sup is one second-order cone program in `(w, q)`.
    pub fn slope_on_set(&self, u: &Field, set: ConstraintSet) -> Result<SetSlopeResult> {
        let cones = self.check_membership(u, set)?;
        if cones.is_empty() {
            let s = self.slope(u)?;
            return Ok(SetSlopeResult {
                value: s.value,
                selection: s.selection,
                multipliers: vec![],
                solver_iterations: 0,
            });
        }
        let b = self.subdifferential_box(u)?;
        let n = self.space.len();
        let free: Vec<usize> = (0..n).filter(|&i| b.lo[i] < b.hi[i]).collect();
        let nf = free.len();
        let nc = cones.len();
        // variable layout: w_F | per cone (q_k, t_k, y_k) | t0 | y0
        let cone_off = |k: usize| nf + k * (2 * n + 1);
        let t0 = nf + nc * (2 * n + 1);
        let y0 = t0 + 1;
        let nvar = y0 + n;

        let mut obj = vec![0.0; nvar];
        for (k, (_, mu, _)) in cones.iter().enumerate() {
            let qo = cone_off(k);
            for i in 0..n {
                obj[qo + i] = u[i];
            }
            obj[qo + n] = *mu;
        }
        obj[t0] = 1.0;

        let (mut ri, mut ci, mut vv) = (Vec::new(), Vec::new(), Vec::new());
        let mut rhs = Vec::new();
        let mut cone_spec = Vec::new();
        let mut row = 0usize;
        let lower = self.space.stiffness_factor().lower_triplets();
        let lam_m: Vec<f64> = self.space.mass().iter().map(|m| self.lambda * m).collect();

        // L y0 + λM w_F + Σ q_k = Au − λM w_fixed
        for &(i, j, v) in &lower {
            ri.push(row + i);
            ci.push(y0 + j);
            vv.push(v);
        }
        for (a, &i) in free.iter().enumerate() {
            ri.push(row + i);
            ci.push(a);
            vv.push(lam_m[i]);
        }
        for k in 0..nc {
            for i in 0..n {
                ri.push(row + i);
                ci.push(cone_off(k) + i);
                vv.push(1.0);
            }
        }
        for i in 0..n {
            let fixed = if b.lo[i] < b.hi[i] {
                0.0
            } else {
                lam_m[i] * b.lo[i]
            };
            rhs.push(b.base[i] - fixed);
        }
        row += n;
        // L y_k − q_k = 0
        for k in 0..nc {
            let qo = cone_off(k);
            for &(i, j, v) in &lower {
                ri.push(row + i);
                ci.push(qo + n + 1 + j);
                vv.push(v);
            }
            for i in 0..n {
                ri.push(row + i);
                ci.push(qo + i);
                vv.push(-1.0);
                rhs.push(0.0);
            }
            row += n;
        }
        cone_spec.push(SupportedConeT::ZeroConeT(row));

        // sign constraints and box bounds
        let mut nonneg = 0;
        for (k, (sign, _, _)) in cones.iter().enumerate() {
            let qo = cone_off(k);
            let s = match sign {
                Sign::Positive => -1.0,
                Sign::Negative => 1.0,
            };
            for i in 0..n {
                ri.push(row);
                ci.push(qo + i);
                vv.push(s);
                rhs.push(0.0);
                row += 1;
                nonneg += 1;
            }
        }
        for (a, &i) in free.iter().enumerate() {
            if b.hi[i].is_finite() {
                ri.push(row);
                ci.push(a);
                vv.push(1.0);
                rhs.push(b.hi[i]);
                row += 1;
                nonneg += 1;
            }
            if b.lo[i].is_finite() {
                ri.push(row);
                ci.push(a);
                vv.push(-1.0);
                rhs.push(-b.lo[i]);
                row += 1;
                nonneg += 1;
            }
        }
        cone_spec.push(SupportedConeT::NonnegativeConeT(nonneg));

        // (t_k, y_k) and (t0, y0) in second-order cones
        let mut soc = |first: usize, y: usize, row: &mut usize| {
            ri.push(*row);
            ci.push(first);
            vv.push(-1.0);
            rhs.push(0.0);
            for i in 0..n {
                ri.push(*row + 1 + i);
                ci.push(y + i);
                vv.push(-1.0);
                rhs.push(0.0);
            }
            *row += n + 1;
            cone_spec.push(SupportedConeT::SecondOrderConeT(n + 1));
        };
        for k in 0..nc {
            let qo = cone_off(k);
            soc(qo + n, qo + n + 1, &mut row);
        }
        soc(t0, y0, &mut row);

        let a = CscMatrix::new_from_triplets(row, nvar, ri, ci, vv);
        let p = CscMatrix::zeros((nvar, nvar));
        // interior-point runs at the tightest tolerances can stall on
        // degenerate boxes; loosen step by step before giving up
        let mut solved = None;
        let mut last = SolverStatus::Unsolved;
        for tol in [1e-11f64, 1e-9, 1e-7] {
            let settings = DefaultSettingsBuilder::default()
                .verbose(false)
                .max_iter(400)
                .tol_gap_abs(tol)
                .tol_gap_rel(tol)
                .tol_feas(tol)
                .tol_ktratio(100.0 * tol)
                .presolve_enable(false)
                .build()
                .map_err(|e| Error::SetSlope(format!("solver settings: {e:?}")))?;
            let mut solver = DefaultSolver::new(&p, &obj, &a, &rhs, &cone_spec, settings)
                .map_err(|e| Error::SetSlope(format!("solver setup: {e:?}")))?;
            solver.solve();
            last = solver.solution.status;
            if matches!(last, SolverStatus::Solved | SolverStatus::AlmostSolved) {
                solved = Some(solver);
                break;
            }
        }
        let Some(solver) = solved else {
            return Err(Error::SetSlope(format!(
                "second-order cone solve ended with {last:?}"
            )));
        };
        let x = &solver.solution.x;
        let mut w = DVector::from_column_slice(&b.lo);
        for (a, &i) in free.iter().enumerate() {
            w[i] = x[a].clamp(b.lo[i], b.hi[i]);
        }
        let multipliers: Vec<Field> = (0..nc)
            .map(|k| Field::from_vec(x[cone_off(k)..cone_off(k) + n].to_vec()))
            .collect();
        // evaluate the dual objective at the recovered point exactly
        let g = b.element(w.as_slice());
        let mut qsum = DVector::zeros(n);
        let mut value = 0.0;
        for (k, (sign, mu, _)) in cones.iter().enumerate() {
            let mut q = multipliers[k].as_vector().clone();
            for v in q.iter_mut() {
                *v = match sign {
                    Sign::Positive => v.max(0.0),
                    Sign::Negative => v.min(0.0),
                };
            }
            value += q.dot(u.as_vector()) + mu * self.space.dual_norm(&q);
            qsum += q;
        }
        value += self.space.dual_norm(&(g - qsum));
        Ok(SetSlopeResult {
            value: value.max(0.0),
            selection: w.into(),
            multipliers,
            solver_iterations: solver.info.iterations,
        })
    }

    /// Distance from `−∂J_λ(u)` to the normal cone of `D` at `u`:
    /// `min ‖Au − λMw + Σ s_k A T_k‖_*` over box selections `w` and
    /// `s_k ≥ 0`, where `T_k = u − π_k(u)` for every cone whose boundary
    /// contains `u`. Zero exactly at constrained critical points.
    pub fn normal_cone_criterion(
        &self,
        u: &Field,
        set: ConstraintSet,
    ) -> Result<NormalConeCriterion> {
        let cones = self.check_membership(u, set)?;
        let active: Vec<(Sign, Field)> = cones
            .into_iter()
            .filter(|(_, mu, t)| self.space.a_norm(t) >= mu - 1e-7)
            .map(|(s, _, t)| (s, t))
            .collect();
        let b = self.subdifferential_box(u)?;
        let n = self.space.len();
        let k = active.len();
        let lm = self.space.mass() * self.lambda;
        let a_t: Vec<DVector<f64>> = active
            .iter()
            .map(|(_, t)| self.space.apply_stiffness(t))
            .collect();
        // x = (w, s); B x = −λMw + Σ s_k A T_k
        let apply_b = |x: &DVector<f64>| -> DVector<f64> {
            let mut y = -x.rows(0, n).component_mul(&lm);
            for (j, at) in a_t.iter().enumerate() {
                y.axpy(x[n + j], at, 1.0);
            }
            y
        };
        let apply_bt = |r: &DVector<f64>| -> DVector<f64> {
            let mut out = DVector::zeros(n + k);
            out.rows_mut(0, n).copy_from(&(-r.component_mul(&lm)));
            for (j, at) in a_t.iter().enumerate() {
                out[n + j] = at.dot(r);
            }
            out
        };
        let hess = |x: &DVector<f64>| apply_bt(&self.space.riesz(&apply_b(x)));
        let mut lo = DVector::from_element(n + k, 0.0);
        let mut hi = DVector::from_element(n + k, f64::INFINITY);
        for i in 0..n {
            lo[i] = b.lo[i];
            hi[i] = b.hi[i];
        }
        let mut start = DVector::zeros(n + k);
        start.rows_mut(0, n).copy_from(&b.lowest_norm_start());
        let qp = BoxQp {
            hessian: &hess,
            linear: apply_bt(u.as_vector()),
            lo,
            hi,
        };
        let sol = qp.solve(Some(&start), QpOptions::default())?;
        let resid = b.base.as_vector() + apply_b(&sol.x);
        Ok(NormalConeCriterion {
            value: self.space.dual_norm(&resid),
            selection: sol.x.rows(0, n).into_owned().into(),
            coefficients: sol.x.rows(n, k).iter().copied().collect(),
            active: active.iter().map(|(s, _)| *s).collect(),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PsSample {
    pub u: Field,
    pub energy: f64,
    pub slope: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PsOptions {
    /// Maximum number of trailing samples examined.
    pub window: usize,
    /// Trailing samples with `(1+‖u‖)m` at most this form the tail; when the
    /// last sample exceeds it, the last `window` samples are used.
    pub tail_slope: f64,
    pub slope_tol: f64,
    pub energy_tol: f64,
    pub cauchy_tol: f64,
}

impl Default for PsOptions {
    fn default() -> Self {
        Self {
            window: 20,
            tail_slope: 1e-4,
            slope_tol: 1e-6,
            energy_tol: 1e-8,
            cauchy_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PsReport {
    pub passed: bool,
    pub samples: usize,
    /// Samples in the examined tail.
    pub tail_len: usize,
    /// `(1+‖u_n‖)·m_n` at the last sample.
    pub final_scaled_slope: f64,
    pub slope_converged: bool,
    /// Least-squares trend of `log((1+‖u_n‖)m_n)` over the window; negative
    /// means decreasing.
    pub slope_trend: f64,
    pub energy_limit: f64,
    pub energy_spread: f64,
    pub energy_stable: bool,
    /// `max ‖u_i − u_last‖ / (1+‖u_last‖)` over the window.
    pub cauchy_spread: f64,
    pub cauchy: bool,
    /// Smallest `(1+‖u‖)m(u)` over the whole history, an empirical lower
    /// slope bound away from critical points.
    pub slope_floor: f64,
}

/// Checks the tail of a history for the Palais–Smale pattern: scaled slope
/// below tolerance, stabilized energy and a Cauchy tail.
pub fn ps_monitor(
    space: &DiscreteSpace,
    history: &[PsSample],
    opts: PsOptions,
) -> Result<PsReport> {
    if history.is_empty() {
        return Err(Error::Config("PS monitor needs a nonempty history".into()));
    }
    for h in history {
        space.check(&h.u)?;
    }
    let scaled: Vec<f64> = history
        .iter()
        .map(|h| (1.0 + space.a_norm(&h.u)) * h.slope)
        .collect();
    let floor = history.len().saturating_sub(opts.window.max(1));
    let small = scaled
        .iter()
        .rev()
        .take_while(|&&s| s <= opts.tail_slope)
        .count();
    let start = if small == 0 {
        floor
    } else {
        (history.len() - small).max(floor)
    };
    let tail = &history[start..];
    let tail_scaled = &scaled[start..];
    let last = tail.last().unwrap();
    let final_scaled_slope = *tail_scaled.last().unwrap();

    let logs: Vec<f64> = tail_scaled.iter().map(|s| s.max(1e-300).ln()).collect();
    let nt = logs.len() as f64;
    let slope_trend = if logs.len() < 2 {
        0.0
    } else {
        let xm = (nt - 1.0) / 2.0;
        let ym = logs.iter().sum::<f64>() / nt;
        let (mut sxy, mut sxx) = (0.0, 0.0);
        for (i, y) in logs.iter().enumerate() {
            let dx = i as f64 - xm;
            sxy += dx * (y - ym);
            sxx += dx * dx;
        }
        sxy / sxx
    };

    let (emin, emax) = tail
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), h| {
            (a.min(h.energy), b.max(h.energy))
        });
    let energy_spread = emax - emin;
    let energy_stable = energy_spread <= opts.energy_tol * (1.0 + last.energy.abs());

    let norm_last = space.a_norm(&last.u);
    let cauchy_spread = tail
        .iter()
        .map(|h| space.a_norm(&(h.u.as_vector() - last.u.as_vector())))
        .fold(0.0, f64::max)
        / (1.0 + norm_last);
    let cauchy = cauchy_spread <= opts.cauchy_tol;
    let slope_converged = final_scaled_slope <= opts.slope_tol;

    Ok(PsReport {
        passed: slope_converged && energy_stable && cauchy,
        samples: history.len(),
        tail_len: tail.len(),
        final_scaled_slope,
        slope_converged,
        slope_trend,
        energy_limit: last.energy,
        energy_spread,
        energy_stable,
        cauchy_spread,
        cauchy,
        slope_floor: scaled.iter().copied().fold(f64::INFINITY, f64::min),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::GridSpec;

    fn problem(n: usize, pot: PiecewisePotential, lambda: f64) -> EnergyProblem {
        EnergyProblem::new(
            DiscreteSpace::new(GridSpec::interval(0.0, 1.0, n)).unwrap(),
            pot,
            lambda,
        )
        .unwrap()
    }

    #[test]
    fn energy_of_spike() {
        let p = problem(3, PiecewisePotential::power(4.0).unwrap(), 1.0);
        assert_eq!(p.energy(&Field::zeros(3)).unwrap(), 0.0);
        let u = Field::from_vec(vec![0.0, 1.0, 0.0]);
        // ½·(2/h) − h/4 with h = 1/4
        assert!((p.energy(&u).unwrap() - (4.0 - 0.0625)).abs() < 1e-14);
        let t = 1.7;
        let scaled = p.energy(&u.scale(t)).unwrap();
        assert!((scaled - (t * t * 4.0 - t.powi(4) * 0.0625)).abs() < 1e-12);
    }

    #[test]
    fn boxes_of_smooth_and_kinked_potentials() {
        let p = problem(5, PiecewisePotential::power(4.0).unwrap(), 1.0);
        assert!(p
            .subdifferential_box(&Field::from_vec(vec![0.3, -1.0, 2.0, 0.0, 0.1]))
            .unwrap()
            .is_singleton());
        let a = problem(5, PiecewisePotential::abs(), 1.0);
        let b = a.subdifferential_box(&Field::zeros(5)).unwrap();
        assert!(b.lo.iter().all(|&x| x == -1.0) && b.hi.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn slope_at_zero_with_abs_is_zero() {
        let p = problem(7, PiecewisePotential::abs(), 0.1);
        let s = p.slope(&Field::zeros(7)).unwrap();
        assert!(s.value < 1e-12);
    }

    #[test]
    fn smooth_slope_is_dual_norm_of_gradient() {
        let p = problem(9, PiecewisePotential::power(4.0).unwrap(), 2.0);
        let u = p.space().field_from_fn(|x| 3.0 * (x[0] * 7.0).sin());
        let s = p.slope(&u).unwrap();
        let g = p.space().apply_stiffness(&u) - p.space().apply_mass(&u.map(|v| v.powi(3))) * 2.0;
        assert!((s.value - p.space().dual_norm(&g)).abs() < 1e-12);
        assert_eq!(s.iterations, 0);
    }

    #[test]
    fn whole_space_slope_on_set_reduces_to_slope() {
        let p = problem(6, PiecewisePotential::abs(), 3.0);
        let u = Field::from_vec(vec![0.0, 0.2, 0.0, -0.4, 0.0, 0.1]);
        let m = p.slope(&u).unwrap().value;
        let md = p.slope_on_set(&u, ConstraintSet::Whole).unwrap().value;
        assert_eq!(m, md);
    }

    #[test]
    fn deep_interior_relative_slope_equals_slope() {
        let p = problem(7, PiecewisePotential::two_slope(1.0, 2.0).unwrap(), 1.0);
        let phi = p.space().eigenpairs(1).unwrap().remove(0).vector;
        // every node of 5φ₁ exceeds the sup-norm of any unit-energy field, so
        // the whole unit ball around it is nonnegative
        let u = phi.scale(5.0);
        let m = p.slope(&u).unwrap().value;
        let md = p
            .slope_on_set(&u, ConstraintSet::Positive(0.5))
            .unwrap()
            .value;
        assert!((md - m).abs() <= 1e-7 * (1.0 + m), "{md} vs {m}");
    }

    #[test]
    fn ps_monitor_patterns() {
        let p = problem(9, PiecewisePotential::power(4.0).unwrap(), 1.0);
        let zero = PsSample {
            u: Field::zeros(9),
            energy: 0.0,
            slope: 0.0,
        };
        let r = ps_monitor(p.space(), &vec![zero; 5], PsOptions::default()).unwrap();
        assert!(r.passed);
        let phi = p.space().eigenpairs(1).unwrap().remove(0).vector;
        let diverging: Vec<PsSample> = (1..30)
            .map(|n| PsSample {
                u: phi.scale(n as f64),
                energy: -(n as f64),
                slope: 1.0,
            })
            .collect();
        let r = ps_monitor(p.space(), &diverging, PsOptions::default()).unwrap();
        assert!(!r.passed && !r.cauchy && !r.slope_converged);
    }
}
