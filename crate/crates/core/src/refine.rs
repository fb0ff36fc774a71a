//! Semismooth Newton refinement of critical-point candidates.
//!
//! Solves `Au = λMw` with `w_i ∈ ∂j(x_i, u_i)`. Nodes far from breakpoints
//! use `u_i` as the unknown. A node close to a breakpoint `β` with a
//! derivative jump uses a parameter `τ` along the graph of the Clarke
//! subdifferential instead: `τ < 0` follows the left piece, `τ ∈ [0, 1]`
//! pins `u_i = β` and sweeps `w_i` across the jump, `τ > 1` follows the
//! right piece. The resulting residual is continuous and piecewise smooth.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::calculus::EnergyProblem;
use crate::error::{Error, Result};
use crate::mesh::Field;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineOptions {
    /// Stop when the dual norm of the residual falls below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Nodes within this distance of a breakpoint are parametrized along
    /// the subdifferential graph.
    pub window: f64,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self {
            tol: 1e-11,
            max_iter: 100,
            window: 0.05,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RefineResult {
    pub u: Field,
    pub selection: Field,
    pub residual: f64,
    pub iterations: usize,
    /// Nodes sitting exactly on a breakpoint at the end.
    pub pinned: usize,
}

#[derive(Debug, Clone, Copy)]
enum NodeVar {
    Value,
    Graph { beta: f64, left: f64, right: f64 },
}

struct State {
    u: DVector<f64>,
    w: DVector<f64>,
    vars: Vec<NodeVar>,
    tau: DVector<f64>,
}

fn graph_point(
    prob: &EnergyProblem,
    x: &[f64],
    beta: f64,
    left: f64,
    right: f64,
    tau: f64,
) -> (f64, f64, f64, f64) {
    // returns (u, w, du/dτ, dw/dτ)
    let p = prob.potential();
    if tau < 0.0 {
        let s = beta + tau;
        (
            s,
            p.one_sided(x, s).0,
            1.0,
            p.second_derivative_side(x, s, -1.0),
        )
    } else if tau <= 1.0 {
        (beta, left + tau * (right - left), 0.0, right - left)
    } else {
        let s = beta + tau - 1.0;
        (
            s,
            p.one_sided(x, s).1,
            1.0,
            p.second_derivative_side(x, s, 1.0),
        )
    }
}

impl State {
    fn new(
        prob: &EnergyProblem,
        u: DVector<f64>,
        w_hint: Option<&DVector<f64>>,
        window: f64,
    ) -> Self {
        let n = u.len();
        let coords = prob.space().coords();
        let p = prob.potential();
        let mut vars = vec![NodeVar::Value; n];
        let mut tau = DVector::zeros(n);
        let mut w = DVector::zeros(n);
        for i in 0..n {
            let x = &coords[i];
            let s = u[i];
            let near = p
                .breakpoints()
                .iter()
                .copied()
                .filter(|b| (s - b).abs() <= window)
                .min_by(|a, b| (s - a).abs().total_cmp(&(s - b).abs()));
            let jump = near.map(|b| {
                let (l, r) = p.one_sided(x, b);
                (b, l, r)
            });
            match jump {
                Some((beta, left, right)) if left != right => {
                    vars[i] = NodeVar::Graph { beta, left, right };
                    tau[i] = if s < beta {
                        s - beta
                    } else if s > beta {
                        1.0 + s - beta
                    } else {
                        let hint = w_hint.map_or(0.5 * (left + right), |h| h[i]);
                        ((hint - left) / (right - left)).clamp(0.0, 1.0)
                    };
                    w[i] = graph_point(prob, x, beta, left, right, tau[i]).1;
                }
                _ => {
                    let (l, r) = p.one_sided(x, s);
                    w[i] = if l == r {
                        l
                    } else {
                        w_hint.map_or(0.5 * (l + r), |h| h[i].clamp(l.min(r), l.max(r)))
                    };
                }
            }
        }
        State { u, w, vars, tau }
    }

    fn residual(&self, prob: &EnergyProblem) -> DVector<f64> {
        let lm = prob.space().mass() * prob.lambda();
        prob.space().apply_stiffness(&self.u) - self.w.component_mul(&lm)
    }

    /// Moves along the Newton direction `d` (in the mixed variables).
    fn moved(&self, prob: &EnergyProblem, d: &DVector<f64>, alpha: f64) -> State {
        let coords = prob.space().coords();
        let p = prob.potential();
        let mut next = State {
            u: self.u.clone(),
            w: self.w.clone(),
            vars: self.vars.clone(),
            tau: self.tau.clone(),
        };
        for i in 0..self.u.len() {
            let x = &coords[i];
            match self.vars[i] {
                NodeVar::Value => {
                    let s = self.u[i] + alpha * d[i];
                    next.u[i] = s;
                    let (l, r) = p.one_sided(x, s);
                    next.w[i] = if l == r { l } else { 0.5 * (l + r) };
                }
                NodeVar::Graph { beta, left, right } => {
                    let t = self.tau[i] + alpha * d[i];
                    let (s, w, _, _) = graph_point(prob, x, beta, left, right, t);
                    next.tau[i] = t;
                    next.u[i] = s;
                    next.w[i] = w;
                }
            }
        }
        next
    }

    fn jacobian(&self, prob: &EnergyProblem) -> DMatrix<f64> {
        let space = prob.space();
        let n = self.u.len();
        let a = space.stiffness();
        let lam = prob.lambda();
        let coords = space.coords();
        let mut jac = DMatrix::zeros(n, n);
        for j in 0..n {
            let (du, dw) = match self.vars[j] {
                NodeVar::Value => (
                    1.0,
                    prob.potential().second_derivative(&coords[j], self.u[j]),
                ),
                NodeVar::Graph { beta, left, right } => {
                    let (_, _, du, dw) =
                        graph_point(prob, &coords[j], beta, left, right, self.tau[j]);
                    (du, dw)
                }
            };
            let lo = j.saturating_sub(a.bandwidth());
            let hi = (j + a.bandwidth()).min(n - 1);
            for i in lo..=hi {
                jac[(i, j)] = a.get(i, j) * du;
            }
            jac[(j, j)] -= lam * space.mass()[j] * dw;
        }
        jac
    }
}

/// Damped semismooth Newton on `Au − λMw(u) = 0`, measured in the dual
/// norm. If the requested window fails, the windows `0`, `0.01` and `0.2`
/// are tried in turn and the first success is returned.
pub fn newton_refine(
    prob: &EnergyProblem,
    u0: &Field,
    opts: RefineOptions,
) -> Result<RefineResult> {
    prob.space().check(u0)?;
    let mut first_err = None;
    for window in [opts.window, 0.0, 0.01, 0.2] {
        match newton_with_window(prob, u0, RefineOptions { window, ..opts }) {
            Ok(r) => return Ok(r),
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    Err(first_err.expect("at least one attempt"))
}

fn newton_with_window(
    prob: &EnergyProblem,
    u0: &Field,
    opts: RefineOptions,
) -> Result<RefineResult> {
    let space = prob.space();
    let mut state = State::new(prob, u0.as_vector().clone(), None, opts.window);
    let mut res = state.residual(prob);
    let mut norm = space.dual_norm(&res);
    let mut iterations = 0;
    while norm > opts.tol && iterations < opts.max_iter {
        iterations += 1;
        let jac = state.jacobian(prob);
        let d = jac.lu().solve(&(-&res)).ok_or_else(|| {
            Error::Refinement(format!("singular Jacobian at iteration {iterations}"))
        })?;
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand = state.moved(prob, &d, alpha);
            let r = cand.residual(prob);
            let nr = space.dual_norm(&r);
            if nr <= (1.0 - 1e-4 * alpha) * norm {
                accepted = Some((cand, r, nr));
                break;
            }
            alpha *= 0.5;
        }
        let Some((cand, r, nr)) = accepted else {
            return Err(Error::Refinement(format!(
                "line search failed at iteration {iterations} with residual {norm:.3e}"
            )));
        };
        // re-derive the node parametrization around the new point
        state = State::new(prob, cand.u, Some(&cand.w), opts.window);
        res = r;
        norm = nr;
    }
    if norm > opts.tol {
        return Err(Error::Refinement(format!(
            "no convergence after {iterations} iterations (residual {norm:.3e})"
        )));
    }
    let pinned = state
        .vars
        .iter()
        .zip(state.tau.iter())
        .filter(|(v, &t)| matches!(v, NodeVar::Graph { .. }) && (0.0..=1.0).contains(&t))
        .count();
    Ok(RefineResult {
        u: state.u.into(),
        selection: state.w.into(),
        residual: norm,
        iterations,
        pinned,
    })
}
