//! Piecewise-smooth integrands `j(x, s)` and their Clarke subdifferentials.
//!
//! A potential is a sorted list of breakpoints in `s` plus one smooth piece
//! per interval. Each piece is a finite sum of signed power terms
//! `c·|s|^e` or `c·|s|^e·sgn(s)`, which covers polynomials and the `|s|^q/q`
//! family with closed-form first and second derivatives. Away from
//! breakpoints the Clarke subdifferential is a single derivative value; at a
//! breakpoint it is the interval between the two one-sided derivatives.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `coef · |s|^exponent`, times `sgn(s)` when `odd`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub coef: f64,
    pub exponent: f64,
    pub odd: bool,
}

impl Term {
    pub fn monomial(coef: f64, degree: u32) -> Self {
        Term {
            coef,
            exponent: degree as f64,
            odd: degree % 2 == 1,
        }
    }

    fn abs_pow(s: f64, e: f64) -> f64 {
        if e == 0.0 {
            1.0
        } else if s == 0.0 {
            if e > 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            s.abs().powf(e)
        }
    }

    fn sgn(s: f64) -> f64 {
        if s > 0.0 {
            1.0
        } else if s < 0.0 {
            -1.0
        } else {
            0.0
        }
    }

    pub fn value(&self, s: f64) -> f64 {
        let p = self.coef * Self::abs_pow(s, self.exponent);
        if self.odd {
            p * Self::sgn(s)
        } else {
            p
        }
    }

    pub fn derivative(&self, s: f64) -> f64 {
        let e = self.exponent;
        if e == 0.0 {
            return 0.0;
        }
        if self.odd && e == 1.0 {
            return self.coef;
        }
        let p = self.coef * e * Self::abs_pow(s, e - 1.0);
        if self.odd {
            p
        } else {
            p * Self::sgn(s)
        }
    }

    pub fn second_derivative(&self, s: f64) -> f64 {
        let e = self.exponent;
        if e == 0.0 || e == 1.0 {
            return 0.0;
        }
        if !self.odd && e == 2.0 {
            return 2.0 * self.coef;
        }
        let p = self.coef * e * (e - 1.0) * Self::abs_pow(s, e - 2.0);
        if self.odd {
            p * Self::sgn(s)
        } else {
            p
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub terms: Vec<Term>,
}

impl Piece {
    pub fn polynomial(coefs: &[f64]) -> Self {
        Piece {
            terms: coefs
                .iter()
                .enumerate()
                .filter(|(_, &c)| c != 0.0)
                .map(|(k, &c)| Term::monomial(c, k as u32))
                .collect(),
        }
    }

    pub fn value(&self, s: f64) -> f64 {
        self.terms.iter().map(|t| t.value(s)).sum()
    }

    pub fn derivative(&self, s: f64) -> f64 {
        self.terms.iter().map(|t| t.derivative(s)).sum()
    }

    pub fn second_derivative(&self, s: f64) -> f64 {
        self.terms.iter().map(|t| t.second_derivative(s)).sum()
    }
}

/// Positive multiplicative coefficient `c(x) = base + slope·x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub base: f64,
    #[serde(default)]
    pub slope: Vec<f64>,
}

impl Coefficient {
    pub fn at(&self, x: &[f64]) -> f64 {
        self.base + self.slope.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
    }
}

/// Declared growth data: `|ξ| ≤ a1(1 + |s|^{q-1})` and the superlinearity
/// exponent `mu`; `mu_hat` multiplies `inf ∂j(z)·z` in the superlinearity
/// quotient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Growth {
    pub a1: f64,
    pub q: f64,
    pub mu: f64,
    #[serde(default = "one")]
    pub mu_hat: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClarkeInterval {
    pub lo: f64,
    pub hi: f64,
}

impl ClarkeInterval {
    pub fn point(v: f64) -> Self {
        ClarkeInterval { lo: v, hi: v }
    }

    pub fn between(a: f64, b: f64) -> Self {
        ClarkeInterval {
            lo: a.min(b),
            hi: a.max(b),
        }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn is_degenerate(&self) -> bool {
        self.hi == self.lo
    }

    pub fn contains(&self, v: f64, tol: f64) -> bool {
        v >= self.lo - tol && v <= self.hi + tol
    }

    /// Support function `max{ξh : ξ ∈ [lo, hi]}`.
    pub fn support(&self, h: f64) -> f64 {
        (self.lo * h).max(self.hi * h)
    }

    pub fn scaled(&self, c: f64) -> Self {
        ClarkeInterval::between(self.lo * c, self.hi * c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewisePotential {
    breakpoints: Vec<f64>,
    pieces: Vec<Piece>,
    growth: Growth,
    coefficient: Option<Coefficient>,
    label: String,
}

impl PiecewisePotential {
    pub fn new(breakpoints: Vec<f64>, pieces: Vec<Piece>, growth: Growth) -> Result<Self> {
        if pieces.len() != breakpoints.len() + 1 {
            return Err(Error::Potential(format!(
                "{} breakpoints need {} pieces, got {}",
                breakpoints.len(),
                breakpoints.len() + 1,
                pieces.len()
            )));
        }
        if breakpoints.windows(2).any(|w| !(w[0] < w[1]))
            || breakpoints.iter().any(|b| !b.is_finite())
        {
            return Err(Error::Potential(
                "breakpoints must be finite and strictly increasing".into(),
            ));
        }
        for (k, &b) in breakpoints.iter().enumerate() {
            let left = pieces[k].value(b);
            let right = pieces[k + 1].value(b);
            if (left - right).abs() > 1e-9 * (1.0 + left.abs()) {
                return Err(Error::Potential(format!(
                    "discontinuous at breakpoint {b}: {left} vs {right}"
                )));
            }
        }
        let p = Self {
            breakpoints,
            pieces,
            growth,
            coefficient: None,
            label: "table".into(),
        };
        let j0 = p.value_unscaled(0.0);
        if j0.abs() > 1e-12 {
            return Err(Error::Potential(format!("j(0) must vanish, got {j0}")));
        }
        Ok(p)
    }

    /// `|s|^q / q`.
    pub fn power(q: f64) -> Result<Self> {
        if !(q > 1.0) {
            return Err(Error::Potential(format!(
                "power potential needs q > 1, got {q}"
            )));
        }
        let piece = Piece {
            terms: vec![Term {
                coef: 1.0 / q,
                exponent: q,
                odd: false,
            }],
        };
        let mut p = Self::new(
            vec![],
            vec![piece],
            Growth {
                a1: 1.0,
                q,
                mu: q,
                mu_hat: 1.0,
            },
        )?;
        p.label = format!("power:{q}");
        Ok(p)
    }

    /// `|s|`, kinked at zero.
    pub fn abs() -> Self {
        let mut p = Self::new(
            vec![0.0],
            vec![
                Piece::polynomial(&[0.0, -1.0]),
                Piece::polynomial(&[0.0, 1.0]),
            ],
            Growth {
                a1: 1.0,
                q: 3.0,
                mu: 1.0,
                mu_hat: 1.0,
            },
        )
        .expect("abs potential is well formed");
        p.label = "abs".into();
        p
    }

    /// Quartic with derivative jump at `|s| = 1`: `a·s⁴/4` inside,
    /// `b·s⁴/4 + (a − b)/4` outside.
    pub fn two_slope(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0) {
            return Err(Error::Potential(format!(
                "two_slope needs a, b > 0, got {a}, {b}"
            )));
        }
        let outer = Piece::polynomial(&[(a - b) / 4.0, 0.0, 0.0, 0.0, b / 4.0]);
        let inner = Piece::polynomial(&[0.0, 0.0, 0.0, 0.0, a / 4.0]);
        let mut p = Self::new(
            vec![-1.0, 1.0],
            vec![outer.clone(), inner, outer],
            Growth {
                a1: a.max(b),
                q: 4.0,
                mu: 4.0,
                mu_hat: 1.0,
            },
        )?;
        p.label = format!("two_slope:{a},{b}");
        Ok(p)
    }

    /// `|s|^q/q` for `|s| ≤ cap`, continued linearly (C¹) beyond.
    pub fn capped_power(q: f64, cap: f64) -> Result<Self> {
        if !(q > 1.0 && cap > 0.0) {
            return Err(Error::Potential(format!(
                "capped_power needs q > 1, cap > 0, got {q}, {cap}"
            )));
        }
        let slope = cap.powf(q - 1.0);
        let offset = cap.powf(q) / q - slope * cap;
        let outer = Piece {
            terms: vec![
                Term {
                    coef: offset,
                    exponent: 0.0,
                    odd: false,
                },
                Term {
                    coef: slope,
                    exponent: 1.0,
                    odd: false,
                },
            ],
        };
        let inner = Piece {
            terms: vec![Term {
                coef: 1.0 / q,
                exponent: q,
                odd: false,
            }],
        };
        let mut p = Self::new(
            vec![-cap, cap],
            vec![outer.clone(), inner, outer],
            Growth {
                a1: 1.0 + slope,
                q,
                mu: q,
                mu_hat: 1.0,
            },
        )?;
        p.label = format!("capped_power:{q},{cap}");
        Ok(p)
    }

    /// Parses `power:q`, `abs`, `two_slope:a,b` or `capped_power:q,cap`.
    pub fn builtin(spec: &str) -> Result<Self> {
        let (name, args) = spec.split_once(':').unwrap_or((spec, ""));
        let nums: Vec<f64> = if args.trim().is_empty() {
            vec![]
        } else {
            args.split(',')
                .map(|a| a.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Potential(format!("bad arguments in '{spec}': {e}")))?
        };
        let arity = |k: usize| -> Result<()> {
            if nums.len() == k {
                Ok(())
            } else {
                Err(Error::Potential(format!(
                    "'{name}' takes {k} argument(s), got {}",
                    nums.len()
                )))
            }
        };
        match name.trim() {
            "power" => {
                arity(1)?;
                Self::power(nums[0])
            }
            "abs" => {
                arity(0)?;
                Ok(Self::abs())
            }
            "two_slope" => {
                arity(2)?;
                Self::two_slope(nums[0], nums[1])
            }
            "capped_power" => {
                arity(2)?;
                Self::capped_power(nums[0], nums[1])
            }
            other => Err(Error::Potential(format!(
                "unknown builtin potential '{other}'"
            ))),
        }
    }

    pub fn with_growth(mut self, growth: Growth) -> Self {
        self.growth = growth;
        self
    }

    pub fn with_coefficient(mut self, c: Coefficient) -> Self {
        self.coefficient = Some(c);
        self
    }

    /// `c·j` for a constant `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let mut p = self.clone();
        for piece in &mut p.pieces {
            for t in &mut piece.terms {
                t.coef *= c;
            }
        }
        p.label = format!("{}*{c}", self.label);
        p
    }

    /// Pointwise sum `j₁ + j₂` on the merged breakpoint set.
    pub fn sum(&self, other: &Self) -> Result<Self> {
        let mut bps: Vec<f64> = self
            .breakpoints
            .iter()
            .chain(&other.breakpoints)
            .copied()
            .collect();
        bps.sort_by(f64::total_cmp);
        bps.dedup();
        let mut pieces = Vec::with_capacity(bps.len() + 1);
        for k in 0..=bps.len() {
            // representative interior point of the k-th interval
            let s = match (k.checked_sub(1).map(|i| bps[i]), bps.get(k)) {
                (None, None) => 0.0,
                (None, Some(&b)) => b - 1.0,
                (Some(a), None) => a + 1.0,
                (Some(a), Some(&b)) => 0.5 * (a + b),
            };
            let mut terms = self.pieces[self.piece_index(s)].terms.clone();
            terms.extend(other.pieces[other.piece_index(s)].terms.iter().copied());
            pieces.push(Piece { terms });
        }
        let g = Growth {
            a1: self.growth.a1 + other.growth.a1,
            q: self.growth.q.max(other.growth.q),
            mu: self.growth.mu.min(other.growth.mu),
            mu_hat: self.growth.mu_hat,
        };
        let mut p = Self::new(bps, pieces, g)?;
        p.label = format!("{}+{}", self.label, other.label);
        Ok(p)
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn growth(&self) -> &Growth {
        &self.growth
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn is_smooth(&self) -> bool {
        self.breakpoints.is_empty()
    }

    /// Index of the piece used to evaluate `j(s)`: breakpoints belong to
    /// the piece on their left.
    fn piece_index(&self, s: f64) -> usize {
        self.breakpoints.partition_point(|&b| b < s)
    }

    fn coef_at(&self, x: &[f64]) -> f64 {
        self.coefficient.as_ref().map_or(1.0, |c| c.at(x))
    }

    fn value_unscaled(&self, s: f64) -> f64 {
        self.pieces[self.piece_index(s)].value(s)
    }

    pub fn eval(&self, x: &[f64], s: f64) -> f64 {
        self.coef_at(x) * self.value_unscaled(s)
    }

    /// One-sided derivatives `(j'(s⁻), j'(s⁺))`.
    pub fn one_sided(&self, x: &[f64], s: f64) -> (f64, f64) {
        let c = self.coef_at(x);
        let k = self.piece_index(s);
        let left = self.pieces[k].derivative(s);
        let right = if self.breakpoints.get(k) == Some(&s) {
            self.pieces[k + 1].derivative(s)
        } else {
            left
        };
        (c * left, c * right)
    }

    pub fn clarke_interval(&self, x: &[f64], s: f64) -> ClarkeInterval {
        let (l, r) = self.one_sided(x, s);
        ClarkeInterval::between(l, r)
    }

    /// `j⁰(x, s; h)`, the support function of the Clarke interval.
    pub fn gen_dir_derivative(&self, x: &[f64], s: f64, h: f64) -> f64 {
        self.clarke_interval(x, s).support(h)
    }

    /// Second derivative of the piece containing `s` (the left piece at a
    /// breakpoint).
    pub fn second_derivative(&self, x: &[f64], s: f64) -> f64 {
        self.coef_at(x) * self.pieces[self.piece_index(s)].second_derivative(s)
    }

    /// Second derivative of the piece selected from the side `side` (−1, +1)
    /// of `s`; used by Newton refinement near breakpoints.
    pub fn second_derivative_side(&self, x: &[f64], s: f64, side: f64) -> f64 {
        let k = self.piece_index(s);
        let k = if side > 0.0 && self.breakpoints.get(k) == Some(&s) {
            k + 1
        } else {
            k
        };
        self.coef_at(x) * self.pieces[k].second_derivative(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplePlan {
    /// Samples are drawn uniformly from `[-s_max, s_max]`.
    pub s_max: f64,
    pub samples: usize,
    /// Spatial points at which x-dependent coefficients are evaluated.
    pub points: Vec<Vec<f64>>,
    /// Spatial dimension `N` of the domain, for the `q < 2*` and
    /// `mu > N(q/2 - 1)` checks.
    pub domain_dim: usize,
    /// Ladder of large `|z|` for the superlinearity check.
    pub ladder: Vec<f64>,
}

impl Default for SamplePlan {
    fn default() -> Self {
        Self {
            s_max: 20.0,
            samples: 2001,
            points: vec![vec![0.5]],
            domain_dim: 1,
            ladder: vec![10.0, 100.0, 1000.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisCheck {
    pub name: String,
    pub passed: bool,
    /// Worst value of the checked quantity (its meaning depends on the check).
    pub worst: f64,
    /// `s` at which the worst value occurred.
    pub witness: f64,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub potential: String,
    pub checks: Vec<HypothesisCheck>,
}

impl HypothesisReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&HypothesisCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl PiecewisePotential {
    fn sample_points(&self, plan: &SamplePlan) -> Vec<f64> {
        let n = plan.samples.max(2);
        let mut s: Vec<f64> = (0..n)
            .map(|i| -plan.s_max + 2.0 * plan.s_max * i as f64 / (n - 1) as f64)
            .collect();
        s.extend(self.breakpoints.iter().copied());
        s.push(0.0);
        s
    }

    /// Mechanical checks of the growth, superlinearity, small-`z` and sign
    /// hypotheses on a finite sample plan.
    pub fn check_hypotheses(&self, plan: &SamplePlan) -> HypothesisReport {
        let g = self.growth;
        let xs: Vec<Vec<f64>> = if plan.points.is_empty() {
            vec![vec![]]
        } else {
            plan.points.clone()
        };
        let samples = self.sample_points(plan);
        let mut checks = Vec::new();

        // (i) continuity across breakpoints, j(x, 0) = 0
        {
            let mut worst = 0.0_f64;
            let mut witness = 0.0;
            for x in &xs {
                let j0 = self.eval(x, 0.0).abs();
                if j0 > worst {
                    worst = j0;
                    witness = 0.0;
                }
                for (k, &b) in self.breakpoints.iter().enumerate() {
                    let c = self.coef_at(x);
                    let gap = c * (self.pieces[k].value(b) - self.pieces[k + 1].value(b)).abs();
                    if gap > worst {
                        worst = gap;
                        witness = b;
                    }
                }
            }
            let coef_ok = xs.iter().all(|x| self.coef_at(x) > 0.0);
            checks.push(HypothesisCheck {
                name: "i".into(),
                passed: worst <= 1e-9 && coef_ok,
                worst,
                witness,
                note: "locally Lipschitz pieces, continuity at breakpoints, j(x,0)=0".into(),
            });
        }

        // (ii) |ξ| ≤ a1(1 + |s|^{q-1}) and 2 < q < 2*
        {
            let crit = if plan.domain_dim <= 2 {
                f64::INFINITY
            } else {
                2.0 * plan.domain_dim as f64 / (plan.domain_dim as f64 - 2.0)
            };
            let mut worst = f64::NEG_INFINITY;
            let mut witness = 0.0;
            for x in &xs {
                for &s in &samples {
                    let iv = self.clarke_interval(x, s);
                    let bound = g.a1 * (1.0 + s.abs().powf(g.q - 1.0));
                    let excess = iv.lo.abs().max(iv.hi.abs()) - bound;
                    if excess > worst {
                        worst = excess;
                        witness = s;
                    }
                }
            }
            let q_ok = g.q > 2.0 && g.q < crit;
            checks.push(HypothesisCheck {
                name: "ii".into(),
                passed: worst <= 1e-12 && q_ok,
                worst,
                witness,
                note: format!("max(|xi| - a1(1+|s|^(q-1))); q = {} in (2, {crit})", g.q),
            });
        }

        // (iii) (mu_hat·inf ∂j(z)·z − 2j(z)) / |z|^mu on a large-|z| ladder,
        // read as |z| → ∞
        {
            let mut worst = f64::INFINITY;
            let mut witness = 0.0;
            let mut monotone = true;
            for x in &xs {
                for sign in [-1.0, 1.0] {
                    let mut prev = f64::NEG_INFINITY;
                    for &m in &plan.ladder {
                        let z = sign * m;
                        let iv = self.clarke_interval(x, z);
                        let inf_xz = (iv.lo * z).min(iv.hi * z);
                        let quot = (g.mu_hat * inf_xz - 2.0 * self.eval(x, z)) / z.abs().powf(g.mu);
                        if quot < worst {
                            worst = quot;
                            witness = z;
                        }
                        if quot < prev * (1.0 - 1e-12) {
                            monotone = false;
                        }
                        prev = quot;
                    }
                }
            }
            let exponent_ok = g.mu > plan.domain_dim as f64 * (g.q / 2.0 - 1.0);
            checks.push(HypothesisCheck {
                name: "iii".into(),
                passed: worst > 0.0 && exponent_ok,
                worst,
                witness,
                note: format!(
                    "liminf taken as |z|->inf on ladder {:?}, mu_hat = {}; ladder monotone: {monotone}; mu > N(q/2-1): {exponent_ok}",
                    plan.ladder, g.mu_hat
                ),
            });
        }

        // (iv) 2j(z)/z² → 0 along a dyadic sequence
        {
            let mut worst_tail = 0.0_f64;
            let mut witness = 0.0;
            let mut tail_monotone = true;
            for x in &xs {
                for sign in [-1.0, 1.0] {
                    let seq: Vec<(f64, f64)> = (1..=500)
                        .map(|k| {
                            let z = sign * 2f64.powi(-k);
                            (z, 2.0 * self.eval(x, z) / (z * z))
                        })
                        .collect();
                    let tail = &seq[375..];
                    for w in tail.windows(2) {
                        if w[1].1.abs() > w[0].1.abs() * (1.0 + 1e-9) + 1e-300 {
                            tail_monotone = false;
                        }
                    }
                    let (z, last) = *seq.last().unwrap();
                    if last.abs() >= worst_tail {
                        worst_tail = last.abs();
                        witness = z;
                    }
                }
            }
            checks.push(HypothesisCheck {
                name: "iv".into(),
                passed: worst_tail <= 1e-6 && tail_monotone,
                worst: worst_tail,
                witness,
                note: format!("|2j(z)/z^2| at z = ±2^-500; tail nonincreasing: {tail_monotone}"),
            });
        }

        // (v) z·ξ ≥ 0 for both interval endpoints
        {
            let mut worst = f64::INFINITY;
            let mut witness = 0.0;
            for x in &xs {
                for &s in &samples {
                    let iv = self.clarke_interval(x, s);
                    let v = (s * iv.lo).min(s * iv.hi);
                    if v < worst {
                        worst = v;
                        witness = s;
                    }
                }
            }
            checks.push(HypothesisCheck {
                name: "v".into(),
                passed: worst >= -1e-12,
                worst,
                witness,
                note: "min of z*xi over both interval endpoints".into(),
            });
        }

        HypothesisReport {
            potential: self.label.clone(),
            checks,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const X: &[f64] = &[0.5];

    #[test]
    fn eval_builtins() {
        assert_eq!(PiecewisePotential::power(4.0).unwrap().eval(X, 2.0), 4.0);
        assert_eq!(PiecewisePotential::abs().eval(X, -3.0), 3.0);
        let asym = PiecewisePotential::new(
            vec![0.0],
            vec![
                Piece::polynomial(&[0.0, 0.0, 2.0]),
                Piece::polynomial(&[0.0, 0.0, 1.0]),
            ],
            Growth {
                a1: 4.0,
                q: 3.0,
                mu: 2.0,
                mu_hat: 1.0,
            },
        )
        .unwrap();
        assert_eq!(asym.eval(X, 1.0), 1.0);
        assert_eq!(asym.eval(X, -1.0), 2.0);
    }

    #[test]
    fn clarke_intervals() {
        let abs = PiecewisePotential::abs();
        assert_eq!(
            abs.clarke_interval(X, 0.0),
            ClarkeInterval { lo: -1.0, hi: 1.0 }
        );
        assert_eq!(abs.clarke_interval(X, 2.0), ClarkeInterval::point(1.0));
        let quartic = PiecewisePotential::power(4.0).unwrap();
        assert_eq!(quartic.clarke_interval(X, 2.0), ClarkeInterval::point(8.0));
    }

    #[test]
    fn gen_dir_derivative_examples() {
        let abs = PiecewisePotential::abs();
        assert_eq!(abs.gen_dir_derivative(X, 0.0, 1.0), 1.0);
        assert_eq!(abs.gen_dir_derivative(X, 0.0, -1.0), 1.0);
        let quartic = PiecewisePotential::power(4.0).unwrap();
        assert_eq!(quartic.gen_dir_derivative(X, 1.0, -2.0), -2.0);
    }

    #[test]
    fn rejects_malformed_tables() {
        let g = Growth {
            a1: 1.0,
            q: 3.0,
            mu: 3.0,
            mu_hat: 1.0,
        };
        // jump at the breakpoint
        assert!(PiecewisePotential::new(
            vec![1.0],
            vec![Piece::polynomial(&[0.0, 1.0]), Piece::polynomial(&[5.0])],
            g
        )
        .is_err());
        // j(0) != 0
        assert!(PiecewisePotential::new(vec![], vec![Piece::polynomial(&[1.0])], g).is_err());
        assert!(PiecewisePotential::new(vec![], vec![], g).is_err());
        assert!(PiecewisePotential::builtin("power:4,5").is_err());
        assert!(PiecewisePotential::builtin("cubic").is_err());
    }

    #[test]
    fn capped_power_is_c1() {
        let p = PiecewisePotential::capped_power(4.0, 2.0).unwrap();
        let (l, r) = p.one_sided(X, 2.0);
        assert!((l - r).abs() < 1e-12);
        assert!((p.eval(X, 3.0) - (4.0 + 8.0 * 1.0)).abs() < 1e-12);
    }

    #[test]
    fn hypotheses_for_quartic() {
        let p = PiecewisePotential::power(4.0).unwrap().with_growth(Growth {
            a1: 1.0,
            q: 4.0,
            mu: 2.0,
            mu_hat: 1.0,
        });
        let r = p.check_hypotheses(&SamplePlan::default());
        assert!(r.all_passed(), "{r:#?}");
    }

    #[test]
    fn quadratic_fails_small_z_condition() {
        let p = PiecewisePotential::power(2.0).unwrap();
        let r = p.check_hypotheses(&SamplePlan::default());
        let iv = r.get("iv").unwrap();
        assert!(!iv.passed);
        assert!((iv.worst - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cubic_sign_condition() {
        let p = PiecewisePotential::power(3.0).unwrap();
        let r = p.check_hypotheses(&SamplePlan::default());
        assert!(r.get("v").unwrap().passed);
        assert!(r.all_passed(), "{r:#?}");
    }

    #[test]
    fn two_slope_passes_and_capped_fails_superlinearity() {
        let plan = SamplePlan::default();
        assert!(PiecewisePotential::two_slope(1.0, 2.0)
            .unwrap()
            .check_hypotheses(&plan)
            .all_passed());
        let capped = PiecewisePotential::capped_power(4.0, 2.0)
            .unwrap()
            .check_hypotheses(&plan);
        assert!(!capped.get("iii").unwrap().passed);
        let abs = PiecewisePotential::abs().check_hypotheses(&plan);
        assert!(!abs.get("iv").unwrap().passed);
    }
}
