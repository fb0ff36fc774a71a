//! The descending flow `du/dt = −ϱ(u)ψ(u)v(u)`: pseudo-gradient field,
//! cutoffs, an energy-monotone explicit Euler integrator with checkpoints,
//! and invariance monitoring of finished trajectories.

use std::io::{BufRead, Write};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::calculus::{EnergyProblem, PsSample};
use crate::cone::{dist_to_cones, RegionLabel};
use crate::error::{Error, Result};
use crate::mesh::{DiscreteSpace, Field};

/// Armijo constant of the acceptance test.
pub const ARMIJO_C1: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    /// Level `r` of the energy band cutoff; `None` means `ϱ ≡ 1`.
    pub level: Option<f64>,
    pub eps: f64,
    pub eps_bar: f64,
    /// Excision radius `δ` around `excised` points; empty list means `ψ ≡ 1`.
    pub delta: f64,
    #[serde(default)]
    pub excised: Vec<Field>,
    pub dt0: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    pub tol_m: f64,
    pub t_max: f64,
    pub max_steps: usize,
    /// Store the full state every `keep_every` accepted steps.
    pub keep_every: usize,
    /// Cone-neighborhood radius used for labels and the in-neighborhood step
    /// cap `dt ≤ 1/(1+‖u‖)`.
    pub mu0: Option<f64>,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            level: None,
            eps: 0.5,
            eps_bar: 1.0,
            delta: 0.1,
            excised: vec![],
            dt0: 1e-2,
            dt_min: 1e-12,
            dt_max: 1.0,
            tol_m: 1e-6,
            t_max: 1e3,
            max_steps: 100_000,
            keep_every: 1,
            mu0: None,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::FlowConfig(m));
        if !(self.eps > 0.0 && self.eps < self.eps_bar) {
            return bad(format!(
                "need 0 < eps < eps_bar, got {} and {}",
                self.eps, self.eps_bar
            ));
        }
        if !(self.dt_min > 0.0 && self.dt_min <= self.dt0 && self.dt0 <= self.dt_max) {
            return bad(format!(
                "need 0 < dt_min <= dt0 <= dt_max, got {}, {}, {}",
                self.dt_min, self.dt0, self.dt_max
            ));
        }
        if !(self.tol_m > 0.0) {
            return bad(format!("tol_m must be positive, got {}", self.tol_m));
        }
        if !(self.t_max > 0.0) || self.max_steps == 0 || self.keep_every == 0 {
            return bad("t_max, max_steps and keep_every must be positive".into());
        }
        if !self.excised.is_empty() && !(self.delta > 0.0) {
            return bad(format!(
                "excision radius must be positive, got {}",
                self.delta
            ));
        }
        if let Some(mu) = self.mu0 {
            if !(mu > 0.0 && mu < 1.0) {
                return bad(format!("mu0 must lie in (0, 1), got {mu}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    SlopeBelowTol,
    MaxTime,
    MaxSteps,
    FieldVanished,
    StepFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub t: f64,
    pub energy: f64,
    pub slope: f64,
    pub norm: f64,
    pub d_plus: f64,
    pub d_minus: f64,
    pub label: RegionLabel,
    /// Step size that produced this state (0 for the initial state).
    pub dt: f64,
    /// Cutoff product `ϱψ` at this state.
    pub cutoff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowState {
    pub record: StepRecord,
    pub u: Field,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcisionEvent {
    pub step: usize,
    pub point: usize,
    pub entered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub records: Vec<StepRecord>,
    /// Full states kept every `keep_every` steps, always including the
    /// first and last.
    pub states: Vec<FlowState>,
    pub termination: Termination,
    pub excision_log: Vec<ExcisionEvent>,
}

impl Trajectory {
    pub fn last_state(&self) -> &FlowState {
        self.states.last().expect("trajectories are nonempty")
    }

    pub fn final_u(&self) -> &Field {
        &self.last_state().u
    }

    pub fn ps_history(&self) -> Vec<PsSample> {
        self.states
            .iter()
            .map(|s| PsSample {
                u: s.u.clone(),
                energy: s.record.energy,
                slope: s.record.slope,
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,J,m,d_plus,d_minus,label,dt")?;
        for r in &self.records {
            writeln!(
                out,
                "{:e},{:e},{:e},{:e},{:e},{},{:e}",
                r.t,
                r.energy,
                r.slope,
                r.d_plus,
                r.d_minus,
                r.label.as_str(),
                r.dt
            )?;
        }
        Ok(())
    }

    /// Parses the CSV columns back into partial records (norm and cutoff
    /// are not stored and read as NaN).
    pub fn read_csv_records<R: BufRead>(input: R) -> Result<Vec<StepRecord>> {
        let mut out = Vec::new();
        let mut header_seen = false;
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            if !header_seen {
                header_seen = true;
                continue;
            }
            let cols: Vec<&str> = line.trim().split(',').collect();
            let err = |m: &str| Error::Config(format!("trajectory csv line {}: {m}", lineno + 1));
            if cols.len() != 7 {
                return Err(err("expected 7 columns"));
            }
            let num = |k: usize| cols[k].parse::<f64>().map_err(|e| err(&e.to_string()));
            out.push(StepRecord {
                step: out.len(),
                t: num(0)?,
                energy: num(1)?,
                slope: num(2)?,
                norm: f64::NAN,
                d_plus: num(3)?,
                d_minus: num(4)?,
                label: RegionLabel::parse(cols[5]).ok_or_else(|| err("unknown label"))?,
                dt: num(6)?,
                cutoff: f64::NAN,
            });
        }
        Ok(out)
    }
}

/// `v(u) = (1+‖u‖)·min(m,1)·v*/m` with `v* = A⁻¹g*` the Riesz
/// representative of the minimal-norm subgradient; zero at critical points.
pub fn pseudo_gradient(prob: &EnergyProblem, u: &Field) -> Result<Field> {
    let s = prob.slope(u)?;
    Ok(scaled_field(prob.space(), u, s.value, s.riesz.as_vector()))
}

fn scaled_field(space: &DiscreteSpace, u: &DVector<f64>, m: f64, riesz: &DVector<f64>) -> Field {
    if m == 0.0 {
        return Field::zeros(u.len());
    }
    let k = (1.0 + space.a_norm(u)) * m.min(1.0) / m;
    (riesz * k).into()
}

/// Energy band cutoff: 1 for `|J−r| ≤ ε`, 0 for `|J−r| ≥ ε̄`, linear between.
pub fn cutoff_rho(config: &FlowConfig, energy: f64) -> f64 {
    match config.level {
        None => 1.0,
        Some(r) => {
            let d = (energy - r).abs();
            if d <= config.eps {
                1.0
            } else if d >= config.eps_bar {
                0.0
            } else {
                (config.eps_bar - d) / (config.eps_bar - config.eps)
            }
        }
    }
}

fn psi_of_distance(delta: f64, d: f64) -> f64 {
    if d <= delta {
        0.0
    } else if d >= 2.0 * delta {
        1.0
    } else {
        (d - delta) / delta
    }
}

/// Excision cutoff: 0 within `δ` of an excised point, 1 beyond `2δ`.
pub fn cutoff_psi(space: &DiscreteSpace, config: &FlowConfig, u: &Field) -> f64 {
    config
        .excised
        .iter()
        .map(|p| psi_of_distance(config.delta, space.a_norm(&(u.as_vector() - p.as_vector()))))
        .fold(1.0, f64::min)
}

/// Everything needed to continue an interrupted integration bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowCheckpoint {
    pub config: FlowConfig,
    pub u: Field,
    pub dt: f64,
    pub records: Vec<StepRecord>,
    pub states: Vec<FlowState>,
    pub excision_log: Vec<ExcisionEvent>,
    pub inside_excision: Vec<bool>,
    pub termination: Option<Termination>,
}

struct Eval {
    energy: f64,
    slope: f64,
    riesz: DVector<f64>,
    norm: f64,
    cutoff: f64,
}

pub struct FlowRun<'a> {
    prob: &'a EnergyProblem,
    cp: FlowCheckpoint,
    current: Eval,
}

impl<'a> FlowRun<'a> {
    fn evaluate(prob: &EnergyProblem, config: &FlowConfig, u: &Field) -> Result<Eval> {
        let energy = prob.energy(u)?;
        let s = prob.slope(u)?;
        let cutoff = cutoff_rho(config, energy) * cutoff_psi(prob.space(), config, u);
        Ok(Eval {
            energy,
            slope: s.value,
            riesz: s.riesz.into_vector(),
            norm: prob.space().a_norm(u),
            cutoff,
        })
    }

    fn record(
        prob: &EnergyProblem,
        config: &FlowConfig,
        e: &Eval,
        u: &Field,
        step: usize,
        t: f64,
        dt: f64,
    ) -> Result<StepRecord> {
        let (d_plus, d_minus) = dist_to_cones(prob.space(), u)?;
        let mu = config.mu0.unwrap_or(0.0);
        Ok(StepRecord {
            step,
            t,
            energy: e.energy,
            slope: e.slope,
            norm: e.norm,
            d_plus,
            d_minus,
            label: RegionLabel::classify(d_plus, d_minus, mu),
            dt,
            cutoff: e.cutoff,
        })
    }

    pub fn start(prob: &'a EnergyProblem, u0: Field, config: FlowConfig) -> Result<Self> {
        config.validate()?;
        prob.space().check(&u0)?;
        for p in &config.excised {
            prob.space().check(p)?;
        }
        let current = Self::evaluate(prob, &config, &u0)?;
        let rec = Self::record(prob, &config, &current, &u0, 0, 0.0, 0.0)?;
        let inside_excision = config
            .excised
            .iter()
            .map(|p| prob.space().a_norm(&(u0.as_vector() - p.as_vector())) < 2.0 * config.delta)
            .collect();
        let cp = FlowCheckpoint {
            dt: config.dt0,
            records: vec![rec.clone()],
            states: vec![FlowState {
                record: rec,
                u: u0.clone(),
            }],
            excision_log: vec![],
            inside_excision,
            termination: None,
            u: u0,
            config,
        };
        let mut run = Self { prob, cp, current };
        run.check_termination();
        Ok(run)
    }

    pub fn resume(prob: &'a EnergyProblem, checkpoint: FlowCheckpoint) -> Result<Self> {
        checkpoint.config.validate()?;
        prob.space().check(&checkpoint.u)?;
        let current = Self::evaluate(prob, &checkpoint.config, &checkpoint.u)?;
        Ok(Self {
            prob,
            cp: checkpoint,
            current,
        })
    }

    pub fn checkpoint(&self) -> &FlowCheckpoint {
        &self.cp
    }

    pub fn termination(&self) -> Option<Termination> {
        self.cp.termination
    }

    pub fn steps(&self) -> usize {
        self.cp.records.len() - 1
    }

    fn time(&self) -> f64 {
        self.cp.records.last().map_or(0.0, |r| r.t)
    }

    fn check_termination(&mut self) {
        let c = &self.cp.config;
        let e = &self.current;
        self.cp.termination = if (1.0 + e.norm) * e.slope <= c.tol_m {
            Some(Termination::SlopeBelowTol)
        } else if e.cutoff == 0.0 {
            Some(Termination::FieldVanished)
        } else if self.time() >= c.t_max {
            Some(Termination::MaxTime)
        } else if self.steps() >= c.max_steps {
            Some(Termination::MaxSteps)
        } else {
            None
        };
    }

    /// One accepted Euler step (with backtracking). Returns the
    /// termination state after the step.
    pub fn step(&mut self) -> Result<Option<Termination>> {
        if self.cp.termination.is_some() {
            return Ok(self.cp.termination);
        }
        let prob = self.prob;
        let config = self.cp.config.clone();
        let config = &config;
        let e = &self.current;
        let u = self.cp.u.as_vector().clone();
        let u = &u;
        let field = scaled_field(prob.space(), u, e.slope, &e.riesz).scale(e.cutoff);
        let (last_t, last_label) = {
            let r = self.cp.records.last().unwrap();
            (r.t, r.label)
        };
        let inside = config.mu0.is_some() && last_label != RegionLabel::SignChangingRegion;
        let mut cap = config.dt_max.min(config.t_max - last_t);
        if inside {
            cap = cap.min(1.0 / (1.0 + e.norm));
        }
        let mut dt = self.cp.dt.min(cap);
        let required = ARMIJO_C1 * e.cutoff * e.slope * e.slope / (1.0 + e.norm);
        loop {
            if dt < config.dt_min {
                self.cp.termination = Some(Termination::StepFailure);
                return Ok(self.cp.termination);
            }
            let cand: Field = (u - field.as_vector() * dt).into();
            let j = prob.energy(&cand)?;
            if j <= e.energy - dt * required {
                let next = Self::evaluate(prob, config, &cand)?;
                let step = self.cp.records.len();
                let t = last_t + dt;
                let rec = Self::record(prob, config, &next, &cand, step, t, dt)?;
                for (k, p) in config.excised.iter().enumerate() {
                    let now = prob.space().a_norm(&(cand.as_vector() - p.as_vector()))
                        < 2.0 * config.delta;
                    if now != self.cp.inside_excision[k] {
                        self.cp.excision_log.push(ExcisionEvent {
                            step,
                            point: k,
                            entered: now,
                        });
                        self.cp.inside_excision[k] = now;
                    }
                }
                self.cp.dt = (dt * 1.5).min(config.dt_max);
                self.current = next;
                self.cp.u = cand;
                self.cp.records.push(rec.clone());
                self.check_termination();
                if step % config.keep_every == 0 || self.cp.termination.is_some() {
                    self.cp.states.push(FlowState {
                        record: rec,
                        u: self.cp.u.clone(),
                    });
                }
                return Ok(self.cp.termination);
            }
            dt *= 0.5;
        }
    }

    /// Advances at most `max_steps` accepted steps.
    pub fn advance(&mut self, max_steps: usize) -> Result<Option<Termination>> {
        for _ in 0..max_steps {
            if self.step()?.is_some() {
                break;
            }
        }
        Ok(self.cp.termination)
    }

    pub fn finish(mut self) -> Result<Trajectory> {
        while self.cp.termination.is_none() {
            self.step()?;
        }
        let mut cp = self.cp;
        let last = cp.records.last().unwrap().clone();
        if cp.states.last().map(|s| s.record.step) != Some(last.step) {
            cp.states.push(FlowState {
                record: last,
                u: cp.u,
            });
        }
        Ok(Trajectory {
            records: cp.records,
            states: cp.states,
            termination: cp.termination.unwrap(),
            excision_log: cp.excision_log,
        })
    }
}

pub fn integrate_flow(prob: &EnergyProblem, u0: &Field, config: &FlowConfig) -> Result<Trajectory> {
    FlowRun::start(prob, u0.clone(), config.clone())?.finish()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub index: usize,
    pub kind: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceVerdict {
    pub passed: bool,
    pub initial_label: RegionLabel,
    pub violations: Vec<Violation>,
    pub excision_events: usize,
    /// Largest cone distance reached by a trajectory that started inside
    /// the corresponding neighborhood.
    pub max_cone_distance: f64,
}

/// Checks cone-neighborhood invariance, monotone energy and the growth
/// bound `‖u(t)‖ ≤ (‖u₀‖+1)e^{2t}` along a finished trajectory.
pub fn monitor_invariance(traj: &Trajectory, mu0: f64) -> InvarianceVerdict {
    let tol = 1e-7;
    let first = &traj.records[0];
    let initial_label = RegionLabel::classify(first.d_plus, first.d_minus, mu0);
    let mut violations = Vec::new();
    let mut max_cone_distance: f64 = 0.0;
    for (i, r) in traj.records.iter().enumerate() {
        if first.d_plus <= mu0 {
            max_cone_distance = max_cone_distance.max(r.d_plus);
            if r.d_plus > mu0 + tol {
                violations.push(Violation {
                    index: i,
                    kind: "left D+".into(),
                    value: r.d_plus,
                });
            }
        }
        if first.d_minus <= mu0 {
            max_cone_distance = max_cone_distance.max(r.d_minus);
            if r.d_minus > mu0 + tol {
                violations.push(Violation {
                    index: i,
                    kind: "left D-".into(),
                    value: r.d_minus,
                });
            }
        }
        if i > 0 && r.energy > traj.records[i - 1].energy {
            violations.push(Violation {
                index: i,
                kind: "energy increase".into(),
                value: r.energy - traj.records[i - 1].energy,
            });
        }
        if r.norm.is_finite() && first.norm.is_finite() {
            let bound = (first.norm + 1.0) * (2.0 * r.t).exp();
            if r.norm > bound {
                violations.push(Violation {
                    index: i,
                    kind: "growth bound".into(),
                    value: r.norm - bound,
                });
            }
        }
    }
    InvarianceVerdict {
        passed: violations.is_empty(),
        initial_label,
        violations,
        excision_events: traj.excision_log.len(),
        max_cone_distance,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::GridSpec;
    use crate::potential::PiecewisePotential;

    fn quartic(n: usize) -> EnergyProblem {
        let s = DiscreteSpace::new(GridSpec::interval(0.0, 1.0, n)).unwrap();
        EnergyProblem::new(s, PiecewisePotential::power(4.0).unwrap(), 1.0).unwrap()
    }

    #[test]
    fn cutoff_ramps() {
        let c = FlowConfig {
            level: Some(0.0),
            eps: 1.0,
            eps_bar: 2.0,
            ..Default::default()
        };
        assert_eq!(cutoff_rho(&c, 0.5), 1.0);
        assert_eq!(cutoff_rho(&c, -3.0), 0.0);
        assert_eq!(cutoff_rho(&c, 1.5), 0.5);
        assert_eq!(cutoff_rho(&FlowConfig::default(), 1e9), 1.0);
        assert!((psi_of_distance(0.2, 0.3) - 0.5).abs() < 1e-15);
        let s = DiscreteSpace::new(GridSpec::interval(0.0, 1.0, 3)).unwrap();
        let p = Field::zeros(3);
        let c = FlowConfig {
            excised: vec![p],
            delta: 1.0,
            ..Default::default()
        };
        // ‖e₂‖ = √(2/h) = √8
        let u = Field::from_vec(vec![0.0, 1.5 / 8f64.sqrt(), 0.0]);
        assert!((cutoff_psi(&s, &c, &u) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn critical_start_is_a_single_state() {
        let prob = quartic(15);
        let t = integrate_flow(&prob, &Field::zeros(15), &FlowConfig::default()).unwrap();
        assert_eq!(t.records.len(), 1);
        assert_eq!(t.termination, Termination::SlopeBelowTol);
        assert!(monitor_invariance(&t, 0.1).passed);
    }

    #[test]
    fn small_start_decays_monotonically() {
        let prob = quartic(31);
        let phi = prob.space().eigenpairs(1).unwrap().remove(0).vector;
        let cfg = FlowConfig {
            mu0: Some(0.2),
            tol_m: 1e-8,
            ..Default::default()
        };
        let t = integrate_flow(&prob, &phi.scale(0.5), &cfg).unwrap();
        assert_eq!(t.termination, Termination::SlopeBelowTol);
        assert!(t.final_u().amax() < 1e-6);
        let v = monitor_invariance(&t, 0.2);
        assert!(v.passed, "{:?}", v.violations);
    }

    #[test]
    fn pseudo_gradient_contract() {
        let prob = quartic(15);
        let u = prob.space().field_from_fn(|x| 2.0 * (3.0 * x[0]).sin());
        let v = pseudo_gradient(&prob, &u).unwrap();
        let s = prob.slope(&u).unwrap();
        let norm = prob.space().a_norm(&u);
        assert!((prob.space().a_norm(&v) - (1.0 + norm) * s.value.min(1.0)).abs() < 1e-10);
        assert!(s.certificate.dot(&v) > 0.0);
    }

    #[test]
    fn monotonicity_violation_is_located() {
        let prob = quartic(15);
        let phi = prob.space().eigenpairs(1).unwrap().remove(0).vector;
        let mut t = integrate_flow(
            &prob,
            &phi.scale(0.5),
            &FlowConfig {
                max_steps: 10,
                ..Default::default()
            },
        )
        .unwrap();
        t.records[6].energy = t.records[5].energy + 1.0;
        let v = monitor_invariance(&t, 0.1);
        assert!(!v.passed);
        assert_eq!(v.violations[0].index, 6);
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let prob = quartic(15);
        let phi = prob.space().eigenpairs(2).unwrap();
        let u0: Field = (phi[0].vector.as_vector() * 0.7 + phi[1].vector.as_vector() * 0.3).into();
        let cfg = FlowConfig {
            max_steps: 60,
            keep_every: 7,
            mu0: Some(0.1),
            ..Default::default()
        };
        let full = integrate_flow(&prob, &u0, &cfg).unwrap();
        let mut run = FlowRun::start(&prob, u0, cfg).unwrap();
        run.advance(23).unwrap();
        let text = serde_json::to_string(run.checkpoint()).unwrap();
        let cp: FlowCheckpoint = serde_json::from_str(&text).unwrap();
        let resumed = FlowRun::resume(&prob, cp).unwrap().finish().unwrap();
        assert_eq!(full, resumed);
    }

    #[test]
    fn csv_round_trip() {
        let prob = quartic(7);
        let phi = prob.space().eigenpairs(1).unwrap().remove(0).vector;
        let t = integrate_flow(
            &prob,
            &phi.scale(0.5),
            &FlowConfig {
                max_steps: 5,
                ..Default::default()
            },
        )
        .unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let recs = Trajectory::read_csv_records(buf.as_slice()).unwrap();
        assert_eq!(recs.len(), t.records.len());
        assert_eq!(recs[3].energy, t.records[3].energy);
    }
}
