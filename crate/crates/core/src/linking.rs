//! Eigen-based linking pair `(Q, T)` and the deformation-driven minimax
//! iteration that locates a sign-changing critical point.
//!
//! `Q` is the half disc `{s·e₁ + t·e₂ : t ≥ 0, ‖·‖ ≤ R}` in the span of the
//! energy-normalized first two eigenfields, `T` is the sphere of radius
//! `δ_T` in the `M`-orthogonal complement `V` of `φ₁`.

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calculus::EnergyProblem;
use crate::cone::{dist_to_cones, random_field, RegionLabel};
use crate::error::{Error, Result};
use crate::flow::{integrate_flow, FlowConfig};
use crate::mesh::Field;
use crate::refine::{newton_refine, RefineOptions};

/// Radius scan used by [`build_frame`]; `None` radii are selected
/// automatically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanConfig {
    #[serde(with = "crate::config::auto_value")]
    pub delta_t: Option<f64>,
    #[serde(with = "crate::config::auto_value")]
    pub radius: Option<f64>,
    /// Random `V` directions sampled on `T` in addition to `±e₂`.
    pub t_directions: usize,
    /// Samples on each `E₂` circle.
    pub arc_points: usize,
    pub ladder_min: f64,
    pub ladder_max: f64,
    pub ladder_ratio: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            delta_t: None,
            radius: None,
            t_directions: 16,
            arc_points: 64,
            ladder_min: 1e-2,
            ladder_max: 1e3,
            ladder_ratio: 1.1,
        }
    }
}

impl ScanConfig {
    fn validate(&self) -> Result<()> {
        let ok = self.ladder_min > 0.0
            && self.ladder_max > self.ladder_min
            && self.ladder_ratio > 1.0
            && self.arc_points >= 4
            && self.delta_t.map_or(true, |d| d > 0.0)
            && self.radius.map_or(true, |r| r > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid linking scan: {self:?}")))
        }
    }

    fn ladder(&self) -> Vec<f64> {
        let mut out = vec![];
        let mut r = self.ladder_min;
        while r <= self.ladder_max * (1.0 + 1e-12) {
            out.push(r);
            r *= self.ladder_ratio;
        }
        out
    }
}

/// One rung of the radius scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub radius: f64,
    /// Minimum of `J` over the sampled `T` sphere of this radius.
    pub t_min_energy: f64,
    /// Minimum cone distance over the sampled `T` sphere.
    pub t_min_distance: f64,
    /// Maximum of `J` over the full `E₂` circle of this radius.
    pub circle_max_energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkingFrame {
    /// `φ₁/√λ₁` and `φ₂/√λ₂`, unit vectors in the energy norm.
    pub e1: Field,
    pub e2: Field,
    pub lambda1: f64,
    pub lambda2: f64,
    pub radius: f64,
    pub delta_t: f64,
    pub mu0: f64,
    /// Unit directions in `V` sampled on `T`.
    pub t_directions: Vec<Field>,
    pub t_energies: Vec<f64>,
    pub t_distances: Vec<f64>,
    pub scan: Vec<ScanRow>,
}

impl LinkingFrame {
    pub fn t_points(&self) -> Vec<Field> {
        self.t_directions
            .iter()
            .map(|v| v.scale(self.delta_t))
            .collect()
    }

    pub fn embed(&self, s: f64, t: f64) -> Field {
        (self.e1.as_vector() * s + self.e2.as_vector() * t).into()
    }
}

fn no_window(msg: &str, scan: &[ScanRow]) -> Error {
    Error::NoLinkingWindow {
        reason: msg.to_string(),
        scan: scan.to_vec(),
    }
}

/// Builds `(Q, T)`: picks the smallest ladder radius `δ_T` with
/// `min_T J > 0` and `T` farther than `μ₀` from both cones, then the
/// smallest ladder radius `R > δ_T` with `J < 0` on the whole `E₂` circle.
/// An explicit `R` skips the circle check.
pub fn build_frame<R: Rng + ?Sized>(
    prob: &EnergyProblem,
    mu0: f64,
    scan: &ScanConfig,
    rng: &mut R,
) -> Result<LinkingFrame> {
    scan.validate()?;
    if !(mu0 > 0.0 && mu0 < 1.0) {
        return Err(Error::Config(format!("mu0 must lie in (0, 1), got {mu0}")));
    }
    let space = prob.space();
    if space.len() < 2 {
        return Err(Error::InvalidGrid(
            "linking needs at least two nodes".into(),
        ));
    }
    let eig = space.eigenpairs(2)?;
    let (l1, l2) = (eig[0].value, eig[1].value);
    let e1 = eig[0].vector.scale(1.0 / l1.sqrt());
    let e2 = eig[1].vector.scale(1.0 / l2.sqrt());

    let phi1 = eig[0].vector.as_vector();
    let mut dirs = vec![e2.clone(), -&e2];
    for _ in 0..scan.t_directions {
        let v = random_field(space, rng, 1.0)?.into_vector();
        let c = space.apply_mass(&v).dot(phi1);
        let v = v - phi1 * c;
        let n = space.a_norm(&v);
        dirs.push((v / n).into());
    }
    let unit_dist: Vec<f64> = dirs
        .iter()
        .map(|v| dist_to_cones(space, v).map(|(a, b)| a.min(b)))
        .collect::<Result<_>>()?;
    let min_unit_dist = unit_dist.iter().copied().fold(f64::INFINITY, f64::min);

    let circle = |rho: f64| -> Result<f64> {
        let mut worst = f64::NEG_INFINITY;
        for j in 0..scan.arc_points {
            let th = std::f64::consts::TAU * j as f64 / scan.arc_points as f64;
            let u: Field =
                (e1.as_vector() * (rho * th.cos()) + e2.as_vector() * (rho * th.sin())).into();
            worst = worst.max(prob.energy(&u)?);
        }
        Ok(worst)
    };
    let t_min = |rho: f64| -> Result<f64> {
        let mut m = f64::INFINITY;
        for v in &dirs {
            m = m.min(prob.energy(&v.scale(rho))?);
        }
        Ok(m)
    };
    let row = |rho: f64| -> Result<ScanRow> {
        Ok(ScanRow {
            radius: rho,
            t_min_energy: t_min(rho)?,
            t_min_distance: rho * min_unit_dist,
            circle_max_energy: circle(rho)?,
        })
    };
    let mut rows: Vec<ScanRow> = scan.ladder().into_iter().map(row).collect::<Result<_>>()?;
    let admissible_t = |r: &ScanRow| r.t_min_energy > 0.0 && r.t_min_distance > mu0;

    let delta_t = match scan.delta_t {
        Some(d) => {
            let r = row(d)?;
            if !admissible_t(&r) {
                rows.push(r);
                return Err(no_window(
                    "requested delta_t violates min_T J > 0 or the cone-distance bound",
                    &rows,
                ));
            }
            d
        }
        None => rows
            .iter()
            .find(|r| admissible_t(r))
            .map(|r| r.radius)
            .ok_or_else(|| {
                no_window(
                    "no radius with J > 0 on T outside the cone neighborhoods",
                    &rows,
                )
            })?,
    };
    let radius = match scan.radius {
        Some(r) => {
            if r <= delta_t {
                return Err(no_window(
                    &format!("requested R = {r} does not exceed delta_t = {delta_t}"),
                    &rows,
                ));
            }
            r
        }
        None => rows
            .iter()
            .find(|r| r.radius > delta_t && r.circle_max_energy < 0.0)
            .map(|r| r.radius)
            .ok_or_else(|| {
                no_window(
                    &format!("no radius above delta_t = {delta_t} with J < 0 on the E2 circle"),
                    &rows,
                )
            })?,
    };
    let mut t_energies = vec![];
    for v in &dirs {
        t_energies.push(prob.energy(&v.scale(delta_t))?);
    }
    Ok(LinkingFrame {
        e1,
        e2,
        lambda1: l1,
        lambda2: l2,
        radius,
        delta_t,
        mu0,
        t_distances: unit_dist.iter().map(|d| d * delta_t).collect(),
        t_directions: dirs,
        t_energies,
        scan: rows,
    })
}

/// Lattice key of a parameter point at the finest refinement level.
pub type ParamKey = (u64, u64);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshPoint {
    /// Polar lattice coordinates `(ρ, θ)` in units of the finest spacing.
    pub key: ParamKey,
    pub s: f64,
    pub t: f64,
    /// Refinement level at which the point was created (0 for the base grid).
    pub depth: u32,
    /// Finest level whose neighborhood around this point has been added.
    pub refined: u32,
    pub boundary: bool,
    /// Boundary point in `S` at construction: never moved.
    pub frozen: bool,
    pub u: Field,
    pub energy: f64,
    pub label: RegionLabel,
    /// Set once the image has been seen inside a cone neighborhood.
    pub in_w: bool,
    /// Energy after each completed sweep, starting with the identity image.
    pub energy_history: Vec<f64>,
    /// `S` membership after each completed sweep.
    pub s_history: Vec<bool>,
}

impl MeshPoint {
    pub fn in_s(&self) -> bool {
        !self.in_w && self.label == RegionLabel::SignChangingRegion
    }
}

/// Polar mesh of `Q` (base nodes `ρ_i = R·i/n_r`, `θ_j = π·j/n_θ`, refined
/// locally by halving both spacings) with the current images `γ(s, t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceMesh {
    pub radius: f64,
    pub radial: usize,
    pub angular: usize,
    /// Deepest refinement level allowed.
    pub levels: u32,
    pub mu0: f64,
    pub points: Vec<MeshPoint>,
}

impl SurfaceMesh {
    /// Identity embedding of `Q` on the base grid.
    pub fn new(
        prob: &EnergyProblem,
        frame: &LinkingFrame,
        radial: usize,
        angular: usize,
        levels: u32,
    ) -> Result<Self> {
        if radial == 0 || angular == 0 || levels > 24 {
            return Err(Error::Config(
                "surface mesh needs radial, angular >= 1 and at most 24 levels".into(),
            ));
        }
        let mut mesh = Self {
            radius: frame.radius,
            radial,
            angular,
            levels,
            mu0: frame.mu0,
            points: vec![],
        };
        let step = 1u64 << levels;
        let mut keys = vec![(0, 0)];
        for i in 1..=radial as u64 {
            for j in 0..=angular as u64 {
                keys.push((i * step, j * step));
            }
        }
        mesh.points = keys
            .into_par_iter()
            .map(|k| mesh.identity_point(prob, frame, k, 0))
            .collect::<Result<Vec<_>>>()?;
        Ok(mesh)
    }

    fn max_key(&self) -> ParamKey {
        let step = 1u64 << self.levels;
        (self.radial as u64 * step, self.angular as u64 * step)
    }

    /// Parameters `(s, t)` of a lattice key.
    pub fn param(&self, key: ParamKey) -> (f64, f64) {
        let (kr, kt) = self.max_key();
        let rho = self.radius * key.0 as f64 / kr as f64;
        if key.1 == 0 {
            return (rho, 0.0);
        }
        if key.1 == kt {
            return (-rho, 0.0);
        }
        let th = std::f64::consts::PI * key.1 as f64 / kt as f64;
        (rho * th.cos(), rho * th.sin())
    }

    fn is_boundary(&self, key: ParamKey) -> bool {
        let (kr, kt) = self.max_key();
        key.0 == 0 || key.0 == kr || key.1 == 0 || key.1 == kt
    }

    fn identity_point(
        &self,
        prob: &EnergyProblem,
        frame: &LinkingFrame,
        key: ParamKey,
        depth: u32,
    ) -> Result<MeshPoint> {
        let (s, t) = self.param(key);
        let u = frame.embed(s, t);
        let energy = prob.energy(&u)?;
        let (dp, dm) = dist_to_cones(prob.space(), &u)?;
        let label = RegionLabel::classify(dp, dm, self.mu0);
        let in_w = label != RegionLabel::SignChangingRegion;
        let boundary = self.is_boundary(key);
        Ok(MeshPoint {
            key,
            s,
            t,
            depth,
            refined: depth,
            boundary,
            frozen: boundary && !in_w,
            u,
            energy,
            label,
            in_w,
            energy_history: vec![energy],
            s_history: vec![!in_w],
        })
    }

    /// Existing points at lattice offsets `±step` (including diagonals)
    /// from point `k`.
    fn ring(&self, k: usize, step: u64) -> Vec<usize> {
        let key = self.points[k].key;
        let wanted: Vec<ParamKey> = offsets(key, step, self.max_key());
        self.points
            .iter()
            .enumerate()
            .filter(|(_, p)| wanted.contains(&p.key))
            .map(|(i, _)| i)
            .collect()
    }

    /// Neighbors of point `k` at the finest spacing where any exist.
    pub fn neighbors(&self, k: usize) -> Vec<usize> {
        let p = &self.points[k];
        let finest = p.refined.max(p.depth).min(self.levels);
        for level in (0..=finest).rev() {
            let ring = self.ring(k, 1u64 << (self.levels - level));
            if !ring.is_empty() {
                return ring;
            }
        }
        vec![]
    }

    /// Index of the largest energy among `S` points; ties go to the lowest
    /// `(s, t)`.
    pub fn sup_index(&self) -> Option<usize> {
        self.ranked_s_points().first().copied()
    }

    /// `S` points ordered by decreasing energy, ties by increasing `(s, t)`.
    pub fn ranked_s_points(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.points.len())
            .filter(|&k| self.points[k].in_s())
            .collect();
        idx.sort_by(|&a, &b| {
            let (pa, pb) = (&self.points[a], &self.points[b]);
            pb.energy
                .total_cmp(&pa.energy)
                .then(pa.s.total_cmp(&pb.s))
                .then(pa.t.total_cmp(&pb.t))
        });
        idx
    }

    pub fn sup(&self) -> Option<f64> {
        self.sup_index().map(|k| self.points[k].energy)
    }

    /// Sup of `J` over `S` points after each sweep, evaluated on the
    /// current point set.
    pub fn sup_history(&self) -> Vec<f64> {
        let len = self
            .points
            .iter()
            .map(|p| p.energy_history.len())
            .min()
            .unwrap_or(0);
        (0..len)
            .map(|k| {
                self.points
                    .iter()
                    .filter(|p| p.s_history[k])
                    .map(|p| p.energy_history[k])
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect()
    }

    /// Writes `s,t,J,label` rows for plotting.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "s,t,J,label")?;
        for p in &self.points {
            let label = if p.in_w && p.label == RegionLabel::SignChangingRegion {
                "w_sticky"
            } else {
                p.label.as_str()
            };
            writeln!(out, "{:e},{:e},{:e},{}", p.s, p.t, p.energy, label)?;
        }
        Ok(())
    }
}

fn offsets(key: ParamKey, step: u64, max: ParamKey) -> Vec<ParamKey> {
    let mut out = vec![];
    for dr in [-1i64, 0, 1] {
        for dt in [-1i64, 0, 1] {
            if dr == 0 && dt == 0 {
                continue;
            }
            let r = key.0 as i64 + dr * step as i64;
            let t = key.1 as i64 + dt * step as i64;
            if r < 0 || t < 0 || r > max.0 as i64 || t > max.1 as i64 {
                continue;
            }
            // the origin is a single point
            let t = if r == 0 { 0 } else { t };
            out.push((r as u64, t as u64));
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// `α = max J` over `∂Q ∩ S` (over all of `∂Q` if that set is empty) and
/// `β = min J` over the sampled `T`. Fails unless `α < β`.
pub fn estimate_alpha_beta(frame: &LinkingFrame, mesh: &SurfaceMesh) -> Result<(f64, f64)> {
    let boundary_s = mesh.points.iter().filter(|p| p.boundary && p.in_s());
    let mut alpha = boundary_s
        .map(|p| p.energy)
        .fold(f64::NEG_INFINITY, f64::max);
    if alpha == f64::NEG_INFINITY {
        alpha = mesh
            .points
            .iter()
            .filter(|p| p.boundary)
            .map(|p| p.energy)
            .fold(f64::NEG_INFINITY, f64::max);
    }
    let beta = frame
        .t_energies
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if alpha < beta {
        Ok((alpha, beta))
    } else {
        Err(Error::GapViolation { alpha, beta })
    }
}

/// Applies one sweep to a single point and appends to its histories.
fn advance_point(
    prob: &EnergyProblem,
    p: &MeshPoint,
    config: &FlowConfig,
    mu0: f64,
) -> Result<MeshPoint> {
    let mut next = p.clone();
    if !p.frozen {
        let traj = integrate_flow(prob, &p.u, config)?;
        let last = &traj.last_state().record;
        if p.boundary && p.in_w && last.d_plus.min(last.d_minus) > mu0 + 1e-7 {
            return Err(Error::InvarianceViolation(format!(
                "boundary point (s, t) = ({:.4e}, {:.4e}) left W: cone distances {:.4e}, {:.4e} > mu0 = {mu0:.4e}",
                p.s, p.t, last.d_plus, last.d_minus
            )));
        }
        next.label = RegionLabel::classify(last.d_plus, last.d_minus, mu0);
        next.in_w = p.in_w || next.label != RegionLabel::SignChangingRegion;
        next.energy = last.energy;
        next.u = traj.final_u().clone();
    }
    next.energy_history.push(next.energy);
    next.s_history.push(next.in_s());
    Ok(next)
}

/// Runs the flow with `config` from every non-frozen image. Frozen points
/// are copied unchanged; boundary points in `W` must stay within `μ₀` (up
/// to `1e-7`) of a cone.
pub fn deform_surface(
    prob: &EnergyProblem,
    mesh: &SurfaceMesh,
    config: &FlowConfig,
) -> Result<SurfaceMesh> {
    let points = mesh
        .points
        .par_iter()
        .map(|p| advance_point(prob, p, config, mesh.mu0))
        .collect::<Result<Vec<_>>>()?;
    Ok(SurfaceMesh {
        points,
        ..mesh.clone()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MinimaxConfig {
    pub radial: usize,
    pub angular: usize,
    /// Deepest local refinement level around the maximizer.
    pub levels: u32,
    /// Refinement rounds after each sweep.
    pub refine_rounds: usize,
    pub max_iter: usize,
    /// Stop once the last three sups differ by at most
    /// `stall_tol·max(1, |r|)`.
    pub stall_tol: f64,
    /// Band half-width `ε = band·max(1, |r|)`; `ε̄ = 2ε`.
    pub band: f64,
    /// Cap on the deformation horizon `16ε/b̂`.
    pub horizon_cap: f64,
    /// Floor for the descent-rate estimate `b̂`.
    pub rate_floor: f64,
    /// Band points with `m/(1+‖u‖)` below this are excised from the sweep.
    pub excise_slope: f64,
    /// Excision radius `δ`.
    pub excise_radius: f64,
    /// Step-size controls of the per-point flows; `level`, `eps`, `eps_bar`,
    /// `t_max`, `tol_m`, `mu0`, `excised` and `delta` are set each sweep.
    pub flow: FlowConfig,
    pub tol_m: f64,
    pub refine: RefineOptions,
    /// Maximizers tried by the final refinement, best first.
    pub max_candidates: usize,
}

impl Default for MinimaxConfig {
    fn default() -> Self {
        Self {
            radial: 8,
            angular: 16,
            levels: 24,
            refine_rounds: 6,
            max_iter: 40,
            stall_tol: 1e-4,
            band: 0.01,
            horizon_cap: 0.05,
            rate_floor: 1e-3,
            excise_slope: 1e-3,
            excise_radius: 1e-6,
            flow: FlowConfig {
                max_steps: 2000,
                ..FlowConfig::default()
            },
            tol_m: 1e-6,
            refine: RefineOptions::default(),
            max_candidates: 4,
        }
    }
}

impl MinimaxConfig {
    fn validate(&self) -> Result<()> {
        let ok = self.radial >= 1
            && self.angular >= 1
            && self.levels <= 24
            && self.max_iter >= 1
            && self.stall_tol >= 0.0
            && self.band > 0.0
            && self.horizon_cap > 0.0
            && self.rate_floor > 0.0
            && self.excise_slope >= 0.0
            && self.excise_radius > 0.0
            && self.tol_m > 0.0
            && self.max_candidates >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "invalid minimax configuration: {self:?}"
            )))
        }
    }

    /// Flow configuration of one sweep at level `r`.
    pub fn sweep_flow(
        &self,
        prob: &EnergyProblem,
        mesh: &SurfaceMesh,
        r: f64,
    ) -> Result<FlowConfig> {
        let eps = self.band * r.abs().max(1.0);
        let mut rate = f64::INFINITY;
        let mut excised = vec![];
        for p in mesh
            .points
            .iter()
            .filter(|p| p.in_s() && !p.frozen && (p.energy - r).abs() < 2.0 * eps)
        {
            let m = prob.slope(&p.u)?.value;
            let norm = prob.space().h1_norm(&p.u)?;
            if m / (1.0 + norm) <= self.excise_slope {
                excised.push(p.u.clone());
            } else {
                rate = rate.min((1.0 + norm) * m.min(1.0) * m);
            }
        }
        let rate = rate.max(self.rate_floor);
        let horizon = (16.0 * eps / rate).min(self.horizon_cap);
        Ok(FlowConfig {
            level: Some(r),
            eps,
            eps_bar: 2.0 * eps,
            t_max: horizon,
            tol_m: self.tol_m,
            mu0: Some(mesh.mu0),
            dt0: self.flow.dt0.min(horizon),
            dt_min: self.flow.dt_min.min(horizon),
            excised,
            delta: self.excise_radius,
            ..self.flow.clone()
        })
    }
}

/// Resumable state of the minimax iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimaxCheckpoint {
    pub config: MinimaxConfig,
    pub frame: LinkingFrame,
    pub alpha: f64,
    pub beta: f64,
    pub mesh: SurfaceMesh,
    /// Every sweep applied so far; new mesh points replay them.
    pub sweeps: Vec<FlowConfig>,
    /// Sup over the point set present after each iteration's refinement.
    pub live_sups: Vec<f64>,
    pub iterations: usize,
    pub stabilized: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateAttempt {
    pub s: f64,
    pub t: f64,
    pub start_energy: f64,
    pub outcome: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MinimaxReport {
    pub alpha: f64,
    pub beta: f64,
    /// Sup of `J` over `γ_k(Q) ∩ S` on the final point set, per sweep.
    pub r_estimates: Vec<f64>,
    pub live_sups: Vec<f64>,
    pub r_final: f64,
    /// Largest `|J(max) − J(neighbor)|` over the finest mesh neighbors of
    /// the maximizer.
    pub mesh_tol: f64,
    pub mesh_points: usize,
    pub maximizer: Field,
    pub maximizer_param: (f64, f64),
    pub critical: Field,
    pub selection: Field,
    pub energy: f64,
    pub slope: f64,
    pub d_plus: f64,
    pub d_minus: f64,
    pub label: RegionLabel,
    /// Sign changes along the node order; one-dimensional grids only.
    pub sign_changes: Option<usize>,
    pub iterations: usize,
    pub stabilized: bool,
    pub converged: bool,
    pub attempts: Vec<CandidateAttempt>,
    pub notes: Vec<String>,
}

/// Number of sign changes in `u`, ignoring entries below `1e-12·max|u|`.
pub fn count_sign_changes(u: &DVector<f64>) -> usize {
    let floor = 1e-12 * u.amax();
    let mut last = 0.0f64;
    let mut changes = 0;
    for &v in u.iter().filter(|v| v.abs() > floor) {
        if last != 0.0 && v.signum() != last {
            changes += 1;
        }
        last = v.signum();
    }
    changes
}

pub struct MinimaxRun<'a> {
    prob: &'a EnergyProblem,
    cp: MinimaxCheckpoint,
}

impl<'a> MinimaxRun<'a> {
    /// Builds the identity surface, checks the linking gap and refines
    /// around the initial maximizer.
    pub fn start(
        prob: &'a EnergyProblem,
        frame: &LinkingFrame,
        config: MinimaxConfig,
    ) -> Result<Self> {
        config.validate()?;
        let mesh = SurfaceMesh::new(prob, frame, config.radial, config.angular, config.levels)?;
        let (alpha, beta) = estimate_alpha_beta(frame, &mesh)?;
        if mesh.sup().is_none() {
            return Err(Error::NoLinkingWindow {
                reason: "no mesh point of Q lies in the sign-changing region".into(),
                scan: frame.scan.clone(),
            });
        }
        let mut run = Self {
            prob,
            cp: MinimaxCheckpoint {
                config,
                frame: frame.clone(),
                alpha,
                beta,
                mesh,
                sweeps: vec![],
                live_sups: vec![],
                iterations: 0,
                stabilized: false,
            },
        };
        run.refine_around_top()?;
        Ok(run)
    }

    pub fn resume(prob: &'a EnergyProblem, checkpoint: MinimaxCheckpoint) -> Result<Self> {
        checkpoint.config.validate()?;
        for p in &checkpoint.mesh.points {
            prob.space().check(&p.u)?;
        }
        Ok(Self {
            prob,
            cp: checkpoint,
        })
    }

    pub fn checkpoint(&self) -> &MinimaxCheckpoint {
        &self.cp
    }

    pub fn done(&self) -> bool {
        self.cp.stabilized || self.cp.iterations >= self.cp.config.max_iter
    }

    /// Image of a new lattice point under all sweeps so far.
    fn replay(&self, key: ParamKey, depth: u32) -> Result<MeshPoint> {
        let mesh = &self.cp.mesh;
        let mut p = mesh.identity_point(self.prob, &self.cp.frame, key, depth)?;
        for sweep in &self.cp.sweeps {
            p = advance_point(self.prob, &p, sweep, mesh.mu0)?;
        }
        Ok(p)
    }

    /// Halves the local spacing around the current maximizer, up to
    /// `refine_rounds` times, then records the sup.
    fn refine_around_top(&mut self) -> Result<()> {
        for _ in 0..self.cp.config.refine_rounds {
            let Some(top) = self.cp.mesh.sup_index() else {
                break;
            };
            let (key, level) = {
                let p = &self.cp.mesh.points[top];
                (p.key, p.refined + 1)
            };
            if level > self.cp.mesh.levels || key.0 == 0 {
                break;
            }
            self.cp.mesh.points[top].refined = level;
            let step = 1u64 << (self.cp.mesh.levels - level);
            let fresh: Vec<ParamKey> = offsets(key, step, self.cp.mesh.max_key())
                .into_iter()
                .filter(|k| !self.cp.mesh.points.iter().any(|p| p.key == *k))
                .collect();
            let added = fresh
                .into_par_iter()
                .map(|k| self.replay(k, level))
                .collect::<Result<Vec<_>>>()?;
            self.cp.mesh.points.extend(added);
        }
        let sup = self.cp.mesh.sup().ok_or_else(|| {
            Error::NotConverged("every mesh image left the sign-changing region".into())
        })?;
        self.cp.live_sups.push(sup);
        Ok(())
    }

    /// One deformation sweep, local refinement, and a new sup evaluation.
    /// Returns whether the iteration has stopped.
    pub fn iterate(&mut self) -> Result<bool> {
        if self.done() {
            return Ok(true);
        }
        let r = *self.cp.live_sups.last().unwrap();
        let flow = self.cp.config.sweep_flow(self.prob, &self.cp.mesh, r)?;
        self.cp.mesh = deform_surface(self.prob, &self.cp.mesh, &flow)?;
        self.cp.sweeps.push(flow);
        self.cp.iterations += 1;
        self.refine_around_top()?;
        let s = &self.cp.live_sups;
        let n = s.len();
        if n >= 3 {
            let last = &s[n - 3..];
            let hi = last.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = last.iter().copied().fold(f64::INFINITY, f64::min);
            self.cp.stabilized = hi - lo <= self.cp.config.stall_tol * s[n - 1].abs().max(1.0);
        }
        Ok(self.done())
    }

    /// Iterates to the stopping rule, then refines the best maximizers with
    /// Newton until one lands in the sign-changing region with a small
    /// slope.
    pub fn finish(mut self) -> Result<MinimaxReport> {
        while !self.iterate()? {}
        let prob = self.prob;
        let cp = self.cp;
        let mesh = &cp.mesh;
        let ranked = mesh.ranked_s_points();
        let top = ranked[0];
        let r_final = mesh.points[top].energy;
        let mesh_tol = mesh
            .neighbors(top)
            .iter()
            .map(|&k| (mesh.points[k].energy - r_final).abs())
            .fold(0.0, f64::max);

        let mut attempts = vec![];
        let mut chosen = None;
        for &k in ranked.iter().take(cp.config.max_candidates) {
            let p = &mesh.points[k];
            let outcome = match newton_refine(prob, &p.u, cp.config.refine) {
                Err(e) => format!("refinement failed: {e}"),
                Ok(r) => {
                    let slope = prob.slope(&r.u)?.value;
                    let (dp, dm) = dist_to_cones(prob.space(), &r.u)?;
                    let label = RegionLabel::classify(dp, dm, mesh.mu0);
                    let ok = slope <= cp.config.tol_m && label == RegionLabel::SignChangingRegion;
                    let outcome = if ok {
                        "converged".to_string()
                    } else if label != RegionLabel::SignChangingRegion {
                        format!("wrong region: {}", label.as_str())
                    } else {
                        format!("slope {slope:.3e} above tolerance")
                    };
                    if ok || chosen.is_none() {
                        chosen = Some((r, slope, dp, dm, label, ok));
                    }
                    outcome
                }
            };
            let done = outcome == "converged";
            attempts.push(CandidateAttempt {
                s: p.s,
                t: p.t,
                start_energy: p.energy,
                outcome,
            });
            if done {
                break;
            }
        }

        let mut notes = vec![
            "Q taken as the half disc {s e1 + t e2 : t >= 0, |.| <= R} in span{phi1, phi2}"
                .to_string(),
            "critical point extracted by semismooth Newton from the surface maximizer".to_string(),
        ];
        let (critical, selection, slope, dp, dm, label, converged) = match chosen {
            Some((r, slope, dp, dm, label, ok)) => (r.u, r.selection, slope, dp, dm, label, ok),
            None => {
                notes.push("no candidate could be refined; reporting the raw maximizer".into());
                let u = mesh.points[top].u.clone();
                let s = prob.slope(&u)?;
                let (dp, dm) = dist_to_cones(prob.space(), &u)?;
                let label = RegionLabel::classify(dp, dm, mesh.mu0);
                (u, s.selection, s.value, dp, dm, label, false)
            }
        };
        let energy = prob.energy(&critical)?;
        let sign_changes = (prob.space().grid().dimension() == 1)
            .then(|| count_sign_changes(critical.as_vector()));
        Ok(MinimaxReport {
            alpha: cp.alpha,
            beta: cp.beta,
            r_estimates: mesh.sup_history(),
            live_sups: cp.live_sups.clone(),
            r_final,
            mesh_tol,
            mesh_points: mesh.points.len(),
            maximizer: mesh.points[top].u.clone(),
            maximizer_param: (mesh.points[top].s, mesh.points[top].t),
            critical,
            selection,
            energy,
            slope,
            d_plus: dp,
            d_minus: dm,
            label,
            sign_changes,
            iterations: cp.iterations,
            stabilized: cp.stabilized,
            converged,
            attempts,
            notes,
        })
    }
}

/// Full minimax pipeline from the identity surface. Non-convergence is
/// reported through `MinimaxReport::converged`.
pub fn minimax_iterate(
    prob: &EnergyProblem,
    frame: &LinkingFrame,
    config: &MinimaxConfig,
) -> Result<MinimaxReport> {
    MinimaxRun::start(prob, frame, config.clone())?.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cone::select_mu0;
    use crate::mesh::{DiscreteSpace, GridSpec};
    use crate::potential::PiecewisePotential;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn benchmark(n: usize, lambda: f64) -> EnergyProblem {
        let s = DiscreteSpace::new(GridSpec::interval(0.0, 1.0, n)).unwrap();
        EnergyProblem::new(s, PiecewisePotential::power(4.0).unwrap(), lambda).unwrap()
    }

    fn frame(prob: &EnergyProblem, scan: &ScanConfig) -> Result<LinkingFrame> {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mu0 = select_mu0(prob, 40, &mut rng).unwrap().mu0;
        build_frame(prob, mu0, scan, &mut rng)
    }

    #[test]
    fn frame_satisfies_its_invariants() {
        let prob = benchmark(31, 1.0);
        let f = frame(&prob, &ScanConfig::default()).unwrap();
        assert!(0.0 < f.delta_t && f.delta_t < f.radius);
        assert!(f.t_energies.iter().all(|&j| j > 0.0));
        assert!(f.t_distances.iter().all(|&d| d > f.mu0));
        for j in 0..64 {
            let th = std::f64::consts::TAU * j as f64 / 64.0;
            let u = f.embed(f.radius * th.cos(), f.radius * th.sin());
            assert!(prob.energy(&u).unwrap() < 0.0);
        }
        for p in f.t_points() {
            let label = crate::cone::region_of(prob.space(), &p, f.mu0).unwrap();
            assert_eq!(label, RegionLabel::SignChangingRegion);
        }
    }

    #[test]
    fn vanishing_lambda_has_no_linking_window() {
        let prob = benchmark(31, 1e-3);
        assert!(matches!(
            frame(&prob, &ScanConfig::default()),
            Err(Error::NoLinkingWindow { .. })
        ));
    }

    #[test]
    fn small_radius_violates_the_gap() {
        let prob = benchmark(31, 1.0);
        let auto = frame(&prob, &ScanConfig::default()).unwrap();
        let scan = ScanConfig {
            radius: Some(auto.delta_t * 1.5),
            ..Default::default()
        };
        let f = frame(&prob, &scan).unwrap();
        let mesh = SurfaceMesh::new(&prob, &f, 4, 8, 4).unwrap();
        assert!(matches!(
            estimate_alpha_beta(&f, &mesh),
            Err(Error::GapViolation { .. })
        ));
    }

    #[test]
    fn deformation_keeps_frozen_points_and_lowers_energy() {
        let prob = benchmark(31, 1.0);
        let f = frame(&prob, &ScanConfig::default()).unwrap();
        let mesh = SurfaceMesh::new(&prob, &f, 4, 8, 4).unwrap();
        assert!(mesh.points.iter().any(|p| p.frozen));
        let cfg = MinimaxConfig::default();
        let flow = cfg.sweep_flow(&prob, &mesh, mesh.sup().unwrap()).unwrap();
        let next = deform_surface(&prob, &mesh, &flow).unwrap();
        for (a, b) in mesh.points.iter().zip(&next.points) {
            if a.frozen {
                assert_eq!(a.u, b.u);
            }
            assert!(b.energy <= a.energy);
        }
        assert!(next.sup().unwrap() < mesh.sup().unwrap());
    }

    #[test]
    fn offsets_collapse_at_the_origin_and_respect_bounds() {
        let o = offsets((1, 0), 1, (4, 4));
        assert!(o.contains(&(0, 0)));
        assert!(o.iter().all(|&(r, t)| r <= 4 && t <= 4));
        assert_eq!(o.iter().filter(|k| k.0 == 0).count(), 1);
    }

    #[test]
    fn sign_changes_ignore_round_off() {
        let u = DVector::from_vec(vec![0.0, 1.0, 1e-20, -2.0, -1.0, 0.5]);
        assert_eq!(count_sign_changes(&u), 2);
    }

    #[test]
    fn minimax_finds_nodal_solution_and_resumes_exactly() {
        let prob = benchmark(31, 1.0);
        let f = frame(&prob, &ScanConfig::default()).unwrap();
        let cfg = MinimaxConfig::default();
        let full = minimax_iterate(&prob, &f, &cfg).unwrap();
        assert!(full.converged, "{:?}", full.attempts);
        assert_eq!(full.sign_changes, Some(1));
        assert!(full.r_estimates.windows(2).all(|w| w[1] <= w[0]));
        assert!(full.r_final >= full.beta);

        let mut run = MinimaxRun::start(&prob, &f, cfg).unwrap();
        run.iterate().unwrap();
        let json = serde_json::to_string(run.checkpoint()).unwrap();
        let cp: MinimaxCheckpoint = serde_json::from_str(&json).unwrap();
        let resumed = MinimaxRun::resume(&prob, cp).unwrap().finish().unwrap();
        assert_eq!(
            serde_json::to_string(&resumed).unwrap(),
            serde_json::to_string(&full).unwrap()
        );
    }
}
