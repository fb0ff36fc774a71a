//! Command pipelines (`solve`, `flow`, `verify`, `spectrum`) and their
//! artifacts.
//!
//! All randomness comes from one `ChaCha8Rng` seeded with `RunConfig::seed`
//! and is drawn in this order: μ₀ fitting samples, Schauder samples, then
//! (solve) the random `T` directions or (verify) the slope cross-check
//! states. `solve` and `flow` write a resumable checkpoint; a rerun with the
//! same config hash continues from it.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::calculus::{ps_monitor, ConstraintSet, EnergyProblem, PsOptions, PsReport};
use crate::cone::{
    boundary_sample, check_schauder, random_field, select_mu0, InvarianceReport, Mu0Selection, Sign,
};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::flow::{
    monitor_invariance, FlowCheckpoint, FlowConfig, FlowRun, InvarianceVerdict, Termination,
    Trajectory,
};
use crate::linking::{build_frame, MinimaxCheckpoint, MinimaxRun};
use crate::mesh::{DiscreteSpace, Field};
use crate::potential::{HypothesisReport, SamplePlan};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Solve,
    Flow,
    Verify,
    Spectrum,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Flow => "flow",
            Command::Verify => "verify",
            Command::Spectrum => "spectrum",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out: PathBuf,
    /// Start field for `flow` and for `verify` without a stored trajectory.
    pub start: Option<String>,
    /// Stop after writing this many checkpoints (simulated interruption).
    pub interrupt_after: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub exit_code: i32,
    pub summary: String,
    pub interrupted: bool,
}

impl Outcome {
    fn new(exit_code: i32, summary: String) -> Self {
        Self {
            exit_code,
            summary,
            interrupted: false,
        }
    }

    fn interrupted(stage: &str) -> Self {
        Self {
            exit_code: 0,
            summary: format!("interrupted after checkpoint in stage {stage}"),
            interrupted: true,
        }
    }
}

/// JSON artifact wrapper carrying the config hash.
#[derive(Debug, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub config_hash: String,
    pub kind: String,
    pub data: T,
}

pub struct Artifacts {
    dir: PathBuf,
    hash: String,
    log: Vec<String>,
}

impl Artifacts {
    pub fn new(dir: &Path, hash: String) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            log: vec![format!("config_hash {hash}")],
            hash,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn log(&mut self, line: impl Into<String>) {
        self.log.push(line.into());
    }

    fn create(&self, name: &str) -> Result<BufWriter<fs::File>> {
        Ok(BufWriter::new(fs::File::create(self.path(name))?))
    }

    pub fn json<T: Serialize>(&self, name: &str, kind: &str, data: &T) -> Result<()> {
        let env = Envelope {
            config_hash: self.hash.clone(),
            kind: kind.to_string(),
            data,
        };
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, &env)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    pub fn field_csv(&self, name: &str, space: &DiscreteSpace, u: &Field) -> Result<()> {
        let mut w = self.create(name)?;
        writeln!(w, "# config_hash={}", self.hash)?;
        space.write_field_csv(u, &mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn trajectory_csv(&self, name: &str, traj: &Trajectory) -> Result<()> {
        let mut w = self.create(name)?;
        writeln!(w, "# config_hash={}", self.hash)?;
        traj.write_csv(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn finish(&self) -> Result<()> {
        let mut w = self.create("run.log")?;
        for line in &self.log {
            writeln!(w, "{line}")?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Reads the payload of a JSON artifact.
pub fn read_envelope<T: DeserializeOwned>(path: &Path) -> Result<Envelope<T>> {
    let f = fs::File::open(path)?;
    Ok(serde_json::from_reader(BufReader::new(f))?)
}

pub fn build_problem(cfg: &RunConfig) -> Result<EnergyProblem> {
    let space = DiscreteSpace::new(cfg.grid.clone())?;
    EnergyProblem::new(space, cfg.potential.build()?, cfg.lambda)
}

/// Start field: `zero`, `[±][c*]phi<k>` or the path of a field CSV.
pub fn parse_start(space: &DiscreteSpace, spec: &str) -> Result<Field> {
    let spec = spec.trim();
    if spec == "zero" {
        return Ok(Field::zeros(space.len()));
    }
    if let Some(pos) = spec.find("phi") {
        let (coef, idx) = (&spec[..pos], &spec[pos + 3..]);
        if let Ok(k) = idx.parse::<usize>() {
            let coef = coef.strip_suffix('*').unwrap_or(coef);
            let c = match coef {
                "" | "+" => 1.0,
                "-" => -1.0,
                other => other
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad coefficient in start '{spec}'")))?,
            };
            if k == 0 || k > space.len() {
                return Err(Error::Config(format!(
                    "start '{spec}': eigenfield index must lie in 1..={}",
                    space.len()
                )));
            }
            let phi = space.eigenpairs(k)?.pop().unwrap().vector;
            return Ok(phi.scale(c));
        }
    }
    let path = Path::new(spec);
    if !path.exists() {
        return Err(Error::Config(format!(
            "start '{spec}' is neither a named start nor an existing file"
        )));
    }
    space.read_field_csv(BufReader::new(fs::File::open(path)?))
}

fn sample_plan(cfg: &RunConfig) -> SamplePlan {
    let mut plan = cfg.verify.hypothesis.clone();
    let d = cfg.grid.dimension();
    plan.domain_dim = d;
    if plan.points.iter().any(|p| p.len() != d) {
        plan.points = vec![cfg.grid.bounds.iter().map(|(a, b)| 0.5 * (a + b)).collect()];
    }
    plan
}

struct Preamble {
    hypotheses: HypothesisReport,
    mu0: f64,
    selection: Mu0Selection,
}

/// Hypotheses report and μ₀ (fitted even when μ₀ is explicit, so the
/// random stream is the same either way).
fn preamble(
    cfg: &RunConfig,
    prob: &EnergyProblem,
    rng: &mut ChaCha8Rng,
    art: &mut Artifacts,
) -> Result<Preamble> {
    let hypotheses = prob.potential().check_hypotheses(&sample_plan(cfg));
    art.log(format!(
        "stage hypotheses: {}",
        if hypotheses.all_passed() {
            "passed"
        } else {
            "FAILED"
        }
    ));
    art.json("hypotheses.json", "hypotheses", &hypotheses)?;
    let selection = select_mu0(prob, cfg.verify.mu0_samples, rng)?;
    let mu0 = cfg.mu0.unwrap_or(selection.mu0);
    art.log(format!(
        "stage mu0: {mu0:e} ({}, fitted C = {:e})",
        if cfg.mu0.is_some() {
            "explicit"
        } else {
            "auto"
        },
        selection.fitted_c
    ));
    Ok(Preamble {
        hypotheses,
        mu0,
        selection,
    })
}

fn schauder(
    cfg: &RunConfig,
    prob: &EnergyProblem,
    pre: &Preamble,
    rng: &mut ChaCha8Rng,
    art: &mut Artifacts,
) -> Result<InvarianceReport> {
    let report = check_schauder(
        prob,
        pre.mu0,
        cfg.verify.schauder_samples,
        pre.selection.fitted_c,
        &[],
        rng,
    )?;
    art.log(format!(
        "stage schauder: worst ratio {:e}, {}",
        report.worst_ratio,
        if report.passed { "passed" } else { "FAILED" }
    ));
    #[derive(Serialize)]
    struct Data<'a> {
        mu0_selection: &'a Mu0Selection,
        mu0: f64,
        report: &'a InvarianceReport,
    }
    art.json(
        "invariance.json",
        "schauder",
        &Data {
            mu0_selection: &pre.selection,
            mu0: pre.mu0,
            report: &report,
        },
    )?;
    Ok(report)
}

pub fn execute(cmd: Command, cfg: &RunConfig, opts: &RunOptions) -> Result<Outcome> {
    cfg.validate()?;
    let mut art = Artifacts::new(&opts.out, cfg.hash())?;
    art.log(format!("command {}", cmd.name()));
    art.log(format!("seed {}", cfg.seed));
    let result = match cmd {
        Command::Solve => solve(cfg, opts, &mut art),
        Command::Flow => flow(cfg, opts, &mut art),
        Command::Verify => verify(cfg, opts, &mut art),
        Command::Spectrum => spectrum(cfg, &mut art),
    };
    match &result {
        Ok(o) => art.log(format!("exit {}: {}", o.exit_code, o.summary)),
        Err(e) => art.log(format!("error: {e}")),
    }
    art.finish()?;
    result
}

fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("stage {name}: {m}")),
        Error::NotConverged(m) => Error::NotConverged(format!("stage {name}: {m}")),
        Error::InvarianceViolation(m) => Error::InvarianceViolation(format!("stage {name}: {m}")),
        Error::NoLinkingWindow { reason, scan } => Error::NoLinkingWindow {
            reason: format!("stage {name}: {reason}"),
            scan,
        },
        other => other,
    })
}

fn solve(cfg: &RunConfig, opts: &RunOptions, art: &mut Artifacts) -> Result<Outcome> {
    let prob = build_problem(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pre = stage("mu0", preamble(cfg, &prob, &mut rng, art))?;
    let inv = stage("schauder", schauder(cfg, &prob, &pre, &mut rng, art))?;
    if !inv.passed {
        return Err(Error::InvarianceViolation(format!(
            "stage schauder: worst image-distance ratio {:e} exceeds 1/2",
            inv.worst_ratio
        )));
    }
    let frame = match build_frame(&prob, pre.mu0, &cfg.linking, &mut rng) {
        Err(Error::NoLinkingWindow { reason, scan }) => {
            art.json("frame_scan.json", "frame_scan", &scan)?;
            return Err(Error::NoLinkingWindow {
                reason: format!("stage frame: {reason}"),
                scan,
            });
        }
        other => stage("frame", other)?,
    };
    art.log(format!(
        "stage frame: delta_t {:e}, R {:e}",
        frame.delta_t, frame.radius
    ));
    art.json("frame.json", "frame", &frame)?;

    let ckpt_path = art.path("minimax_checkpoint.json");
    let minimax = MinimaxConfig {
        tol_m: cfg.tol_m,
        ..cfg.minimax.clone()
    };
    let mut run = match read_envelope::<MinimaxCheckpoint>(&ckpt_path) {
        Ok(env) if env.config_hash == art.hash => {
            art.log(format!(
                "stage minimax: resuming at iteration {}",
                env.data.iterations
            ));
            MinimaxRun::resume(&prob, env.data)?
        }
        _ => stage("minimax", MinimaxRun::start(&prob, &frame, minimax))?,
    };
    let mut written = 0;
    while !run.done() {
        stage("minimax", run.iterate())?;
        art.json(
            "minimax_checkpoint.json",
            "minimax_checkpoint",
            run.checkpoint(),
        )?;
        written += 1;
        if opts.interrupt_after == Some(written) && !run.done() {
            return Ok(Outcome::interrupted("minimax"));
        }
    }
    art.json(
        "minimax_checkpoint.json",
        "minimax_checkpoint",
        run.checkpoint(),
    )?;
    let mut surface = Vec::new();
    run.checkpoint().mesh.write_csv(&mut surface)?;
    fs::write(
        art.path("surface.csv"),
        [
            format!("# config_hash={}\n", art.hash).into_bytes(),
            surface,
        ]
        .concat(),
    )?;
    let report = stage("minimax", run.finish())?;
    art.log(format!(
        "stage minimax: {} iterations, r_final {:e}, J(u*) {:e}, slope {:e}, label {}",
        report.iterations,
        report.r_final,
        report.energy,
        report.slope,
        report.label.as_str()
    ));
    art.json("minimax.json", "minimax", &report)?;
    art.field_csv("solution.csv", prob.space(), &report.critical)?;
    art.field_csv("maximizer.csv", prob.space(), &report.maximizer)?;
    if !pre.hypotheses.all_passed() {
        art.log("warning: potential fails check_hypotheses; linking guarantees do not apply");
    }
    Ok(if report.converged {
        Outcome::new(
            0,
            format!(
                "converged to a sign-changing solution with J = {:e}",
                report.energy
            ),
        )
    } else {
        Outcome::new(
            4,
            format!(
                "not converged: {:?}",
                report
                    .attempts
                    .iter()
                    .map(|a| &a.outcome)
                    .collect::<Vec<_>>()
            ),
        )
    })
}

use crate::linking::MinimaxConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowSummary {
    pub start: String,
    pub mu0: f64,
    pub termination: Termination,
    pub steps: usize,
    pub final_energy: f64,
    pub final_slope: f64,
    pub verdict: InvarianceVerdict,
    pub ps: PsReport,
}

fn flow(cfg: &RunConfig, opts: &RunOptions, art: &mut Artifacts) -> Result<Outcome> {
    let prob = build_problem(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pre = stage("mu0", preamble(cfg, &prob, &mut rng, art))?;
    let start = opts.start.clone().unwrap_or_else(|| "phi1".into());
    let u0 = stage("start", parse_start(prob.space(), &start))?;
    let config = FlowConfig {
        mu0: Some(pre.mu0),
        tol_m: cfg.tol_m,
        ..cfg.flow.clone()
    };

    let ckpt_path = art.path("flow_checkpoint.json");
    let mut run = match read_envelope::<FlowCheckpoint>(&ckpt_path) {
        Ok(env)
            if env.config_hash == art.hash && env.data.records[0].energy == prob.energy(&u0)? =>
        {
            art.log(format!(
                "stage flow: resuming at step {}",
                env.data.records.len() - 1
            ));
            FlowRun::resume(&prob, env.data)?
        }
        _ => FlowRun::start(&prob, u0, config)?,
    };
    let mut written = 0;
    while run.termination().is_none() {
        run.advance(cfg.checkpoint_every)?;
        art.json("flow_checkpoint.json", "flow_checkpoint", run.checkpoint())?;
        written += 1;
        if opts.interrupt_after == Some(written) && run.termination().is_none() {
            return Ok(Outcome::interrupted("flow"));
        }
    }
    let traj = run.finish()?;
    let verdict = monitor_invariance(&traj, pre.mu0);
    let ps = ps_monitor(prob.space(), &traj.ps_history(), PsOptions::default())?;
    let last = &traj.last_state().record;
    art.log(format!(
        "stage flow: {:?} after {} steps, J {:e}, slope {:e}, invariance {}",
        traj.termination,
        last.step,
        last.energy,
        last.slope,
        if verdict.passed { "clean" } else { "VIOLATED" }
    ));
    art.trajectory_csv("trajectory.csv", &traj)?;
    art.json("trajectory.json", "trajectory", &traj)?;
    art.field_csv("final.csv", prob.space(), traj.final_u())?;
    let summary = FlowSummary {
        start,
        mu0: pre.mu0,
        termination: traj.termination,
        steps: last.step,
        final_energy: last.energy,
        final_slope: last.slope,
        verdict,
        ps,
    };
    art.json("flow.json", "flow", &summary)?;
    Ok(if summary.verdict.passed {
        Outcome::new(0, format!("flow ended with {:?}", summary.termination))
    } else {
        Outcome::new(
            5,
            format!(
                "invariance violated: {} violation(s)",
                summary.verdict.violations.len()
            ),
        )
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlopeCheck {
    pub set: ConstraintSet,
    /// `dist(u, sign·P)` of the sampled state, when the set is a cone
    /// neighborhood.
    pub distance: f64,
    pub slope: f64,
    pub set_slope: f64,
    pub normal_cone: f64,
    pub consistent: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PsCheck {
    pub source: String,
    /// Stored states whose recorded `J` or `m` disagree with recomputation.
    pub inconsistent_states: Vec<usize>,
    pub ps: PsReport,
    pub invariance: InvarianceVerdict,
}

/// Stationarity threshold shared by the set slope and the normal-cone
/// criterion in the cross-check.
const STATIONARY: f64 = 1e-8;

fn slope_checks(
    cfg: &RunConfig,
    prob: &EnergyProblem,
    mu0: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<SlopeCheck>> {
    let space = prob.space();
    let mut out = vec![];
    // `clearance` is the radius of a ball around `u` inside the set. The
    // unit-ball sup then sees at least that fraction of the free slope.
    let mut push = |u: &Field, set: ConstraintSet, distance: f64, clearance: f64| -> Result<()> {
        let m = prob.slope(u)?.value;
        let md = prob.slope_on_set(u, set)?.value;
        let nc = prob.normal_cone_criterion(u, set)?.value;
        let tol = 1e-6 * (1.0 + m);
        let value_ok = md <= m + tol && md >= clearance.min(1.0) * m - tol;
        out.push(SlopeCheck {
            set,
            distance,
            slope: m,
            set_slope: md,
            normal_cone: nc,
            consistent: value_ok && ((md <= STATIONARY) == (nc <= STATIONARY)),
        });
        Ok(())
    };
    for _ in 0..cfg.verify.slope_samples {
        let norm = rng.gen_range(0.5..5.0);
        let u = random_field(space, rng, norm)?;
        push(&u, ConstraintSet::Whole, f64::NAN, f64::INFINITY)?;
        for sign in Sign::both() {
            let set = match sign {
                Sign::Positive => ConstraintSet::Positive(mu0),
                Sign::Negative => ConstraintSet::Negative(mu0),
            };
            let inner = boundary_sample(space, rng, sign, 0.5 * mu0)?;
            push(&inner, set, 0.5 * mu0, 0.5 * mu0)?;
            let edge = boundary_sample(space, rng, sign, mu0)?;
            push(&edge, set, mu0, 0.0)?;
        }
        let small = random_field(space, rng, 0.5 * mu0)?;
        push(&small, ConstraintSet::Intersection(mu0), f64::NAN, 0.0)?;
    }
    Ok(out)
}

fn verify(cfg: &RunConfig, opts: &RunOptions, art: &mut Artifacts) -> Result<Outcome> {
    let prob = build_problem(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pre = stage("mu0", preamble(cfg, &prob, &mut rng, art))?;
    let inv = stage("schauder", schauder(cfg, &prob, &pre, &mut rng, art))?;

    let checks = stage("slope", slope_checks(cfg, &prob, pre.mu0, &mut rng))?;
    let slope_ok = checks.iter().all(|c| c.consistent);
    art.log(format!(
        "stage slope: {} samples, {}",
        checks.len(),
        if slope_ok {
            "consistent"
        } else {
            "INCONSISTENT"
        }
    ));
    art.json("slope_check.json", "slope_check", &checks)?;

    let (source, traj) = match &cfg.verify.trajectory {
        Some(path) => {
            let env: Envelope<Trajectory> = stage("ps", read_envelope(path))?;
            if env.config_hash != art.hash {
                art.log(format!(
                    "warning: trajectory {} carries a different config hash",
                    path.display()
                ));
            }
            (path.display().to_string(), env.data)
        }
        None => {
            let start = opts.start.clone().unwrap_or_else(|| "phi1".into());
            let u0 = stage("start", parse_start(prob.space(), &start))?;
            let config = FlowConfig {
                mu0: Some(pre.mu0),
                tol_m: cfg.tol_m,
                ..cfg.flow.clone()
            };
            (
                format!("fresh flow from {start}"),
                crate::flow::integrate_flow(&prob, &u0, &config)?,
            )
        }
    };
    let history = traj.ps_history();
    let mut inconsistent_states = vec![];
    for (i, h) in history.iter().enumerate() {
        let e = stage("ps", prob.energy(&h.u))?;
        let m = stage("ps", prob.slope(&h.u))?.value;
        if (e - h.energy).abs() > 1e-9 * (1.0 + e.abs()) || (m - h.slope).abs() > 1e-6 * (1.0 + m) {
            inconsistent_states.push(i);
        }
    }
    let ps = stage(
        "ps",
        ps_monitor(prob.space(), &history, PsOptions::default()),
    )?;
    let invariance = monitor_invariance(&traj, pre.mu0);
    art.log(format!(
        "stage ps: {}, trajectory invariance {}",
        if ps.passed { "passed" } else { "FAILED" },
        if invariance.passed {
            "clean"
        } else {
            "VIOLATED"
        }
    ));
    if !inconsistent_states.is_empty() {
        art.log(format!(
            "stage ps: {} stored state(s) disagree with recomputed J or m",
            inconsistent_states.len()
        ));
    }
    let ps_ok = ps.passed && inconsistent_states.is_empty();
    let flow_ok = invariance.passed;
    art.json(
        "ps.json",
        "ps",
        &PsCheck {
            source,
            inconsistent_states,
            ps,
            invariance,
        },
    )?;

    let hyp_ok = pre.hypotheses.all_passed();
    let failed: Vec<&str> = [
        (hyp_ok, "hypotheses"),
        (inv.passed, "schauder"),
        (slope_ok, "slope"),
        (ps_ok, "ps"),
        (flow_ok, "trajectory invariance"),
    ]
    .iter()
    .filter(|(ok, _)| !ok)
    .map(|(_, n)| *n)
    .collect();
    Ok(if failed.is_empty() {
        Outcome::new(0, "all checks passed".into())
    } else if !inv.passed || !flow_ok {
        Outcome::new(5, format!("failed: {}", failed.join(", ")))
    } else {
        Outcome::new(1, format!("failed: {}", failed.join(", ")))
    })
}

fn spectrum(cfg: &RunConfig, art: &mut Artifacts) -> Result<Outcome> {
    let space = DiscreteSpace::new(cfg.grid.clone())?;
    let pairs = space.eigenpairs(cfg.spectrum.count)?;
    let mut w = BufWriter::new(fs::File::create(art.path("spectrum.csv"))?);
    writeln!(w, "# config_hash={}", art.hash)?;
    let coord_names: Vec<&str> = ["x", "y", "z"]
        .into_iter()
        .take(space.grid().dimension())
        .collect();
    writeln!(w, "k,lambda,{},value", coord_names.join(","))?;
    for (k, p) in pairs.iter().enumerate() {
        for (x, v) in space.coords().iter().zip(p.vector.iter()) {
            let xs: Vec<String> = x.iter().map(|c| format!("{c:e}")).collect();
            writeln!(w, "{},{:e},{},{:e}", k + 1, p.value, xs.join(","), v)?;
        }
    }
    w.flush()?;
    let values: Vec<f64> = pairs.iter().map(|p| p.value).collect();
    art.json("spectrum.json", "spectrum", &values)?;
    art.log(format!("stage spectrum: {} eigenvalues", values.len()));
    Ok(Outcome::new(0, format!("lambda_1 = {:e}", values[0])))
}
