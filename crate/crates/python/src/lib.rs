use std::path::PathBuf;

use nodal_core::calculus::{ConstraintSet, EnergyProblem};
use nodal_core::cone::{dist_to_cones, project_cone, region_of, select_mu0, Sign};
use nodal_core::config::{exit_code, RunConfig};
use nodal_core::flow::{integrate_flow, monitor_invariance, FlowConfig};
use nodal_core::refine::{newton_refine, RefineOptions};
use nodal_core::run::{execute, Command, RunOptions};
use nodal_core::{DiscreteSpace, Field, GridSpec, PiecewisePotential, SamplePlan};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

create_exception!(nodal, NodalError, PyException);

fn err(e: nodal_core::Error) -> PyErr {
    NodalError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn parse_sign(sign: &str) -> PyResult<Sign> {
    match sign {
        "+" | "positive" => Ok(Sign::Positive),
        "-" | "negative" => Ok(Sign::Negative),
        _ => Err(PyValueError::new_err(format!(
            "sign must be 'positive' or 'negative', got '{sign}'"
        ))),
    }
}

/// Finite-difference space on an interval or a rectangle.
#[pyclass(module = "nodal", frozen)]
struct Space {
    inner: DiscreteSpace,
}

#[pymethods]
impl Space {
    #[new]
    fn new(bounds: Vec<(f64, f64)>, n: Vec<usize>) -> PyResult<Self> {
        Ok(Self {
            inner: DiscreteSpace::new(GridSpec { bounds, n }).map_err(err)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn coords(&self) -> Vec<Vec<f64>> {
        self.inner.coords().to_vec()
    }

    /// The first `k` Dirichlet eigenpairs as `(value, vector)`.
    fn eigenpairs(&self, k: usize) -> PyResult<Vec<(f64, Vec<f64>)>> {
        let pairs = self.inner.eigenpairs(k).map_err(err)?;
        Ok(pairs
            .into_iter()
            .map(|p| (p.value, p.vector.to_vec()))
            .collect())
    }

    fn h1_norm(&self, u: Vec<f64>) -> PyResult<f64> {
        self.inner.h1_norm(&Field::from_vec(u)).map_err(err)
    }

    /// `(dist(u, P), dist(u, −P))` in the energy norm.
    fn cone_distances(&self, u: Vec<f64>) -> PyResult<(f64, f64)> {
        dist_to_cones(&self.inner, &Field::from_vec(u)).map_err(err)
    }

    fn project(&self, u: Vec<f64>, sign: &str) -> PyResult<Vec<f64>> {
        let r = project_cone(&self.inner, &Field::from_vec(u), parse_sign(sign)?).map_err(err)?;
        Ok(r.projection.to_vec())
    }

    fn region(&self, u: Vec<f64>, mu0: f64) -> PyResult<&'static str> {
        Ok(region_of(&self.inner, &Field::from_vec(u), mu0)
            .map_err(err)?
            .as_str())
    }
}

/// Piecewise-polynomial potential `j` built from a builtin name.
#[pyclass(module = "nodal", frozen)]
struct Potential {
    inner: PiecewisePotential,
}

#[pymethods]
impl Potential {
    #[new]
    fn new(spec: &str) -> PyResult<Self> {
        Ok(Self {
            inner: PiecewisePotential::builtin(spec).map_err(err)?,
        })
    }

    fn value(&self, s: f64) -> f64 {
        self.inner.eval(&[], s)
    }

    /// Clarke subdifferential of `j` at `s` as `(lo, hi)`.
    fn interval(&self, s: f64) -> (f64, f64) {
        let c = self.inner.clarke_interval(&[], s);
        (c.lo, c.hi)
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.inner.breakpoints().to_vec()
    }

    fn check_hypotheses<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.check_hypotheses(&SamplePlan::default()))
    }
}

/// Discrete energy `J(u) = ½⟨Au,u⟩ − λ Σ M_ii j(u_i)`.
#[pyclass(module = "nodal", frozen)]
struct Problem {
    inner: EnergyProblem,
}

#[pymethods]
impl Problem {
    #[new]
    fn new(space: &Space, potential: &Potential, lam: f64) -> PyResult<Self> {
        Ok(Self {
            inner: EnergyProblem::new(
                DiscreteSpace::new(space.inner.grid().clone()).map_err(err)?,
                potential.inner.clone(),
                lam,
            )
            .map_err(err)?,
        })
    }

    fn energy(&self, u: Vec<f64>) -> PyResult<f64> {
        self.inner.energy(&Field::from_vec(u)).map_err(err)
    }

    fn slope(&self, u: Vec<f64>) -> PyResult<f64> {
        Ok(self.inner.slope(&Field::from_vec(u)).map_err(err)?.value)
    }

    /// Slope relative to `whole`, `positive`, `negative` or `intersection`
    /// (the last three with cone radius `mu`).
    #[pyo3(signature = (u, set, mu=0.0))]
    fn set_slope(&self, u: Vec<f64>, set: &str, mu: f64) -> PyResult<f64> {
        let set = match set {
            "whole" => ConstraintSet::Whole,
            "positive" => ConstraintSet::Positive(mu),
            "negative" => ConstraintSet::Negative(mu),
            "intersection" => ConstraintSet::Intersection(mu),
            other => {
                return Err(PyValueError::new_err(format!(
                    "unknown constraint set '{other}'"
                )))
            }
        };
        Ok(self
            .inner
            .slope_on_set(&Field::from_vec(u), set)
            .map_err(err)?
            .value)
    }

    /// Auto-selected cone radius from `samples` random draws.
    #[pyo3(signature = (samples=200, seed=0))]
    fn select_mu0(&self, samples: usize, seed: u64) -> PyResult<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(select_mu0(&self.inner, samples, &mut rng).map_err(err)?.mu0)
    }

    /// Integrates the descending flow. `config` is a JSON object with
    /// flow settings; returns the trajectory and its invariance verdict.
    #[pyo3(signature = (u0, config=None))]
    fn flow<'py>(
        &self,
        py: Python<'py>,
        u0: Vec<f64>,
        config: Option<&str>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let cfg: FlowConfig = match config {
            Some(text) => {
                serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?
            }
            None => FlowConfig::default(),
        };
        let prob = &self.inner;
        let u0 = Field::from_vec(u0);
        let traj = py.detach(|| integrate_flow(prob, &u0, &cfg)).map_err(err)?;
        let verdict = cfg.mu0.map(|mu| monitor_invariance(&traj, mu));
        #[derive(Serialize)]
        struct Out<'a> {
            trajectory: &'a nodal_core::flow::Trajectory,
            invariance: Option<nodal_core::flow::InvarianceVerdict>,
        }
        to_py(
            py,
            &Out {
                trajectory: &traj,
                invariance: verdict,
            },
        )
    }

    /// Semismooth Newton from `u`; returns `(u*, residual)`.
    fn refine(&self, py: Python<'_>, u: Vec<f64>) -> PyResult<(Vec<f64>, f64)> {
        let prob = &self.inner;
        let u = Field::from_vec(u);
        let r = py
            .detach(|| newton_refine(prob, &u, RefineOptions::default()))
            .map_err(err)?;
        Ok((r.u.to_vec(), r.residual))
    }
}

/// Hex SHA-256 of the canonical form of a JSON run configuration.
#[pyfunction]
fn config_hash(config: &str) -> PyResult<String> {
    Ok(RunConfig::from_json(config).map_err(err)?.hash())
}

/// Runs `solve`, `flow`, `verify` or `spectrum` and returns
/// `(exit_code, summary)` with the same codes as the command-line tool.
#[pyfunction]
#[pyo3(signature = (command, config, out, start=None, seed=None))]
fn run(
    py: Python<'_>,
    command: &str,
    config: &str,
    out: PathBuf,
    start: Option<String>,
    seed: Option<u64>,
) -> PyResult<(i32, String)> {
    let cmd = match command {
        "solve" => Command::Solve,
        "flow" => Command::Flow,
        "verify" => Command::Verify,
        "spectrum" => Command::Spectrum,
        other => return Err(PyValueError::new_err(format!("unknown command '{other}'"))),
    };
    let mut cfg = match RunConfig::from_json(config) {
        Ok(c) => c,
        Err(e) => return Ok((exit_code(&e), e.to_string())),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let opts = RunOptions {
        out,
        start,
        interrupt_after: None,
    };
    Ok(match py.detach(|| execute(cmd, &cfg, &opts)) {
        Ok(o) => (o.exit_code, o.summary),
        Err(e) => (exit_code(&e), e.to_string()),
    })
}

#[pymodule]
fn nodal(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("NodalError", m.py().get_type::<NodalError>())?;
    m.add_class::<Space>()?;
    m.add_class::<Potential>()?;
    m.add_class::<Problem>()?;
    m.add_function(wrap_pyfunction!(config_hash, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
