//! Run configuration: a single JSON document with `"auto"` sentinels for
//! `mu0`, `linking.delta_t` and `linking.radius`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::flow::FlowConfig;
use crate::linking::{MinimaxConfig, ScanConfig};
use crate::mesh::GridSpec;
use crate::potential::{Growth, PiecewisePotential, SamplePlan};

/// Serde adapter mapping `None` to the string `"auto"`.
pub mod auto_value {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    enum Word {
        #[serde(rename = "auto")]
        Auto,
    }

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Value(f64),
        Auto(Word),
    }

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(x) => Repr::Value(*x),
            None => Repr::Auto(Word::Auto),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        match Repr::deserialize(d)
            .map_err(|_| serde::de::Error::custom("expected a number or \"auto\""))?
        {
            Repr::Value(x) => Ok(Some(x)),
            Repr::Auto(_) => Ok(None),
        }
    }
}

/// Potential by builtin name (`"power:4"`, `"two_slope:1,2"`, ...) with an
/// optional growth declaration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "PotentialRepr")]
pub struct PotentialSpec {
    pub builtin: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub growth: Option<Growth>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PotentialRepr {
    Name(String),
    Full {
        builtin: String,
        #[serde(default)]
        growth: Option<Growth>,
    },
}

impl From<PotentialRepr> for PotentialSpec {
    fn from(r: PotentialRepr) -> Self {
        match r {
            PotentialRepr::Name(builtin) => Self {
                builtin,
                growth: None,
            },
            PotentialRepr::Full { builtin, growth } => Self { builtin, growth },
        }
    }
}

impl PotentialSpec {
    pub fn build(&self) -> Result<PiecewisePotential> {
        let p = PiecewisePotential::builtin(&self.builtin)?;
        Ok(match self.growth {
            Some(g) => p.with_growth(g),
            None => p,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    pub mu0_samples: usize,
    pub schauder_samples: usize,
    /// Points per constraint set in the slope cross-check.
    pub slope_samples: usize,
    pub hypothesis: SamplePlan,
    /// Trajectory JSON written by `flow`; when absent `verify` integrates a
    /// fresh trajectory from `--start`.
    pub trajectory: Option<PathBuf>,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            mu0_samples: 200,
            schauder_samples: 500,
            slope_samples: 8,
            hypothesis: SamplePlan::default(),
            trajectory: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumSection {
    pub count: usize,
}

impl Default for SpectrumSection {
    fn default() -> Self {
        Self { count: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridSpec,
    pub potential: PotentialSpec,
    pub lambda: f64,
    #[serde(with = "auto_value", default)]
    pub mu0: Option<f64>,
    /// Slope tolerance shared by the flow and the minimax stage.
    #[serde(default = "default_tol_m")]
    pub tol_m: f64,
    #[serde(default)]
    pub seed: u64,
    /// Default artifact directory; `--out` overrides it. Not hashed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub flow: FlowConfig,
    /// Accepted flow steps (or minimax sweeps) between checkpoint writes.
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: usize,
    #[serde(default)]
    pub linking: ScanConfig,
    #[serde(default)]
    pub minimax: MinimaxConfig,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default)]
    pub spectrum: SpectrumSection,
}

fn default_tol_m() -> f64 {
    1e-6
}

fn default_checkpoint_every() -> usize {
    100
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.potential.build()?;
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be positive, got {}", self.lambda));
        }
        if let Some(mu) = self.mu0 {
            if !(mu > 0.0 && mu < 1.0) {
                return bad(format!("mu0 must lie in (0, 1), got {mu}"));
            }
        }
        if !(self.tol_m > 0.0) {
            return bad(format!("tol_m must be positive, got {}", self.tol_m));
        }
        if self.checkpoint_every == 0 {
            return bad("checkpoint_every must be positive".into());
        }
        if self.spectrum.count == 0 || self.spectrum.count > self.grid.node_count() {
            return bad(format!(
                "spectrum.count must lie in 1..={}",
                self.grid.node_count()
            ));
        }
        if self.verify.mu0_samples == 0 {
            return bad("verify.mu0_samples must be positive".into());
        }
        self.flow
            .validate()
            .map_err(|e| Error::Config(e.to_string()))
    }

    /// Canonical JSON text: every field spelled out in declaration order,
    /// `output_dir` dropped.
    pub fn canonical(&self) -> String {
        let c = Self {
            output_dir: None,
            ..self.clone()
        };
        serde_json::to_string(&c).expect("config serializes")
    }

    /// Hex SHA-256 of [`RunConfig::canonical`].
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }
}

/// Process exit status for a pipeline error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::InvalidGrid(_)
        | Error::Potential(_)
        | Error::FlowConfig(_)
        | Error::ShapeMismatch { .. }
        | Error::Json(_)
        | Error::Io(_) => 2,
        Error::NoLinkingWindow { .. } | Error::GapViolation { .. } => 3,
        Error::NotConverged(_) | Error::Refinement(_) => 4,
        Error::InvarianceViolation(_) => 5,
        _ => 1,
    }
}
