//! Nodal critical points of nonsmooth energies by descending flows
//! constrained away from positive and negative cones.

pub mod banded;
pub mod calculus;
pub mod cone;
pub mod config;
pub mod error;
pub mod flow;
pub mod linking;
pub mod mesh;
pub mod potential;
pub mod qp;
pub mod refine;
pub mod run;

pub use error::{Error, Result};
pub use mesh::{DiscreteSpace, Eigenpair, Field, GridSpec};
pub use potential::{ClarkeInterval, Growth, PiecewisePotential, SamplePlan};
