//! Evolve-filter-relax regularization for 2D periodic incompressible flow on a
//! staggered grid, with spectral filters learned from fine-grid snapshots.

pub mod config;
pub mod error;
pub mod filters;
pub mod grid;
pub mod io;
pub mod learning;
pub mod metrics;
pub mod pipeline;
pub mod scenarios;
pub mod sparse;
pub mod spectral;
pub mod timestepper;
pub mod tuning;

pub use config::{Method, RunConfig};
pub use error::{Error, Result};
pub use filters::{EfrIntegrator, RelaxPolicy, SpectralFilter, StepDiagnostics};
pub use grid::{PressureField, StaggeredGrid, VelocityField, VorticityField};
pub use metrics::{ErrorReport, TimeSeries};
pub use spectral::{SpectralField, SpectralOps, WavenumberShells};
pub use timestepper::{Closure, Forcing, SolverParams, Stepper};
