//! Cooperative dynamics of qutrit assemblies with dipole-dipole coupling.
//!
//! The analytic tanglemeter, random-medium spectra, detuning-switch dynamics
//! and an exact product-space oracle for small assemblies.

pub mod analytic;
pub mod error;
pub mod media;
pub mod model;
pub mod oracle;
pub mod schedule;
pub mod validation;

pub use error::{Error, Result};
pub use model::{
    CouplingMatrix, DetuningSchedule, LinearGrid, PhysicalConfig, Region, RunConfig, Segment, SpectralDecomposition,
    Strictness, TanglemeterMatrix, ValidationWarning,
};
pub use num_complex::Complex64;
pub use analytic::{KernelParams, PopulationResult, Table};
pub use media::{DensityParams, EigenvalueHistogram, EnergyUnits, GeometrySample};
pub use oracle::{CompareParams, CouplingSpec, OracleReport, PairConvention, StateVector};
pub use validation::{validate_suite, ValidationReport};
