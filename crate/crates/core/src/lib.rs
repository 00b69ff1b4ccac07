//! Numerical laboratory for obstruction-bundle gluing of Morse flowlines on the flat torus.

pub mod banded;
pub mod complex;
pub mod deformation;
pub mod error;
pub mod flowline;
pub mod integrator;
pub mod linear_analysis;
pub mod obg_t;
pub mod morse_system;
pub mod obg_zero;
pub mod orbit;
pub mod scalar;

pub use error::{ErrorClass, ObgError, Result};
pub use morse_system::{CriticalPoint, DomainSpec, GradientField, MorseSystem, SystemConfig, M2, V2};
pub use complex::{build_complex, homology_ranks, morse_smale_complex, ChainComplex};
pub use deformation::{DeformationOptions, ObstructionSolver};
pub use flowline::{find_connections, Flowline, FlowlineOptions, TorusCatalog};
pub use linear_analysis::LinearizedPath;
pub use obg_t::{continuation_oracle, multilevel_solve, t_verdict, PerturbationField, PerturbedSystem, TGluingVerdict, TSide};
pub use obg_zero::{gluing_verdict, shooting_oracle, GluingVerdict};

/// Gluing parameters in double precision.
pub type GluingProfile = obg_zero::GluingProfile<f64>;
/// Gluing parameters in single precision, for the closed-form sections.
pub type GluingProfileF32 = obg_zero::GluingProfile<f32>;
/// One level of the multi-level chain in double precision.
pub type ChainLevel = obg_t::ChainLevel<f64>;
/// One level of the multi-level chain in single precision.
pub type ChainLevelF32 = obg_t::ChainLevel<f32>;
/// Back-substitution outcome in double precision.
pub type MultilevelOutcome = obg_t::MultilevelOutcome<f64>;
/// Parameter interval in double precision.
pub type Interval = obg_zero::Interval<f64>;
