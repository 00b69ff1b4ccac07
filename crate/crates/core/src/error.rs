//! Error type shared by every module, with the process exit-code classification.

use thiserror::Error;

/// Broad failure classes; each maps to one CLI exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Invalid configuration or precondition (exit 2).
    Config,
    /// Numerical solver failure (exit 3).
    Solver,
    /// The gluing criterion does not apply to the input (exit 4).
    Inapplicable,
    /// The chain complex fails its consistency checks (exit 5).
    Homology,
}

impl ErrorClass {
    /// Process exit code associated with the class.
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Config => 2,
            ErrorClass::Solver => 3,
            ErrorClass::Inapplicable => 4,
            ErrorClass::Homology => 5,
        }
    }
}

#[derive(Debug, Error)]
pub enum ObgError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("non-Morse critical point at ({theta:.6}, {phi:.6}): |det Hess| = {det:.3e}")]
    NonMorse { theta: f64, phi: f64, det: f64 },

    #[error("mollification creates a near-zero gradient at ({theta:.6}, {phi:.6}): |grad| = {norm:.3e}")]
    MollifyZero { theta: f64, phi: f64, norm: f64 },

    #[error("no unstable directions at an index-0 critical point")]
    NoUnstableDirections,

    #[error("nonconvergent orbit: no chart entry within time {time:.3}")]
    NonconvergentOrbit { time: f64, partial: Vec<[f64; 2]> },

    #[error("segment too short: source-chart exit at s = {exit:.4} is outside the window; use a larger L")]
    SegmentTooShort { exit: f64 },

    #[error("tail not in linear regime: relative residual {residual:.3e}; use a larger standardization window")]
    TailNotLinear { residual: f64 },

    #[error("not a cokernel direction: growing-mode fraction {fraction:.3e} at the {end} end")]
    NotCokernel { fraction: f64, end: &'static str },

    #[error("profile too tight: {0}")]
    ProfileTooTight(String),

    #[error("not a broken flowline: {0}")]
    NotBrokenFlowline(String),

    #[error("window too small: {0}")]
    WindowTooSmall(String),

    #[error("non-unique zero: {count} sign changes on the slice R0 = {r0}")]
    NonUniqueZero { count: usize, r0: f64 },

    #[error("degenerate pairing {value:.3e} on {pair}: criterion inapplicable")]
    DegeneratePairing { value: f64, pair: String },

    #[error("R too small for contraction: {0}")]
    NonContractive(String),

    #[error("projection drift: <psi_0, kernel> = {value:.3e}")]
    PiDrift { value: f64 },

    #[error("support violates locality: {0}")]
    Locality(String),

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("d^2 != 0 in degree {degree} at entry ({row}, {col})")]
    DSquaredNonzero { degree: usize, row: usize, col: usize },

    #[error("homology ranks {found:?} differ from the expected {expected:?}")]
    HomologyMismatch { found: Vec<usize>, expected: Vec<usize> },
}

impl ObgError {
    pub fn class(&self) -> ErrorClass {
        use ObgError::*;
        match self {
            Config(_) | Precondition(_) => ErrorClass::Config,
            DegeneratePairing { .. } | Locality(_) => ErrorClass::Inapplicable,
            DSquaredNonzero { .. } | HomologyMismatch { .. } => ErrorClass::Homology,
            _ => ErrorClass::Solver,
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.class().exit_code()
    }

    /// Short machine-readable tag used in JSON error payloads.
    pub fn kind(&self) -> &'static str {
        use ObgError::*;
        match self {
            Config(_) => "config",
            Precondition(_) => "precondition",
            NonMorse { .. } => "non_morse",
            MollifyZero { .. } => "mollify_zero",
            NoUnstableDirections => "no_unstable_directions",
            NonconvergentOrbit { .. } => "nonconvergent_orbit",
            SegmentTooShort { .. } => "segment_too_short",
            TailNotLinear { .. } => "tail_not_linear",
            NotCokernel { .. } => "not_cokernel",
            ProfileTooTight(_) => "profile_too_tight",
            NotBrokenFlowline(_) => "not_broken_flowline",
            WindowTooSmall(_) => "window_too_small",
            NonUniqueZero { .. } => "non_unique_zero",
            DegeneratePairing { .. } => "degenerate_pairing",
            NonContractive(_) => "non_contractive",
            PiDrift { .. } => "pi_drift",
            Locality(_) => "locality",
            Singular(_) => "singular",
            DSquaredNonzero { .. } => "d_squared_nonzero",
            HomologyMismatch { .. } => "homology_mismatch",
        }
    }
}

pub type Result<T> = std::result::Result<T, ObgError>;
