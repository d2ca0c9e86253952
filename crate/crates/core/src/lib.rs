//! Preference elicitation for multi-objective finite-horizon MDPs from
//! pairwise policy comparisons, and exact weighted-trajectory-set
//! representations of policies.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the `*64`
//! aliases below fix the common double precision case.

// `!(x >= 0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod elicit;
pub mod feedback;
pub mod linalg;
pub mod momdp;
pub mod scalar;
pub mod solver;
pub mod trajset;

pub use basis::{
    build_directional_basis, estimate_all_ratios, estimate_ratio, orthonormal_complement, select_benchmark, BasisCache,
    BasisError, BenchmarkSelection, DirectionalBasis, RatioEstimates, RatioSearch,
};
pub use elicit::{run_elicitation, ElicitationError, ElicitationReport, EngineConfig, Flags, QueryCounts};
pub use feedback::{
    Comparison, ComparisonQuery, Oracle, OracleError, OracleSession, Phase, ReplayResponder, Representation, Responder,
    ScriptedResponder, SimulatedUser, Verdict,
};
pub use momdp::*;
pub use scalar::Scalar;
pub use solver::{
    assemble_ratio_matrix, estimate_precision, solve_full, truncate_and_solve, RatioMatrix, SolveMode, SolverError,
    WeightEstimate,
};
pub use trajset::{
    c4_compress, expand_compress, flow_decompose, represent_mixture, validate_set, WeightedTrajectorySet,
};

pub type Momdp64 = Momdp<f64>;
pub type Momdp32 = Momdp<f32>;
pub type ValueVector64 = ValueVector<f64>;
pub type MixturePolicy64 = MixturePolicy<f64>;
pub type SimulatedUser64 = SimulatedUser<f64>;
pub type OracleSession64 = OracleSession<f64>;
pub type ElicitationReport64 = ElicitationReport<f64>;
pub type WeightedTrajectorySet64 = WeightedTrajectorySet<f64>;
