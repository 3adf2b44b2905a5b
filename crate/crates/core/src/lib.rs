//! Solvers for evolution variational and quasi-variational inequalities with
//! pointwise constraints `|Lu| <= G[u]` on a derivative of the solution.
//!
//! The constraint is enforced by an exponential penalty `k_eps` together with
//! a `delta`-regularization of the principal part; both parameters are driven
//! to zero by continuation. Solution-dependent bounds are handled by a Picard
//! iteration on the map `phi -> u(phi)`. The [`oracle`] module holds slow,
//! independent checks.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod catalog;
pub mod constraints;
pub mod error;
pub mod field;
pub mod linalg;
pub mod mesh;
pub mod operators;
pub mod oracle;
pub mod penalty;
pub mod problem;
pub mod qvi;
pub mod stepper;

pub use catalog::ScalarField;
pub use constraints::{Composition, ConstraintHistory, ConstraintOperator, ConstraintSpec, CoupledState, Kernel};
pub use error::{Error, Result};
pub use field::{
    inner, linf_l2_distance, norm_l2, norm_lp_spacetime, spacetime_l2_distance, violation_positive_part,
    ConstraintField, EdgeField, Field, SolveDiagnostics, Trajectory,
};
pub use mesh::{Grid, Point, TimeGrid};
pub use operators::{GrowthConstants, LinearOperatorL, MaterialLaw, OperatorKind, Reaction};
pub use oracle::{
    oracle_steady_state, oracle_vi_step, stability_experiment, steady_profile_1d, OracleOptions, OracleResult,
    StabilityReport,
};
pub use penalty::{k_eps, k_eps_delta, penalty_stress, phi_eps, PenaltyParams, PenaltyVariant};
pub use problem::ProblemSpec;
pub use qvi::{evaluate_s, qvi_fixed_point, qvi_solve, FixedPointResult, OuterOptions, QviResult, QviStage};
pub use stepper::{
    continuation_solve, newton_step_solve, residual, solve_penalized_evolution, ContinuationSchedule, NewtonOptions,
    StageSummary,
};
