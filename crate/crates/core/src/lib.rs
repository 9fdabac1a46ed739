//! Iterative risk-sensitive optimal control for nonlinear stochastic systems
//! with process and measurement noise.
//!
//! The pipeline is: nominal rollout ([`problem`]), local linear-quadratic
//! model ([`approx`]), extended Kalman filter along the nominal
//! ([`estimation`]), risk-sensitive backward recursion over the joint
//! state/estimate system ([`backward`]) and the line-searched outer loop
//! ([`solver`]). [`eval`] runs noisy closed-loop rollouts and estimates the
//! exponential risk functional; [`models`] holds the planar arm, the wall
//! contact model and linear test systems.
//!
//! Numerics are generic over [`Real`] (`f32`/`f64`); the `*64` aliases below
//! fix the scalar to `f64`.

// Validation uses `!(x > 0)` so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod approx;
pub mod backward;
pub mod error;
pub mod estimation;
pub mod eval;
pub mod linalg;
pub mod models;
pub mod problem;
mod scalar;
pub mod solver;

pub use approx::{build_plan, linearize_stage, quadratize_stage, StageCost, StageDynamics, StagePlan, TerminalCost};
pub use backward::{
    backward_recursion, backward_step, control_stage_terms, predicted_value, ControlLaw, ControlStageTerms, ValueExpansion,
};
pub use error::{Error, Result};
pub use estimation::{ekf_forward, ekf_gain_optimality_check, online_filter_step, EstimatorPass};
pub use eval::{estimate_risk, stochastic_rollout, RiskEstimate, RolloutBatch};
pub use linalg::{Mat, Vect};
pub use problem::{
    validate_problem, zero_noise_rollout, ContinuousProblem, Dims, NoiseModel, Problem, SolverConfig, Trajectory,
};
pub use scalar::Real;
pub use solver::{evaluate_deterministic_cost, solve, SolveResult, Termination};

pub type Mat64 = Mat<f64>;
pub type Vect64 = Vect<f64>;
pub type Trajectory64 = Trajectory<f64>;
pub type NoiseModel64 = NoiseModel<f64>;
pub type SolverConfig64 = SolverConfig<f64>;
pub type StagePlan64 = StagePlan<f64>;
pub type EstimatorPass64 = EstimatorPass<f64>;
pub type ControlLaw64 = ControlLaw<f64>;
pub type ValueExpansion64 = ValueExpansion<f64>;
pub type SolveResult64 = SolveResult<f64>;
pub type RiskEstimate64 = RiskEstimate<f64>;
