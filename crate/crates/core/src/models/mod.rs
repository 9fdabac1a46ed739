//! Bundled models: the two-link arm, its task costs, and small linear
//! problems with closed-form answers.

pub mod contact;
pub mod costs;
pub mod linear;
pub mod manipulator;
pub mod viapoint;

pub use contact::{ContactProblem, WallContact};
pub use costs::{contact_cost, log_cosh, viapoint_cost, ContactCost, Viapoint, ViapointCost};
pub use linear::LinearProblem;
pub use manipulator::{end_effector_kinematics, manipulator_dynamics, ManipulatorParams};
pub use viapoint::ViapointProblem;
