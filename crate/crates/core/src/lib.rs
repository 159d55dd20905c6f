//! Geometric multi-task motion policies with hard safety constraints.
//!
//! A policy is assembled from three kinds of tasks defined on task manifolds
//! reached through smooth task maps:
//!
//! * behavior tasks ([`pbds::BehaviorTask`]): a potential, a dissipative force
//!   and a metric on the task manifold, blended by weighted least squares;
//! * safety tasks ([`safety::SafetyTask`]): exponential or backstepping
//!   barrier functions pulled back to linear inequalities on the
//!   configuration acceleration;
//! * control tasks ([`policy::ControlTask`]): residual force inputs that
//!   steer the system on a chosen task manifold and vanish when the input is
//!   zero.
//!
//! Each control step solves two small convex QPs ([`qp`]): the autonomous
//! safe acceleration, then the steered acceleration warm-started at it.
//! [`sim`] integrates the closed loop with RK4 and records traces, and
//! [`scenarios`] ships the sphere and 7-DOF arm experiments together with a
//! JSON configuration schema.

pub mod checks;
pub mod error;
pub mod geom;
pub mod kinematics;
pub mod linalg;
pub mod numdiff;
pub mod pbds;
pub mod policy;
pub mod qp;
pub mod safety;
pub mod scenarios;
pub mod sim;
pub mod taskmap;

pub use error::{Error, Result};

/// Dynamically sized column vector used throughout the crate.
pub type Vector = nalgebra::DVector<f64>;
/// Dynamically sized matrix used throughout the crate.
pub type Matrix = nalgebra::DMatrix<f64>;
