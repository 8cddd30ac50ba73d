//! Viability-preserving passive torque control for planar serial chains.
//!
//! Numerical code is generic over [`scalar::Real`]; the aliases at the
//! crate root fix the scalar to `f64`, which is what the simulator uses.

mod binio;
pub mod control;
pub mod ds;
pub mod error;
pub mod geometry;
pub mod halfspace;
pub mod kinematics;
pub mod qp;
pub mod sca;
pub mod scalar;
pub mod sdf;
pub mod sim;
pub mod viability;

pub use error::{Error, Result};
pub use halfspace::ConstraintKind;

pub type RobotModel = kinematics::RobotModel<f64>;
pub type JointState = kinematics::JointState<f64>;
pub type DynamicsTerms = kinematics::DynamicsTerms<f64>;
pub type AttractorField = ds::AttractorField<f64>;
pub type DampingSpec = ds::DampingSpec<f64>;
pub type HalfSpace = halfspace::HalfSpace<f64>;
pub type BrakingTrajectory = viability::BrakingTrajectory<f64>;
pub type ViableAccelBox = viability::ViableAccelBox<f64>;
