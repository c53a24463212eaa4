#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod behavior;
pub mod chance;
pub mod deepc;
pub mod error;
pub mod io;
pub mod linalg;
pub mod linsys;
pub mod qp;
pub mod scalar;
pub mod sparse;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision instantiations.
pub mod f64 {
    pub type StateSpace = crate::linsys::StateSpace<f64>;
    pub type FeedbackGain = crate::linsys::FeedbackGain<f64>;
    pub type TrajectoryDataset = crate::linsys::TrajectoryDataset<f64>;
    pub type BehaviorMatrix = crate::behavior::BehaviorMatrix<f64>;
    pub type GaussianVector = crate::chance::GaussianVector<f64>;
    pub type CollisionConstraint = crate::chance::CollisionConstraint<f64>;
    pub type QpProblem = crate::qp::QpProblem<f64>;
    pub type QpSolution = crate::qp::QpSolution<f64>;
    pub type TrackingTask = crate::deepc::TrackingTask<f64>;
    pub type AgentSpec = crate::deepc::AgentSpec<f64>;
    pub type AgentWindow = crate::deepc::AgentWindow<f64>;
    pub type StepSolution = crate::deepc::StepSolution<f64>;
    pub type MissionAgent = crate::deepc::MissionAgent<f64>;
    pub type MissionLog = crate::deepc::MissionLog<f64>;
}
