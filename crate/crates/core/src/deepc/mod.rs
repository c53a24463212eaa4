//! Coupled multi-agent data-driven predictive control.

mod mission;
mod predictor;
mod step;
mod task;

pub use mission::{run_mission, Controller, MissionAbort, MissionAgent, MissionConfig, MissionLog, StepRecord};
pub use predictor::{output_prediction, state_prediction_matrices, AffineOutputs, LinearPredictor, ROUND_OFF_FLOOR};
pub use step::{
    assemble_agent_qp_blocks, assemble_condensed_block, linearize_collisions, model_mpc_step, shifted_anchor, solve_step,
    straight_line_anchor, AgentPlan, AgentQpBlock, Formulation, ModelStep, PairRisk, Regularization, StepConfig, StepSolution, SCP_TOL,
    SLACK_WEIGHT,
};
pub use task::{
    constant_reference, geometric_sigma_schedule, horizon_weight, position_selector, AgentSpec, AgentWindow, SampleBox, TrackingTask,
};
