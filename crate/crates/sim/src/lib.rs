//! Desk-scale planar biped simulator.
//!
//! Five rigid bodies (torso, two thighs, two shanks with rigid feet) on a
//! planar floating base, PD-actuated hips and knees, penalty foot contact,
//! and two deliberately different integration stacks (engines A and B) that
//! share only the 50 Hz control interface. Episode physics are drawn once
//! per episode into a [`DynamicsContext`] and held fixed.

mod context;
mod dynamics;
mod engine;
mod model;

pub use context::{
    sample_context, DrRanges, DynamicsContext, TerrainTier, ROUGH_JITTER_STD, SLOPE_ANGLE,
};
pub use dynamics::{
    add_contact_generalized, bias_forces, contact_forces, cross2, forward_dynamics, full_kin,
    inverse_dynamics, marker_angles, marker_kin, marker_positions, mass_matrix, mechanical_energy,
    solve_spd, update_anchors, AccelResult, BodyKin, ContactForce, FrictionAnchors, FullKin,
    PointKin, Vec2,
};
pub use engine::{
    apply_push, env_rng, pd_torque, step_physics, DelayBuffer, EngineConfig, EngineId, Env,
    Integrator, SimState, StepRecord, TickInfo,
};
pub use model::{
    RobotModel, JOINT_NAMES, MARKER_BASE, MARKER_FOOT_L, MARKER_FOOT_R, MARKER_HAND, MARKER_HEAD,
    MARKER_KNEE_L, MARKER_KNEE_R, MARKER_NAMES, NJ, NQ, NUM_MARKERS,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("robot model field {field} has invalid value {value}")]
    BadField { field: &'static str, value: f64 },
}
