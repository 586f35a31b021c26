//! Clip acceptance filtering.

use crate::packet::MotionPacket;
use hord_sim::{RobotModel, MARKER_FOOT_L, MARKER_FOOT_R, NJ, NQ, NUM_MARKERS};
use serde::{Deserialize, Serialize};

/// Extra angle allowed past the commanded joint range before a clip is
/// rejected: the simulator's soft limit stops are compliant, so feasible
/// rollouts can overshoot the range transiently.
const LIMIT_SLACK: f64 = 0.1;

/// A clip is rejected when feet sit below this height (meters, negative is
/// penetration) on more than [`MAX_PENETRATION_FRACTION`] of frames.
const PENETRATION_FLOOR: f64 = -0.005;
const MAX_PENETRATION_FRACTION: f64 = 0.05;

const MIN_DURATION: f64 = 2.0;
const MAX_DURATION: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    JointLimitViolation,
    ContactPenetrationExceeded,
    DurationOutOfRange,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClipFilterReport {
    pub clip_id: String,
    pub accepted: bool,
    pub reasons: Vec<RejectReason>,
}

/// Decide whether a clip is usable as a training reference. Checks clip
/// duration against the 2-10 s window, actuated dof trajectories against
/// the robot's joint ranges, and foot heights against the persistent
/// penetration bound. The dof and foot checks only apply to walker-shaped
/// packets (7 dofs / 7 joints); foreign skeletons are judged on duration
/// alone. The clip id is taken from the packet's text field.
pub fn filter_clip(p: &MotionPacket, robot: &RobotModel) -> ClipFilterReport {
    let mut reasons = Vec::new();
    let t = p.header.num_frames;

    if !(MIN_DURATION..=MAX_DURATION).contains(&p.header.duration) {
        reasons.push(RejectReason::DurationOutOfRange);
    }

    if p.header.num_dofs == NQ {
        'dofs: for frame in 0..t {
            for j in 0..NJ {
                let v = p.dof(frame, 3 + j);
                if v < robot.joint_lo[j] - LIMIT_SLACK || v > robot.joint_hi[j] + LIMIT_SLACK {
                    reasons.push(RejectReason::JointLimitViolation);
                    break 'dofs;
                }
            }
        }
    }

    if p.header.num_joints == NUM_MARKERS {
        // Foot markers are ankles riding above the contact surface, so a
        // marker below the floor height means the leg has punched through
        // the ground, not ordinary contact-spring compression.
        let sunk = (0..t)
            .filter(|&frame| {
                p.translation(frame, MARKER_FOOT_L)[2] < PENETRATION_FLOOR
                    || p.translation(frame, MARKER_FOOT_R)[2] < PENETRATION_FLOOR
            })
            .count();
        if sunk as f64 > MAX_PENETRATION_FRACTION * t as f64 {
            reasons.push(RejectReason::ContactPenetrationExceeded);
        }
    }

    ClipFilterReport {
        clip_id: p.header.text.clone().unwrap_or_default(),
        accepted: reasons.is_empty(),
        reasons,
    }
}
