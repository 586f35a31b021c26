use serde::{Deserialize, Serialize};

use crate::ModelError;

/// Number of generalized coordinates: planar base (x, z, pitch) plus four
/// actuated joints (left hip, left knee, right hip, right knee).
pub const NQ: usize = 7;

/// Number of actuated joints.
pub const NJ: usize = 4;

/// Number of kinematic markers exposed for motion tracking:
/// pelvis, both knees, both ankles, hand, head.
pub const NUM_MARKERS: usize = 7;

/// Marker indices into the arrays returned by [`crate::marker_positions`].
pub const MARKER_BASE: usize = 0;
pub const MARKER_KNEE_L: usize = 1;
pub const MARKER_KNEE_R: usize = 2;
pub const MARKER_FOOT_L: usize = 3;
pub const MARKER_FOOT_R: usize = 4;
pub const MARKER_HAND: usize = 5;
pub const MARKER_HEAD: usize = 6;

pub const MARKER_NAMES: [&str; NUM_MARKERS] = [
    "base", "knee_l", "knee_r", "foot_l", "foot_r", "hand", "head",
];

pub const JOINT_NAMES: [&str; NJ] = ["hip_l", "knee_l", "hip_r", "knee_r"];

/// Planar biped: a torso body carrying the floating base, two thighs hanging
/// from a shared hip point at the pelvis, and two shank bodies with rigid
/// feet. Heel and toe of each foot are the only contact candidates.
///
/// Angle conventions: base pitch and joint angles are counterclockwise with
/// x right and z up. At the zero pose the torso points straight up and both
/// legs straight down; positive hip swings the leg forward (+x), and the knee
/// range is almost entirely negative so the shank folds backward.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RobotModel {
    pub torso_mass: f64,
    pub thigh_mass: f64,
    pub shank_mass: f64,
    /// Rotational inertias about each body's own center of mass.
    pub torso_inertia: f64,
    pub thigh_inertia: f64,
    pub shank_inertia: f64,
    pub thigh_len: f64,
    pub shank_len: f64,
    /// Center-of-mass offsets along each link, measured from its joint.
    pub torso_com: f64,
    pub thigh_com: f64,
    pub shank_com: f64,
    /// Heel and toe expressed in the shank frame relative to the ankle:
    /// (along-foot, below-ankle). The foot is rigid, there is no ankle joint.
    pub heel_offset: [f64; 2],
    pub toe_offset: [f64; 2],
    /// Hand and head marker offsets in the torso frame relative to the pelvis.
    pub hand_offset: [f64; 2],
    pub head_height: f64,
    /// PD gains, joint ranges, and torque bounds per actuated joint, in
    /// [hip_l, knee_l, hip_r, knee_r] order.
    pub kp: [f64; NJ],
    pub kd: [f64; NJ],
    pub joint_lo: [f64; NJ],
    pub joint_hi: [f64; NJ],
    pub torque_limit: [f64; NJ],
    /// Passive viscous joint damping; the randomization joint scale
    /// multiplies this, never the PD gains.
    pub joint_damping: [f64; NJ],
    /// Soft joint-limit stop gains, shared by all joints.
    pub limit_stop_kp: f64,
    pub limit_stop_kd: f64,
}

impl Default for RobotModel {
    fn default() -> Self {
        RobotModel {
            torso_mass: 10.0,
            thigh_mass: 1.5,
            shank_mass: 1.0,
            torso_inertia: 0.21,
            thigh_inertia: 0.02,
            // Shank inertia includes the rigid foot, which also keeps the
            // contact-to-knee reflected dynamics integrable at 200 Hz.
            shank_inertia: 0.05,
            thigh_len: 0.4,
            shank_len: 0.4,
            torso_com: 0.25,
            thigh_com: 0.2,
            shank_com: 0.2,
            heel_offset: [-0.07, -0.04],
            toe_offset: [0.14, -0.04],
            hand_offset: [0.15, 0.35],
            head_height: 0.55,
            kp: [100.0, 200.0, 100.0, 200.0],
            kd: [5.0, 4.0, 5.0, 4.0],
            joint_lo: [-2.0, -2.4, -2.0, -2.4],
            joint_hi: [2.0, 0.05, 2.0, 0.05],
            torque_limit: [60.0, 80.0, 60.0, 80.0],
            joint_damping: [0.1; NJ],
            limit_stop_kp: 500.0,
            limit_stop_kd: 5.0,
        }
    }
}

impl RobotModel {
    pub fn num_joints(&self) -> usize {
        NJ
    }

    pub fn total_mass(&self) -> f64 {
        self.torso_mass + 2.0 * (self.thigh_mass + self.shank_mass)
    }

    /// Pelvis height when standing with straight legs and the foot sole on
    /// the ground plane.
    pub fn nominal_base_height(&self) -> f64 {
        self.thigh_len + self.shank_len - self.heel_offset[1]
    }

    /// Straight-legged standing configuration with the soles exactly at
    /// ground level. Knees sit at 0, just inside their upper range.
    pub fn standing_pose(&self) -> [f64; NQ] {
        [0.0, self.nominal_base_height(), 0.0, 0.0, 0.0, 0.0, 0.0]
    }

    pub fn clamp_targets(&self, alpha: &mut [f64; NJ]) {
        for j in 0..NJ {
            alpha[j] = alpha[j].clamp(self.joint_lo[j], self.joint_hi[j]);
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("torso_mass", self.torso_mass),
            ("thigh_mass", self.thigh_mass),
            ("shank_mass", self.shank_mass),
            ("torso_inertia", self.torso_inertia),
            ("thigh_inertia", self.thigh_inertia),
            ("shank_inertia", self.shank_inertia),
            ("thigh_len", self.thigh_len),
            ("shank_len", self.shank_len),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(ModelError::BadField {
                    field: name,
                    value: v,
                });
            }
        }
        for j in 0..NJ {
            if self.joint_lo[j] >= self.joint_hi[j] {
                return Err(ModelError::BadField {
                    field: "joint range",
                    value: self.joint_lo[j],
                });
            }
            if !(self.kp[j] >= 0.0 && self.kd[j] >= 0.0 && self.torque_limit[j] > 0.0) {
                return Err(ModelError::BadField {
                    field: "gains",
                    value: self.kp[j],
                });
            }
        }
        Ok(())
    }
}
