//! Planar articulated dynamics for the two-legged model.
//!
//! Forward dynamics is assembled the classical way: the mass matrix column
//! by column from inverse dynamics with unit joint accelerations and gravity
//! off, the bias vector from inverse dynamics with zero acceleration, then a
//! Cholesky solve of M qdd = tau_applied + tau_contact - bias - damping.

use crate::model::{RobotModel, NJ, NQ};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vec2 {
    pub x: f64,
    pub z: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, z: 0.0 };

    pub fn new(x: f64, z: f64) -> Vec2 {
        Vec2 { x, z }
    }

    pub fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.z + o.z)
    }

    pub fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.z - o.z)
    }

    pub fn scale(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.z * s)
    }

    pub fn norm(self) -> f64 {
        (self.x * self.x + self.z * self.z).sqrt()
    }
}

/// z-free planar cross product; positive means counterclockwise torque
/// (x right, z up).
pub fn cross2(r: Vec2, f: Vec2) -> f64 {
    r.x * f.z - r.z * f.x
}

/// Unit vector along a link hanging at absolute angle `a`: straight down at
/// zero, rotating counterclockwise, so u(a) = (sin a, -cos a).
fn u(a: f64) -> Vec2 {
    Vec2::new(a.sin(), -a.cos())
}

/// Derivative of `u`, which is also the in-plane perpendicular ahead of it.
fn up(a: f64) -> Vec2 {
    Vec2::new(a.cos(), a.sin())
}

/// Rotating the point v counterclockwise about the origin moves it along
/// perp(v) per radian.
fn perp(v: Vec2) -> Vec2 {
    Vec2::new(-v.z, v.x)
}

#[derive(Debug, Clone, Copy)]
pub struct PointKin {
    pub p: Vec2,
    pub v: Vec2,
    pub a: Vec2,
}

/// Point rigidly attached to a body at `alpha * u(angle) + beta * up(angle)`
/// from an anchor whose own motion is given.
fn attached_point(
    anchor: PointKin,
    angle: f64,
    w: f64,
    wd: f64,
    alpha: f64,
    beta: f64,
) -> PointKin {
    let dir = u(angle).scale(alpha).add(up(angle).scale(beta));
    // d/dt u = w*up, d/dt up = -w*u, so the lever's velocity direction is
    // perp(dir) and its acceleration has a centripetal -w^2 term.
    let lever = perp(dir);
    PointKin {
        p: anchor.p.add(dir),
        v: anchor.v.add(lever.scale(w)),
        a: anchor.a.add(lever.scale(wd)).add(dir.scale(-w * w)),
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BodyKin {
    pub angle: f64,
    pub w: f64,
    pub wd: f64,
    pub com: PointKin,
}

/// Complete kinematics of all five bodies plus every joint anchor and foot
/// contact point, for a given (q, qdot, qddot).
#[derive(Debug, Clone)]
pub struct FullKin {
    pub base: PointKin,
    pub torso: BodyKin,
    pub thigh: [BodyKin; 2],
    pub shank: [BodyKin; 2],
    pub knee: [PointKin; 2],
    pub ankle: [PointKin; 2],
    /// [leg][heel, toe]
    pub foot: [[PointKin; 2]; 2],
}

pub fn full_kin(model: &RobotModel, q: &[f64; NQ], qd: &[f64; NQ], qdd: &[f64; NQ]) -> FullKin {
    let base = PointKin {
        p: Vec2::new(q[0], q[1]),
        v: Vec2::new(qd[0], qd[1]),
        a: Vec2::new(qdd[0], qdd[1]),
    };
    let pitch = q[2];
    let torso = BodyKin {
        angle: pitch,
        w: qd[2],
        wd: qdd[2],
        // Torso column points up: -u(pitch) direction, so a negative lever.
        com: attached_point(base, pitch, qd[2], qdd[2], -model.torso_com, 0.0),
    };

    let mut thigh = [torso; 2];
    let mut shank = [torso; 2];
    let mut knee = [base; 2];
    let mut ankle = [base; 2];
    let mut foot = [[base; 2]; 2];
    for leg in 0..2 {
        let hip_idx = 3 + 2 * leg;
        let knee_idx = hip_idx + 1;
        let a_t = pitch + q[hip_idx];
        let w_t = qd[2] + qd[hip_idx];
        let wd_t = qdd[2] + qdd[hip_idx];
        thigh[leg] = BodyKin {
            angle: a_t,
            w: w_t,
            wd: wd_t,
            com: attached_point(base, a_t, w_t, wd_t, model.thigh_com, 0.0),
        };
        knee[leg] = attached_point(base, a_t, w_t, wd_t, model.thigh_len, 0.0);

        let a_s = a_t + q[knee_idx];
        let w_s = w_t + qd[knee_idx];
        let wd_s = wd_t + qdd[knee_idx];
        shank[leg] = BodyKin {
            angle: a_s,
            w: w_s,
            wd: wd_s,
            com: attached_point(knee[leg], a_s, w_s, wd_s, model.shank_com, 0.0),
        };
        ankle[leg] = attached_point(knee[leg], a_s, w_s, wd_s, model.shank_len, 0.0);
        // Foot frame: up(a_s) runs along the sole, -u(a_s) points up the
        // shank, so an offset (along, below) maps to beta=along, alpha=-below.
        for (k, off) in [model.heel_offset, model.toe_offset].iter().enumerate() {
            foot[leg][k] = attached_point(ankle[leg], a_s, w_s, wd_s, -off[1], off[0]);
        }
    }

    FullKin {
        base,
        torso,
        thigh,
        shank,
        knee,
        ankle,
        foot,
    }
}

/// Generalized forces required to realize qdd at state (q, qd) under the
/// given gravity vector, with masses and inertias scaled by `mass_scale`.
/// Passing zero gravity and zero qd yields pure M*qdd, which is how the
/// mass matrix columns are extracted.
pub fn inverse_dynamics(
    model: &RobotModel,
    kin: &FullKin,
    gravity: Vec2,
    mass_scale: f64,
) -> [f64; NQ] {
    let bodies = [
        (
            &kin.torso,
            model.torso_mass,
            model.torso_inertia,
            None,
            None,
        ),
        (
            &kin.thigh[0],
            model.thigh_mass,
            model.thigh_inertia,
            Some(0usize),
            None,
        ),
        (
            &kin.shank[0],
            model.shank_mass,
            model.shank_inertia,
            Some(0),
            Some(0usize),
        ),
        (
            &kin.thigh[1],
            model.thigh_mass,
            model.thigh_inertia,
            Some(1),
            None,
        ),
        (
            &kin.shank[1],
            model.shank_mass,
            model.shank_inertia,
            Some(1),
            Some(1),
        ),
    ];

    let mut tau = [0.0; NQ];
    for (body, m, inertia, hip_leg, knee_leg) in bodies {
        let m = m * mass_scale;
        let inertia = inertia * mass_scale;
        let f = body.com.a.sub(gravity).scale(m);
        let n = inertia * body.wd;

        tau[0] += f.x;
        tau[1] += f.z;
        tau[2] += n + cross2(body.com.p.sub(kin.base.p), f);
        if let Some(leg) = hip_leg {
            // Hips share the pelvis anchor.
            tau[3 + 2 * leg] += n + cross2(body.com.p.sub(kin.base.p), f);
        }
        if let Some(leg) = knee_leg {
            tau[4 + 2 * leg] += n + cross2(body.com.p.sub(kin.knee[leg].p), f);
        }
    }
    tau
}

/// Mass matrix assembled column by column from unit-acceleration inverse
/// dynamics at zero velocity and zero gravity.
pub fn mass_matrix(model: &RobotModel, q: &[f64; NQ], mass_scale: f64) -> [[f64; NQ]; NQ] {
    let qd = [0.0; NQ];
    let mut m = [[0.0; NQ]; NQ];
    for j in 0..NQ {
        let mut qdd = [0.0; NQ];
        qdd[j] = 1.0;
        let kin = full_kin(model, q, &qd, &qdd);
        let col = inverse_dynamics(model, &kin, Vec2::ZERO, mass_scale);
        for i in 0..NQ {
            m[i][j] = col[i];
        }
    }
    m
}

/// Coriolis, centrifugal, and gravity loads at (q, qd).
pub fn bias_forces(
    model: &RobotModel,
    q: &[f64; NQ],
    qd: &[f64; NQ],
    gravity: Vec2,
    mass_scale: f64,
) -> [f64; NQ] {
    let kin = full_kin(model, q, qd, &[0.0; NQ]);
    inverse_dynamics(model, &kin, gravity, mass_scale)
}

/// In-place Cholesky solve of a symmetric positive definite system.
/// Panics if the matrix loses positive definiteness, which for a mass
/// matrix means the state has already blown up.
pub fn solve_spd(mut m: [[f64; NQ]; NQ], mut b: [f64; NQ]) -> [f64; NQ] {
    for i in 0..NQ {
        for j in 0..=i {
            let mut s = m[i][j];
            for k in 0..j {
                s -= m[i][k] * m[j][k];
            }
            if i == j {
                assert!(s > 0.0, "mass matrix not positive definite (pivot {s})");
                m[i][j] = s.sqrt();
            } else {
                m[i][j] = s / m[j][j];
            }
        }
    }
    for i in 0..NQ {
        for k in 0..i {
            b[i] -= m[i][k] * b[k];
        }
        b[i] /= m[i][i];
    }
    for i in (0..NQ).rev() {
        for k in i + 1..NQ {
            b[i] -= m[k][i] * b[k];
        }
        b[i] /= m[i][i];
    }
    b
}

/// One foot contact: world force applied at a known point on a shank body.
#[derive(Debug, Clone, Copy)]
pub struct ContactForce {
    pub leg: usize,
    /// Contact slot 0..4 in (left heel, left toe, right heel, right toe)
    /// order; indexes the friction anchor array.
    pub slot: usize,
    pub point: Vec2,
    pub force: Vec2,
}

/// Friction anchors, one per contact slot. An anchored point resists
/// tangential motion with a spring to its anchor (stiction); the anchor
/// slides when the spring force would leave the Coulomb cone and clears on
/// separation. Pure viscous friction would let the robot creep downhill
/// forever, so the anchors are load-bearing on slopes.
pub type FrictionAnchors = [Option<f64>; 4];

/// Penalty contact at the four foot points: a one-sided normal
/// spring-damper plus anchored tangential friction clamped to the Coulomb
/// cone. `ground_z` lets rough terrain wobble the contact plane.
///
/// Damping coefficients must respect the explicit-integration bound
/// c * dt / m < 2 against the lightest body (the 1 kg shank), which is why
/// they sit near 100 N s/m rather than the stiffness-matched critical value.
#[allow(clippy::too_many_arguments)]
pub fn contact_forces(
    kin: &FullKin,
    stiffness: f64,
    normal_damping: f64,
    tangential_stiffness: f64,
    tangential_damping: f64,
    friction: f64,
    ground_z: f64,
    anchors: &FrictionAnchors,
) -> Vec<ContactForce> {
    let mut out = Vec::with_capacity(4);
    for leg in 0..2 {
        for (k, pt) in kin.foot[leg].iter().enumerate() {
            let slot = 2 * leg + k;
            let depth = ground_z - pt.p.z;
            if depth <= 0.0 {
                continue;
            }
            let fn_ = (stiffness * depth - normal_damping * pt.v.z).max(0.0);
            let limit = friction * fn_;
            let spring = match anchors[slot] {
                Some(a) => -tangential_stiffness * (pt.p.x - a),
                None => 0.0,
            };
            let ft = (spring - tangential_damping * pt.v.x).clamp(-limit, limit);
            out.push(ContactForce {
                leg,
                slot,
                point: pt.p,
                force: Vec2::new(ft, fn_),
            });
        }
    }
    out
}

/// Post-step anchor maintenance: separation clears an anchor, fresh contact
/// plants one under the point, and an overstretched anchor slides to the
/// edge of the Coulomb cone.
pub fn update_anchors(
    kin: &FullKin,
    stiffness: f64,
    normal_damping: f64,
    tangential_stiffness: f64,
    friction: f64,
    ground_z: f64,
    anchors: &mut FrictionAnchors,
) {
    for leg in 0..2 {
        for (k, pt) in kin.foot[leg].iter().enumerate() {
            let slot = 2 * leg + k;
            let depth = ground_z - pt.p.z;
            if depth <= 0.0 {
                anchors[slot] = None;
                continue;
            }
            let fn_ = (stiffness * depth - normal_damping * pt.v.z).max(0.0);
            let max_stretch = friction * fn_ / tangential_stiffness;
            let a = anchors[slot].unwrap_or(pt.p.x);
            let stretch = (pt.p.x - a).clamp(-max_stretch, max_stretch);
            anchors[slot] = Some(pt.p.x - stretch);
        }
    }
}

/// Projects world contact forces into generalized coordinates through the
/// point Jacobian transpose. The base pitch and both leg joints all rotate
/// about their anchors, so each column is a perp-lever dot product.
pub fn add_contact_generalized(tau: &mut [f64; NQ], kin: &FullKin, contacts: &[ContactForce]) {
    for c in contacts {
        tau[0] += c.force.x;
        tau[1] += c.force.z;
        tau[2] += cross2(c.point.sub(kin.base.p), c.force);
        let hip = 3 + 2 * c.leg;
        tau[hip] += cross2(c.point.sub(kin.base.p), c.force);
        tau[hip + 1] += cross2(c.point.sub(kin.knee[c.leg].p), c.force);
    }
}

/// Forward dynamics: generalized accelerations for applied joint torques
/// `tau_joint` and the contact state implied by (q, qd).
pub struct AccelResult {
    pub qdd: [f64; NQ],
    pub contacts: Vec<ContactForce>,
}

#[allow(clippy::too_many_arguments)]
pub fn forward_dynamics(
    model: &RobotModel,
    q: &[f64; NQ],
    qd: &[f64; NQ],
    tau_joint: &[f64; NJ],
    gravity: Vec2,
    mass_scale: f64,
    joint_scale: f64,
    stiffness: f64,
    normal_damping: f64,
    tangential_stiffness: f64,
    tangential_damping: f64,
    friction: f64,
    ground_z: f64,
    anchors: &FrictionAnchors,
) -> AccelResult {
    let kin = full_kin(model, q, qd, &[0.0; NQ]);
    let bias = inverse_dynamics(model, &kin, gravity, mass_scale);
    let contacts = contact_forces(
        &kin,
        stiffness,
        normal_damping,
        tangential_stiffness,
        tangential_damping,
        friction,
        ground_z,
        anchors,
    );

    let mut rhs = [0.0; NQ];
    for j in 0..NJ {
        rhs[3 + j] = tau_joint[j] - joint_scale * model.joint_damping[j] * qd[3 + j];
        // Soft limit stops: one-sided spring-damper beyond the joint range.
        let qj = q[3 + j];
        if qj > model.joint_hi[j] {
            rhs[3 + j] +=
                model.limit_stop_kp * (model.joint_hi[j] - qj) - model.limit_stop_kd * qd[3 + j];
        } else if qj < model.joint_lo[j] {
            rhs[3 + j] +=
                model.limit_stop_kp * (model.joint_lo[j] - qj) - model.limit_stop_kd * qd[3 + j];
        }
    }
    for i in 0..NQ {
        rhs[i] -= bias[i];
    }
    add_contact_generalized(&mut rhs, &kin, &contacts);

    let m = mass_matrix(model, q, mass_scale);
    AccelResult {
        qdd: solve_spd(m, rhs),
        contacts,
    }
}

/// Kinematics of the tracking markers in
/// [`crate::model::MARKER_NAMES`] order: pelvis, knees, ankles, hand, head.
pub fn marker_kin(model: &RobotModel, q: &[f64; NQ], qd: &[f64; NQ]) -> [PointKin; 7] {
    let kin = full_kin(model, q, qd, &[0.0; NQ]);
    let t = &kin.torso;
    let hand = attached_point(
        kin.base,
        t.angle,
        t.w,
        t.wd,
        -model.hand_offset[1],
        model.hand_offset[0],
    );
    let head = attached_point(kin.base, t.angle, t.w, t.wd, -model.head_height, 0.0);
    [
        kin.base,
        kin.knee[0],
        kin.knee[1],
        kin.ankle[0],
        kin.ankle[1],
        hand,
        head,
    ]
}

pub fn marker_positions(model: &RobotModel, q: &[f64; NQ]) -> [Vec2; 7] {
    marker_kin(model, q, &[0.0; NQ]).map(|k| k.p)
}

/// World angle of the body each marker rides on: torso for pelvis, hand and
/// head; thigh for knees; shank for ankles.
pub fn marker_angles(q: &[f64; NQ]) -> [f64; 7] {
    let pitch = q[2];
    let thigh = [pitch + q[3], pitch + q[5]];
    let shank = [thigh[0] + q[4], thigh[1] + q[6]];
    [pitch, thigh[0], thigh[1], shank[0], shank[1], pitch, pitch]
}

/// Total mechanical energy; used by integrator conservation checks.
pub fn mechanical_energy(
    model: &RobotModel,
    q: &[f64; NQ],
    qd: &[f64; NQ],
    gravity: Vec2,
    mass_scale: f64,
) -> f64 {
    let kin = full_kin(model, q, qd, &[0.0; NQ]);
    let bodies = [
        (&kin.torso, model.torso_mass, model.torso_inertia),
        (&kin.thigh[0], model.thigh_mass, model.thigh_inertia),
        (&kin.shank[0], model.shank_mass, model.shank_inertia),
        (&kin.thigh[1], model.thigh_mass, model.thigh_inertia),
        (&kin.shank[1], model.shank_mass, model.shank_inertia),
    ];
    let mut e = 0.0;
    for (body, m, inertia) in bodies {
        let m = m * mass_scale;
        let v2 = body.com.v.x * body.com.v.x + body.com.v.z * body.com.v.z;
        e += 0.5 * m * v2 + 0.5 * inertia * mass_scale * body.w * body.w;
        // Potential energy relative to the origin along -gravity.
        e -= m * (gravity.x * body.com.p.x + gravity.z * body.com.p.z);
    }
    e
}
