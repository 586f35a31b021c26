//! Procedural reference motions.
//!
//! Each motion family is a scripted open-loop target curve for the four
//! actuated joints, tracked by the stock PD controller on nominal flat
//! ground. The rollout is recorded at the 50 Hz control rate and then
//! resampled to the canonical 30 fps clip rate, so every reference clip is
//! dynamically feasible by construction: it is literally a trajectory the
//! simulated robot produced. The rng only jitters script parameters
//! (frequency, amplitude), making clips from one seed bitwise identical.

use crate::packet::{MotionPacket, PacketError, PacketHeader};
use crate::quat;
use crate::resample::resample;
use hord_sim::{
    marker_angles, marker_positions, DynamicsContext, Env, EngineConfig, RobotModel, NJ, NQ,
    NUM_MARKERS,
};
use rand::Rng;

pub const CLIP_FPS: u32 = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotionKind {
    Walk,
    SideStep,
    Squat,
    Reach,
    Kick,
    Recover,
}

pub const ALL_KINDS: [MotionKind; 6] = [
    MotionKind::Walk,
    MotionKind::SideStep,
    MotionKind::Squat,
    MotionKind::Reach,
    MotionKind::Kick,
    MotionKind::Recover,
];

impl MotionKind {
    pub fn name(&self) -> &'static str {
        match self {
            MotionKind::Walk => "walk",
            MotionKind::SideStep => "side_step",
            MotionKind::Squat => "squat",
            MotionKind::Reach => "reach",
            MotionKind::Kick => "kick",
            MotionKind::Recover => "recover",
        }
    }

    pub fn parse(s: &str) -> Option<MotionKind> {
        ALL_KINDS.iter().copied().find(|k| k.name() == s)
    }
}

impl std::fmt::Display for MotionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GenerateError {
    #[error("clip duration {0} s outside the 2-10 s window")]
    BadDuration(f64),
    #[error("scripted {kind} rollout diverged at t = {time:.2} s; re-seed and retry")]
    Diverged { kind: &'static str, time: f64 },
    #[error("scripted {kind} rollout came out degenerate ({what}); re-seed and retry")]
    Degenerate { kind: &'static str, what: &'static str },
    #[error(transparent)]
    Packet(#[from] PacketError),
}

/// Smooth 0 to 1 ramp.
fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

/// Rise over [t0, t1], hold at 1, fall over [t2, t3].
fn pulse(t: f64, t0: f64, t1: f64, t2: f64, t3: f64) -> f64 {
    smoothstep((t - t0) / (t1 - t0)) * (1.0 - smoothstep((t - t2) / (t3 - t2)))
}

/// Joint targets a script wants at one instant. Scripts are strictly open
/// loop: the PD-held plant is passively stable in any gentle posture (the
/// foot's heel-toe contact patch supplies the restoring torque), while
/// state feedback through the hips turned out to destabilize it, because
/// the hip channel is non-minimum-phase into the center of mass and rate
/// feedback of either sign pumps the weakly damped heel-toe rocking mode.
/// Three posture rules keep rollouts upright. Grounded legs keep the knee
/// target at zero: the rigid ankle-less foot means stance knee flexion
/// rolls the foot onto an edge and collapses. Hip offsets stay positive:
/// with straight knees a held positive offset settles pitched forward
/// about 1.2x the offset, while the short heel margin makes negative
/// offsets topple backward. Posture changes stay slow next to the 0.29 s
/// toppling time constant.
struct Intent {
    hip: [f64; 2],
    knee: [f64; 2],
}

/// Fraction of a gait cycle each leg spends in swing; legs alternate half
/// a cycle apart. Stepping only survives in the quasi-static regime: a
/// swing quick enough to excite the weakly damped 1.8 s heel-toe rocking
/// mode rings the pitch past the short heel margin and the robot topples
/// backward, so cycles run several seconds and every lift is adiabatic
/// next to the rock.
const SWING: f64 = 0.3;

/// Script parameters drawn once per clip. Jitter keeps clips from one
/// family distinct across seeds without changing their character.
struct Script {
    kind: MotionKind,
    freq: f64,
    amp: f64,
}

impl Script {
    fn draw(kind: MotionKind, seconds: f64, rng: &mut impl Rng) -> Script {
        let jitter = |rng: &mut dyn rand::RngCore, lo: f64, hi: f64| {
            lo + (hi - lo) * rng.gen::<f64>()
        };
        let (freq, amp) = match kind {
            // Short walk clips need the swing pair wrapped up before the
            // end fade, so their cadence band sits slightly higher.
            MotionKind::Walk if seconds < 4.75 => {
                (jitter(rng, 0.215, 0.235), jitter(rng, 0.12, 0.14))
            }
            MotionKind::Walk => (jitter(rng, 0.195, 0.22), jitter(rng, 0.12, 0.14)),
            MotionKind::SideStep => (jitter(rng, 0.16, 0.20), jitter(rng, 0.18, 0.26)),
            MotionKind::Squat => (jitter(rng, 0.2, 0.28), jitter(rng, 0.14, 0.2)),
            // Reach and kick amplitudes stop short of the measured topple
            // thresholds (lean release falls over from 0.21 rad, kick
            // swing from 0.45): the band top keeps a safety margin while
            // the rng only picks the flavor within it.
            MotionKind::Reach => (jitter(rng, 0.0, 1.0), jitter(rng, 0.14, 0.19)),
            MotionKind::Kick => (jitter(rng, 0.0, 1.0), jitter(rng, 0.38, 0.44)),
            MotionKind::Recover => (jitter(rng, 0.0, 1.0), jitter(rng, 0.18, 0.26)),
        };
        Script { kind, freq, amp }
    }

    /// One leg of a stepping gait at cycle position `u` in [0, 1), with
    /// `n` counting this leg's swings (0 while still in the lead-in
    /// stance). The whole gait lives in the hips with the knees held
    /// straight: folding a loaded knee torques the torso backward over
    /// the heels through the closed contact chain, while hip flexion
    /// reacts as a forward torso bow, the recoverable direction. Swing
    /// sweeps the hip from -a to +a with an overshoot bell so the leg's
    /// cosine geometry shortens its ground reach mid-swing; stance
    /// retracts +a back to -a, easing the weight forward. The first left
    /// swing launches from underfoot since no stride exists yet.
    fn gait_leg(u: f64, n: u32, a: f64, over: f64, first_leg: bool) -> f64 {
        if u < SWING {
            let s = u / SWING;
            let back = if first_leg && n == 1 { 0.0 } else { a };
            let bell = (std::f64::consts::PI * s).sin();
            -back + (back + a) * smoothstep(s) + over * bell
        } else {
            let s = (u - SWING) / (1.0 - SWING);
            let stride = if first_leg && n == 0 { 0.0 } else { a };
            stride - 2.0 * stride * s
        }
    }

    fn intent(&self, t: f64, total: f64) -> Intent {
        let fade = smoothstep(t / 0.4) * smoothstep((total - t) / 0.4);
        let grounded = |hip: [f64; 2]| Intent {
            hip: hip.map(|v| v * fade),
            knee: [0.0, 0.0],
        };
        match self.kind {
            MotionKind::Walk | MotionKind::SideStep => {
                let phase = self.freq * (t - 0.3).max(0.0);
                if phase == 0.0 {
                    return grounded([0.0, 0.0]);
                }
                // Stepping is budgeted to one full swing pair: every swing
                // pumps the rocking mode a little and the ring accumulated
                // past roughly six seconds of stepping tips the gait over,
                // so long clips stop after the pair and stand out the
                // remainder in the biased bow. The stop is phase-aligned
                // to land inside double support, after the second swing
                // finishes at phase 1.0; cutting the gate mid-swing
                // amputates the leg's flight and dumps its momentum into
                // the rock, which topples a second or two later.
                let t_stop = total.min(0.3 + 1.18 / self.freq);
                let gate = smoothstep(t / 0.4) * smoothstep((t_stop - t) / 0.4);
                // The amplitude ramp completes during the double-support
                // lead-in, before the first swing, so no stride target
                // ever acts at partial strength on a freshly loaded leg.
                let ramp = gate * smoothstep(phase / 0.2);
                let (a, over) = match self.kind {
                    // Stiff-knee shuffle gait: alternating hip pendulum
                    // swings drive the pelvis forward through the contact
                    // compliance while the torso bows rhythmically.
                    MotionKind::Walk => (self.amp * ramp, 2.0 * self.amp * ramp),
                    // The planar model has no lateral axis, so side
                    // stepping is a weight-shifting march in place: the
                    // same pendulum with no stride, only the overshoot.
                    _ => (0.0, self.amp * ramp),
                };
                // The bow outlives the stride on purpose: it shifts the
                // center of mass toward the long toe margin, and releasing
                // it while the gait's residual ring is still live topples
                // backward, so it holds until the end fade.
                let bias = 0.1 * fade * smoothstep(phase / 0.05);
                let (ul, nl) = ((phase + 0.8).rem_euclid(1.0), (phase + 0.8) as u32);
                let (ur, nr) = ((phase + 0.3).rem_euclid(1.0), (phase + 0.3) as u32);
                let hip_l = Self::gait_leg(ul, nl, a, over, true);
                let hip_r = Self::gait_leg(ur, nr, a, over, false);
                Intent {
                    hip: [hip_l + bias, hip_r + bias],
                    knee: [0.0, 0.0],
                }
            }
            MotionKind::Squat => {
                // Hip-hinge bow: without an ankle joint a deep knee bend
                // is unreachable (the pelvis would have to travel past the
                // short heel), so the crouch is hip flexion with the
                // forward torso lean emerging from the coupled stance.
                let a =
                    self.amp * 0.5 * (1.0 - (2.0 * std::f64::consts::PI * self.freq * t).cos());
                grounded([a, a])
            }
            MotionKind::Reach => {
                // Lean into an extended forward reach, hold, return; the
                // hand marker rides the torso.
                let a = self.amp * pulse(t, 0.3, 1.6, total - 1.6, total - 0.3);
                grounded([a, a])
            }
            MotionKind::Kick => {
                // One slow kick spanning about four seconds, then stand:
                // transitions stay long next to the 1.8 s heel-toe rocking
                // period, which a brisk kick would ring until the robot
                // toppled, and a second kick riding the first one's
                // residual ring topples about half the time, so the kick
                // never repeats.
                // The support-leg bow doubles as the counter-bow bracing
                // against the swing reaction, and it keeps holding through
                // the stand after the kick: the bow's toe-ward weight
                // shift is what absorbs the kick's residual ring, so it
                // releases only at the end fade.
                let prep = pulse(t, 0.1, 0.9, total - 1.2, total - 0.4);
                let swing = pulse(t, 0.8, 1.7, 2.1, 3.0);
                Intent {
                    hip: [0.18 * prep * fade, (0.1 * prep + self.amp * swing) * fade],
                    knee: [0.0, -0.35 * (std::f64::consts::PI * swing).sin() * fade],
                }
            }
            MotionKind::Recover => {
                // One stumble: asymmetric bow and slow rise back to
                // stance, each spanning about one rocking period, then a
                // steady stand. Like the kick, the stumble never repeats
                // (a second drop through the first one's residual ring
                // reliably toppled), and the rise settles into a small
                // held bow whose toe-ward weight shift absorbs that ring
                // until the end fade.
                let drop = pulse(t, 0.1, 1.9, 2.3, 4.2);
                let bow = 0.08 * pulse(t, 2.3, 4.2, total - 1.2, total - 0.4);
                grounded([
                    (self.amp + 0.05) * drop + bow,
                    (self.amp - 0.05) * drop + bow,
                ])
            }
        }
    }

    /// Joint targets [hip_l, knee_l, hip_r, knee_r].
    fn targets(&self, t: f64, total: f64) -> [f64; NJ] {
        let want = self.intent(t, total);
        [want.hip[0], want.knee[0], want.hip[1], want.knee[1]]
    }
}

/// Roll out a scripted motion on nominal flat-ground dynamics and record
/// it as a 30 fps clip. `seconds` must lie in the 2-10 s clip window.
pub fn generate_reference(
    kind: MotionKind,
    seconds: f64,
    robot: &RobotModel,
    rng: &mut impl Rng,
) -> Result<MotionPacket, GenerateError> {
    if !(2.0..=10.0).contains(&seconds) {
        return Err(GenerateError::BadDuration(seconds));
    }
    let script = Script::draw(kind, seconds, rng);
    let env_seed = rng.gen::<u64>();
    let mut env = Env::new(robot.clone(), EngineConfig::engine_a(), env_seed, 0);
    env.reset(
        DynamicsContext::nominal(),
        robot.standing_pose(),
        [0.0; NQ],
    );

    let control_hz = env.engine.control_hz();
    let frames = MotionPacket::expected_frames(control_hz as u32, seconds);
    let mut rec = Recorder::new(frames, control_hz as u32, seconds, kind);
    for i in 0..frames {
        rec.push(robot, &env);
        // A toppled rollout is useless as a reference even when the
        // integrator stays healthy, so falling counts as divergence.
        if env.state.diverged || env.state.q[1] < 0.4 * robot.nominal_base_height() {
            eprintln!(
                "FELL t={:.2} pitch={:+.3} pitchrate={:+.3} x={:+.3} z={:.3} hips=({:+.3},{:+.3})",
                env.state.time,
                env.state.q[2],
                env.state.qdot[2],
                env.state.q[0],
                env.state.q[1],
                env.state.q[3],
                env.state.q[5],
            );
            return Err(GenerateError::Diverged {
                kind: kind.name(),
                time: env.state.time,
            });
        }
        let t = i as f64 / control_hz;
        let alpha = script.targets(t, seconds);
        env.step_control(alpha);
    }

    let packet = rec.finish()?;
    let packet = resample(&packet, CLIP_FPS)?;

    // Family-level quality gates. The open-loop scripts survive most
    // seeds but not all; a rollout that stayed upright yet came out
    // wrong for its family is still junk as a reference, so it goes
    // back through the same re-seed path as a fall.
    if kind == MotionKind::Walk {
        let t = packet.header.num_frames;
        let dx = packet.dof(t - 1, 0) - packet.dof(0, 0);
        if dx < 1.2e-3 * packet.header.duration {
            return Err(GenerateError::Degenerate {
                kind: kind.name(),
                what: "no forward progress",
            });
        }
        let min_z = (0..t).map(|i| packet.dof(i, 1)).fold(f64::MAX, f64::min);
        if min_z < 0.75 * robot.nominal_base_height() {
            return Err(GenerateError::Degenerate {
                kind: kind.name(),
                what: "deep stumble",
            });
        }
    }
    Ok(packet)
}

/// Accumulates per-tick marker and dof poses into packet tensors. The
/// velocity tensors are finite differences of the recorded pose traces,
/// not sampled instantaneous rates: the contact springs superimpose a
/// near-Nyquist jitter on qdot that 50 Hz samples alias into a standing
/// bias (a motionless squat read a mean base speed of several cm/s),
/// while the pose traces integrate it away, so differentiating them
/// yields the velocity of the motion the packet actually stores.
struct Recorder {
    header: PacketHeader,
    translation: Vec<f64>,
    rotation: Vec<f64>,
    marker_angle: Vec<f64>,
    local_rot: Vec<f64>,
    dof_pos: Vec<f64>,
}

/// Central-difference time derivative of a [T, width] trace, one-sided at
/// the ends.
fn derivative(data: &[f64], width: usize, fps: f64) -> Vec<f64> {
    let t = data.len() / width;
    let mut out = vec![0.0; data.len()];
    for i in 0..t {
        let (lo, hi, scale) = if i == 0 {
            (0, 1, fps)
        } else if i == t - 1 {
            (t - 2, t - 1, fps)
        } else {
            (i - 1, i + 1, fps / 2.0)
        };
        for k in 0..width {
            out[i * width + k] = (data[hi * width + k] - data[lo * width + k]) * scale;
        }
    }
    out
}

impl Recorder {
    fn new(frames: usize, fps: u32, duration: f64, kind: MotionKind) -> Recorder {
        let j = NUM_MARKERS;
        Recorder {
            header: PacketHeader {
                fps,
                duration,
                num_frames: frames,
                num_joints: j,
                num_dofs: NQ,
                text: Some(format!("{} {:.2}s", kind.name(), duration)),
            },
            translation: Vec::with_capacity(frames * j * 3),
            rotation: Vec::with_capacity(frames * j * 4),
            marker_angle: Vec::with_capacity(frames * j),
            local_rot: Vec::with_capacity(frames * NQ * 4),
            dof_pos: Vec::with_capacity(frames * NQ),
        }
    }

    fn push(&mut self, robot: &RobotModel, env: &Env) {
        let q = &env.state.q;
        let markers = marker_positions(robot, q);
        let angles = marker_angles(q);
        for m in 0..NUM_MARKERS {
            self.translation
                .extend_from_slice(&[markers[m].x, 0.0, markers[m].z]);
            self.rotation.extend_from_slice(&quat::from_angle(angles[m]));
        }
        self.marker_angle.extend_from_slice(&angles);
        for d in 0..NQ {
            // Translational dofs carry the identity rotation.
            let angle = if d >= 2 { q[d] } else { 0.0 };
            self.local_rot.extend_from_slice(&quat::from_angle(angle));
        }
        self.dof_pos.extend_from_slice(q);
    }

    fn finish(self) -> Result<MotionPacket, PacketError> {
        let t = self.header.num_frames;
        let fps = self.header.fps as f64;
        let lin_vel = derivative(&self.translation, NUM_MARKERS * 3, fps);
        let rates = derivative(&self.marker_angle, NUM_MARKERS, fps);
        let mut ang_vel = vec![0.0; t * NUM_MARKERS * 3];
        for (i, r) in rates.iter().enumerate() {
            ang_vel[i * 3 + 1] = *r;
        }
        let dof_vel = derivative(&self.dof_pos, NQ, fps);
        let mut root_lin = vec![0.0; t * 3];
        let mut root_ang = vec![0.0; t * 3];
        for i in 0..t {
            root_lin[i * 3] = dof_vel[i * NQ];
            root_lin[i * 3 + 2] = dof_vel[i * NQ + 1];
            root_ang[i * 3 + 1] = dof_vel[i * NQ + 2];
        }
        let p = MotionPacket {
            header: self.header,
            global_translation: self.translation,
            global_rotation_quat: self.rotation,
            global_lin_vel: lin_vel,
            global_ang_vel: ang_vel,
            local_rotation_quat: self.local_rot,
            root_lin_vel: root_lin,
            root_ang_vel: root_ang,
            dof_pos: self.dof_pos,
            dof_vel,
        };
        p.validate()?;
        Ok(p)
    }
}
