use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::context::DynamicsContext;
use crate::dynamics::{
    forward_dynamics, full_kin, update_anchors, AccelResult, FrictionAnchors, Vec2,
};
use crate::model::{RobotModel, NJ, NQ};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EngineId {
    A,
    B,
}

impl EngineId {
    pub fn parse(s: &str) -> Option<EngineId> {
        match s {
            "A" | "a" => Some(EngineId::A),
            "B" | "b" => Some(EngineId::B),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EngineId::A => "A",
            EngineId::B => "B",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Integrator {
    SemiImplicitEuler,
    Heun,
}

/// Per-engine numerics. The two presets deliberately disagree on timestep,
/// integrator, and contact stiffness while sharing the 50 Hz control rate,
/// so trajectories diverge but policies transfer structurally.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub id: EngineId,
    pub physics_hz: f64,
    pub decimation: usize,
    pub integrator: Integrator,
    pub contact_stiffness: f64,
    pub contact_damping: f64,
    pub tangential_stiffness: f64,
    pub tangential_damping: f64,
}

impl EngineConfig {
    pub fn engine_a() -> EngineConfig {
        EngineConfig {
            id: EngineId::A,
            physics_hz: 200.0,
            decimation: 4,
            integrator: Integrator::SemiImplicitEuler,
            contact_stiffness: 1e4,
            contact_damping: 40.0,
            tangential_stiffness: 1e4,
            tangential_damping: 40.0,
        }
    }

    pub fn engine_b() -> EngineConfig {
        EngineConfig {
            id: EngineId::B,
            physics_hz: 250.0,
            decimation: 5,
            integrator: Integrator::Heun,
            contact_stiffness: 1.5e4,
            contact_damping: 40.0,
            tangential_stiffness: 1.5e4,
            tangential_damping: 40.0,
        }
    }

    pub fn for_id(id: EngineId) -> EngineConfig {
        match id {
            EngineId::A => EngineConfig::engine_a(),
            EngineId::B => EngineConfig::engine_b(),
        }
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.physics_hz
    }

    pub fn control_dt(&self) -> f64 {
        self.decimation as f64 / self.physics_hz
    }

    pub fn control_hz(&self) -> f64 {
        self.physics_hz / self.decimation as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub q: [f64; NQ],
    pub qdot: [f64; NQ],
    pub time: f64,
    /// Per-foot flag: any of the foot's two points carried normal force at
    /// the latest dynamics evaluation.
    pub contact_flags: [bool; 2],
    /// Friction anchor per contact slot; see
    /// [`crate::dynamics::FrictionAnchors`].
    pub friction_anchor: FrictionAnchors,
    /// Latched when the state leaves the trust region; the state freezes so
    /// downstream code never consumes non-finite numbers.
    pub diverged: bool,
}

impl SimState {
    pub fn at_rest(q: [f64; NQ]) -> SimState {
        SimState {
            q,
            qdot: [0.0; NQ],
            time: 0.0,
            contact_flags: [false; 2],
            friction_anchor: [None; 4],
            diverged: false,
        }
    }

    pub fn joint_pos(&self) -> [f64; NJ] {
        [self.q[3], self.q[4], self.q[5], self.q[6]]
    }

    pub fn joint_vel(&self) -> [f64; NJ] {
        [self.qdot[3], self.qdot[4], self.qdot[5], self.qdot[6]]
    }

    fn is_sane(&self) -> bool {
        self.q
            .iter()
            .chain(self.qdot.iter())
            .all(|v| v.is_finite() && v.abs() <= 1e6)
    }
}

/// PD actuation: the gain scale modulates only the proportional term, then
/// the result is clamped to the actuator's torque bound.
pub fn pd_torque(
    model: &RobotModel,
    gain_scale: f64,
    alpha: &[f64; NJ],
    q: &[f64; NQ],
    qd: &[f64; NQ],
) -> [f64; NJ] {
    let mut tau = [0.0; NJ];
    for j in 0..NJ {
        let raw = gain_scale * model.kp[j] * (alpha[j] - q[3 + j]) - model.kd[j] * qd[3 + j];
        tau[j] = raw.clamp(-model.torque_limit[j], model.torque_limit[j]);
    }
    tau
}

/// Standard-normal draw via Box-Muller on the env's own stream.
fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[allow(clippy::too_many_arguments)]
fn eval_accel(
    model: &RobotModel,
    cfg: &EngineConfig,
    ctx: &DynamicsContext,
    q: &[f64; NQ],
    qd: &[f64; NQ],
    tau: &[f64; NJ],
    ground_z: f64,
    anchors: &FrictionAnchors,
) -> AccelResult {
    let (gx, gz) = ctx.gravity_vec();
    forward_dynamics(
        model,
        q,
        qd,
        tau,
        Vec2::new(gx, gz),
        ctx.mass_scale,
        ctx.joint_scale,
        cfg.contact_stiffness,
        cfg.contact_damping,
        cfg.tangential_stiffness,
        cfg.tangential_damping,
        ctx.friction,
        ground_z,
        anchors,
    )
}

/// Advances one physics substep under a fixed joint torque. Rough terrain
/// jitter and velocity noise draw from `rng` only when their stds are
/// nonzero, so nominal episodes consume no randomness here.
pub fn step_physics(
    model: &RobotModel,
    cfg: &EngineConfig,
    ctx: &DynamicsContext,
    state: &SimState,
    tau: &[f64; NJ],
    rng: &mut ChaCha8Rng,
) -> SimState {
    let mut next = state.clone();
    if state.diverged {
        return next;
    }
    if !state.is_sane() {
        next.diverged = true;
        return next;
    }

    let h = cfg.dt();
    let ground_z = if ctx.ground_jitter_std > 0.0 {
        ctx.ground_jitter_std * normal(rng)
    } else {
        0.0
    };

    match cfg.integrator {
        Integrator::SemiImplicitEuler => {
            let res = eval_accel(
                model,
                cfg,
                ctx,
                &state.q,
                &state.qdot,
                tau,
                ground_z,
                &state.friction_anchor,
            );
            for i in 0..NQ {
                next.qdot[i] = state.qdot[i] + h * res.qdd[i];
                next.q[i] = state.q[i] + h * next.qdot[i];
            }
        }
        Integrator::Heun => {
            let k1 = eval_accel(
                model,
                cfg,
                ctx,
                &state.q,
                &state.qdot,
                tau,
                ground_z,
                &state.friction_anchor,
            );
            let mut q_e = [0.0; NQ];
            let mut qd_e = [0.0; NQ];
            for i in 0..NQ {
                q_e[i] = state.q[i] + h * state.qdot[i];
                qd_e[i] = state.qdot[i] + h * k1.qdd[i];
            }
            let k2 = eval_accel(
                model,
                cfg,
                ctx,
                &q_e,
                &qd_e,
                tau,
                ground_z,
                &state.friction_anchor,
            );
            for i in 0..NQ {
                next.q[i] = state.q[i] + 0.5 * h * (state.qdot[i] + qd_e[i]);
                next.qdot[i] = state.qdot[i] + 0.5 * h * (k1.qdd[i] + k2.qdd[i]);
            }
        }
    }

    if ctx.noise_std > 0.0 {
        for i in 0..NQ {
            next.qdot[i] += ctx.noise_std * normal(rng);
        }
    }

    next.time = state.time + h;
    if !next.is_sane() {
        next.diverged = true;
        next.q = state.q;
        next.qdot = state.qdot;
        return next;
    }

    // Anchor bookkeeping and contact flags read the end-of-step kinematics.
    let kin = full_kin(model, &next.q, &next.qdot, &[0.0; NQ]);
    update_anchors(
        &kin,
        cfg.contact_stiffness,
        cfg.contact_damping,
        cfg.tangential_stiffness,
        ctx.friction,
        ground_z,
        &mut next.friction_anchor,
    );
    next.contact_flags = [false; 2];
    for leg in 0..2 {
        next.contact_flags[leg] =
            next.friction_anchor[2 * leg].is_some() || next.friction_anchor[2 * leg + 1].is_some();
    }
    next
}

/// Action-to-actuation delay line at control-tick granularity. The buffer is
/// pre-filled with the initial pose so the first `delay` ticks actuate that
/// pose regardless of what the policy commands.
#[derive(Debug, Clone)]
pub struct DelayBuffer {
    buf: VecDeque<[f64; NJ]>,
    delay: usize,
}

impl DelayBuffer {
    pub fn new(delay: usize, fill: [f64; NJ]) -> DelayBuffer {
        let mut buf = VecDeque::with_capacity(delay + 1);
        for _ in 0..delay {
            buf.push_back(fill);
        }
        DelayBuffer { buf, delay }
    }

    pub fn delay(&self) -> usize {
        self.delay
    }

    /// Enqueues the new command and returns the one due this tick. With zero
    /// delay the command passes straight through.
    pub fn push_pop(&mut self, alpha: [f64; NJ]) -> [f64; NJ] {
        self.buf.push_back(alpha);
        self.buf
            .pop_front()
            .expect("delay buffer is never empty after a push")
    }
}

/// Applies a scheduled base push if one is due. Pushes are instantaneous
/// velocity changes of fixed per-episode magnitude in a uniformly random
/// planar direction, spaced `push_interval` seconds apart.
pub fn apply_push(
    state: &mut SimState,
    ctx: &DynamicsContext,
    rng: &mut ChaCha8Rng,
    next_push_time: &mut f64,
) -> bool {
    if !next_push_time.is_finite() || state.time < *next_push_time {
        return false;
    }
    let dir = rng.gen::<f64>() * 2.0 * std::f64::consts::PI;
    state.qdot[0] += ctx.push_delta_v * dir.cos();
    state.qdot[1] += ctx.push_delta_v * dir.sin();
    *next_push_time += ctx.push_interval;
    true
}

/// What one control tick did, for logging and reward shaping.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TickInfo {
    /// Command actually actuated this tick, after the delay line.
    pub applied_alpha: [f64; NJ],
    /// Torque at the first substep of the tick.
    pub tau: [f64; NJ],
    /// Sum over joints of |tau * qdot|, averaged over the tick's substeps.
    pub mean_abs_power: f64,
    pub pushed: bool,
}

/// Single-threaded simulation environment: one robot, one episode context,
/// its own random stream. All stochastic effects (noise, terrain jitter,
/// push timing directions) flow through `rng`, so a (seed, context, action
/// sequence) triple fully determines the trajectory.
#[derive(Debug, Clone)]
pub struct Env {
    pub model: RobotModel,
    pub engine: EngineConfig,
    pub context: DynamicsContext,
    pub state: SimState,
    delay: DelayBuffer,
    next_push_time: f64,
    rng: ChaCha8Rng,
    pub tick: u64,
}

/// Independent per-env stream: same seed, distinct ChaCha stream index.
pub fn env_rng(seed: u64, env_index: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(env_index);
    rng
}

impl Env {
    pub fn new(model: RobotModel, engine: EngineConfig, seed: u64, env_index: u64) -> Env {
        let q0 = model.standing_pose();
        Env {
            model,
            engine,
            context: DynamicsContext::nominal(),
            state: SimState::at_rest(q0),
            delay: DelayBuffer::new(0, [0.0; NJ]),
            next_push_time: f64::INFINITY,
            rng: env_rng(seed, env_index),
            tick: 0,
        }
    }

    /// Starts an episode: installs the context, resets the state, refills the
    /// delay line with the initial joint pose, and schedules the first push.
    /// The random stream continues; it is not reseeded per episode.
    pub fn reset(&mut self, context: DynamicsContext, q0: [f64; NQ], qd0: [f64; NQ]) {
        self.state = SimState {
            q: q0,
            qdot: qd0,
            ..SimState::at_rest(q0)
        };
        self.delay = DelayBuffer::new(context.control_delay, [q0[3], q0[4], q0[5], q0[6]]);
        self.next_push_time = context.push_interval;
        self.context = context;
        self.tick = 0;
    }

    /// Runs one 20 ms control tick: resolves the delayed command, applies a
    /// due push, then integrates `decimation` physics substeps with the PD
    /// torque recomputed at every substep against the held command.
    pub fn step_control(&mut self, alpha_cmd: [f64; NJ]) -> TickInfo {
        let mut alpha = alpha_cmd;
        self.model.clamp_targets(&mut alpha);
        let applied = self.delay.push_pop(alpha);
        let pushed = apply_push(
            &mut self.state,
            &self.context,
            &mut self.rng,
            &mut self.next_push_time,
        );

        let mut tau_first = [0.0; NJ];
        let mut power_acc = 0.0;
        for sub in 0..self.engine.decimation {
            let tau = pd_torque(
                &self.model,
                self.context.gain_scale,
                &applied,
                &self.state.q,
                &self.state.qdot,
            );
            if sub == 0 {
                tau_first = tau;
            }
            for j in 0..NJ {
                power_acc += (tau[j] * self.state.qdot[3 + j]).abs();
            }
            self.state = step_physics(
                &self.model,
                &self.engine,
                &self.context,
                &self.state,
                &tau,
                &mut self.rng,
            );
            if self.state.diverged {
                break;
            }
        }
        self.tick += 1;
        TickInfo {
            applied_alpha: applied,
            tau: tau_first,
            mean_abs_power: power_acc / self.engine.decimation as f64,
            pushed,
        }
    }
}

/// One trajectory-dump line. Serialized as JSON Lines by callers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub q: Vec<f64>,
    pub qdot: Vec<f64>,
    pub alpha: Vec<f64>,
    pub tau: Vec<f64>,
    pub contacts: [bool; 2],
    pub pushed: bool,
}

impl StepRecord {
    pub fn capture(state: &SimState, alpha: &[f64; NJ], info: &TickInfo) -> StepRecord {
        StepRecord {
            t: state.time,
            q: state.q.to_vec(),
            qdot: state.qdot.to_vec(),
            alpha: alpha.to_vec(),
            tau: info.tau.to_vec(),
            contacts: state.contact_flags,
            pushed: info.pushed,
        }
    }
}
