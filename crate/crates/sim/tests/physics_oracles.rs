use hord_sim::{
    contact_forces, env_rng, full_kin, mechanical_energy, pd_torque, sample_context, step_physics,
    DrRanges, DynamicsContext, EngineConfig, Env, RobotModel, SimState, TerrainTier, Vec2, NJ, NQ,
};
use rand::Rng;

fn standing_alpha(model: &RobotModel) -> [f64; NJ] {
    let q = model.standing_pose();
    [q[3], q[4], q[5], q[6]]
}

/// PD output must equal the closed-form expression bitwise over a large
/// random sweep of gains, scales, targets, and states.
#[test]
fn pd_matches_closed_form_on_ten_thousand_inputs() {
    let mut rng = env_rng(123, 7);
    for _ in 0..10_000 {
        let mut model = RobotModel::default();
        for j in 0..NJ {
            model.kp[j] = rng.gen_range(0.0..300.0);
            model.kd[j] = rng.gen_range(0.0..10.0);
            model.torque_limit[j] = rng.gen_range(20.0..100.0);
        }
        let gain_scale = rng.gen_range(0.8..1.2);
        let mut q = [0.0; NQ];
        let mut qd = [0.0; NQ];
        let mut alpha = [0.0; NJ];
        for j in 0..NJ {
            q[3 + j] = rng.gen_range(-2.0..2.0);
            qd[3 + j] = rng.gen_range(-5.0..5.0);
            alpha[j] = rng.gen_range(-2.0..2.0);
        }
        let tau = pd_torque(&model, gain_scale, &alpha, &q, &qd);
        for j in 0..NJ {
            let raw = gain_scale * model.kp[j] * (alpha[j] - q[3 + j]) - model.kd[j] * qd[3 + j];
            let want = raw.clamp(-model.torque_limit[j], model.torque_limit[j]);
            assert_eq!(tau[j].to_bits(), want.to_bits());
        }
    }
}

/// Torque-free fall: Heun is exact for constant acceleration, so the base
/// must drop g t^2 / 2 to float precision, and uniform gravity must leave
/// the joint configuration untouched.
#[test]
fn ballistic_drop_matches_closed_form() {
    let model = RobotModel::default();
    let ctx = DynamicsContext::nominal();
    let mut rng = env_rng(0, 0);

    let cfg = EngineConfig::engine_b();
    let mut q0 = model.standing_pose();
    q0[1] = 3.0;
    q0[3] = 0.3;
    q0[4] = -0.5;
    let mut state = SimState::at_rest(q0);
    let steps = (0.5 * cfg.physics_hz).round() as usize;
    for _ in 0..steps {
        state = step_physics(&model, &cfg, &ctx, &state, &[0.0; NJ], &mut rng);
    }
    let drop = q0[1] - state.q[1];
    assert!((drop - 1.225).abs() < 1e-3, "Heun drop {drop}");
    for j in 3..NQ {
        assert!(
            (state.q[j] - q0[j]).abs() < 1e-12,
            "joint {j} moved in free fall"
        );
    }

    // The first-order integrator carries a g*h*t/2 bias on the same fall;
    // it stays small but is real, which is part of why the engines diverge.
    let cfg = EngineConfig::engine_a();
    let mut state = SimState::at_rest(q0);
    let steps = (0.5 * cfg.physics_hz).round() as usize;
    for _ in 0..steps {
        state = step_physics(&model, &cfg, &ctx, &state, &[0.0; NJ], &mut rng);
    }
    let drop = q0[1] - state.q[1];
    assert!((drop - 1.225).abs() < 0.02, "Euler drop {drop}");
}

/// Undamped airborne tumble for one second under Heun: total mechanical
/// energy may drift by at most one percent.
#[test]
fn heun_conserves_energy_within_one_percent() {
    let mut model = RobotModel::default();
    model.joint_damping = [0.0; NJ];
    let ctx = DynamicsContext::nominal();
    let cfg = EngineConfig::engine_b();
    let mut rng = env_rng(0, 0);

    let q0 = [0.0, 10.0, 0.3, 0.8, -0.3, -0.6, -1.2];
    let qd0 = [0.0, 0.0, 0.5, -1.0, 2.0, 1.0, -2.0];
    let (gx, gz) = ctx.gravity_vec();
    let g = Vec2::new(gx, gz);
    let e0 = mechanical_energy(&model, &q0, &qd0, g, 1.0);

    let mut state = SimState {
        q: q0,
        qdot: qd0,
        ..SimState::at_rest(q0)
    };
    for _ in 0..(cfg.physics_hz as usize) {
        state = step_physics(&model, &cfg, &ctx, &state, &[0.0; NJ], &mut rng);
        assert!(state.q[1] > 1.0, "test assumes the tumble stays airborne");
    }
    let e1 = mechanical_energy(&model, &state.q, &state.qdot, g, 1.0);
    assert!(
        (e1 - e0).abs() / e0.abs() < 0.01,
        "energy drift {e0} -> {e1}"
    );
}

/// A torque-free robot resting on the ground must settle to the contact
/// fixed point: normals balance the full weight to micro-newtons and the
/// base height stops drifting. Feet are made fore-aft symmetric here so
/// the straight pose is a genuine passive equilibrium; the default
/// asymmetric foot would tip a torque-free robot over instead.
#[test]
fn resting_robot_settles_to_force_balance() {
    let mut model = RobotModel::default();
    model.heel_offset = [-0.105, -0.04];
    model.toe_offset = [0.105, -0.04];
    model.kp = [0.0; NJ];
    model.kd = [0.0; NJ];
    let cfg = EngineConfig::engine_a();
    let ctx = DynamicsContext::nominal();
    let mut rng = env_rng(7, 0);
    let mut state = SimState::at_rest(model.standing_pose());
    for _ in 0..900 {
        state = step_physics(&model, &cfg, &ctx, &state, &[0.0; NJ], &mut rng);
    }
    assert!(!state.diverged);

    let kin = full_kin(&model, &state.q, &state.qdot, &[0.0; NQ]);
    let contacts = contact_forces(
        &kin,
        cfg.contact_stiffness,
        cfg.contact_damping,
        cfg.tangential_stiffness,
        cfg.tangential_damping,
        ctx.friction,
        0.0,
        &state.friction_anchor,
    );
    let total_fz: f64 = contacts.iter().map(|c| c.force.z).sum();
    let total_fx: f64 = contacts.iter().map(|c| c.force.x).sum();
    let weight = model.total_mass() * ctx.gravity;
    assert!(
        (total_fz - weight).abs() < 1e-6,
        "normal force {total_fz} vs weight {weight}"
    );
    assert!(total_fx.abs() < 1e-9, "tangential force {total_fx} at rest");

    for v in state.qdot {
        assert!(v.abs() < 1e-9, "residual motion {v}");
    }
    for leg in 0..2 {
        for pt in &kin.foot[leg] {
            assert!(pt.p.z > -0.005, "penetration {} m", -pt.p.z);
        }
    }

    let z_before = state.q[1];
    state = step_physics(&model, &cfg, &ctx, &state, &[0.0; NJ], &mut rng);
    assert!((state.q[1] - z_before).abs() < 1e-6);
}

/// The passive standing controller must survive at least 10 seconds on
/// nominal flat ground without falling or drifting.
#[test]
fn passive_stand_holds_ten_seconds() {
    let model = RobotModel::default();
    let mut env = Env::new(model.clone(), EngineConfig::engine_a(), 11, 0);
    env.reset(DynamicsContext::nominal(), model.standing_pose(), [0.0; NQ]);
    let alpha = standing_alpha(&model);
    for _ in 0..500 {
        env.step_control(alpha);
        assert!(!env.state.diverged);
    }
    assert!(env.state.time >= 10.0 - 1e-9);
    assert!(
        env.state.q[1] > 0.7 * model.nominal_base_height(),
        "base sank to {}",
        env.state.q[1]
    );
    assert!(
        env.state.q[2].abs() < 0.2,
        "pitch drifted to {}",
        env.state.q[2]
    );
}

/// Identical commands on engines A and B must visibly disagree: different
/// integrators and contact stiffness push the base trajectories more than a
/// millimeter apart within the first second.
#[test]
fn engines_diverge_within_one_second() {
    let model = RobotModel::default();
    let alpha = standing_alpha(&model);
    let mut env_a = Env::new(model.clone(), EngineConfig::engine_a(), 3, 0);
    let mut env_b = Env::new(model.clone(), EngineConfig::engine_b(), 3, 0);
    env_a.reset(DynamicsContext::nominal(), model.standing_pose(), [0.0; NQ]);
    env_b.reset(DynamicsContext::nominal(), model.standing_pose(), [0.0; NQ]);

    let mut max_gap = 0.0f64;
    for _ in 0..50 {
        env_a.step_control(alpha);
        env_b.step_control(alpha);
        let dx = env_a.state.q[0] - env_b.state.q[0];
        let dz = env_a.state.q[1] - env_b.state.q[1];
        max_gap = max_gap.max((dx * dx + dz * dz).sqrt());
    }
    assert!(max_gap > 1e-3, "engines stayed within {max_gap} m");
}

/// Same seed, same context, same action sequence: the trajectory must be
/// bitwise identical across runs even with noise, ground jitter, and pushes
/// all active. The context itself must stay untouched by stepping.
#[test]
fn episodes_are_bitwise_deterministic() {
    let model = RobotModel::default();
    let mut ctx_rng = env_rng(9, 0);
    let mut ctx = sample_context(&DrRanges::default(), true, &mut ctx_rng)
        .with_terrain(TerrainTier::RoughSlope);
    ctx.push_interval = 1.5;
    let ctx_snapshot = ctx.clone();

    let run = |seed: u64| -> Vec<[f64; NQ]> {
        let mut env = Env::new(model.clone(), EngineConfig::engine_a(), seed, 3);
        env.reset(ctx.clone(), model.standing_pose(), [0.0; NQ]);
        let mut act_rng = env_rng(seed ^ 0xabcd, 0);
        let mut traj = Vec::new();
        for _ in 0..150 {
            let mut alpha = standing_alpha(&model);
            for a in alpha.iter_mut() {
                *a += act_rng.gen_range(-0.1..0.1);
            }
            env.step_control(alpha);
            traj.push(env.state.q);
        }
        assert_eq!(env.context, ctx_snapshot, "context mutated during episode");
        traj
    };

    let t1 = run(42);
    let t2 = run(42);
    for (a, b) in t1.iter().zip(t2.iter()) {
        for i in 0..NQ {
            assert_eq!(a[i].to_bits(), b[i].to_bits());
        }
    }
    let t3 = run(43);
    assert!(
        t1.iter().zip(t3.iter()).any(|(a, b)| a != b),
        "different seed, same rollout"
    );
}

/// Ten thousand randomization draws: every field inside its band, scale
/// means centered at 1 within half a percent, and all delay choices hit.
#[test]
fn context_sampling_respects_bounds() {
    let ranges = DrRanges::default();
    let mut rng = env_rng(2024, 0);
    let n = 10_000;
    let mut mean_mass = 0.0;
    let mut mean_joint = 0.0;
    let mut mean_gain = 0.0;
    let mut delay_seen = [false; 4];
    for _ in 0..n {
        let ctx = sample_context(&ranges, true, &mut rng);
        assert!(ctx.mass_scale >= 0.9 && ctx.mass_scale <= 1.1);
        assert!(ctx.joint_scale >= 0.9 && ctx.joint_scale <= 1.1);
        assert!(ctx.gain_scale >= 0.9 && ctx.gain_scale <= 1.1);
        assert!(ctx.gravity >= 9.7 && ctx.gravity <= 9.9);
        assert!(ctx.control_delay <= 3);
        assert!(ctx.push_interval >= 5.0 && ctx.push_interval <= 10.0);
        assert!(ctx.push_delta_v >= 0.2 && ctx.push_delta_v <= 0.5);
        assert_eq!(ctx.slope, 0.0);
        mean_mass += ctx.mass_scale;
        mean_joint += ctx.joint_scale;
        mean_gain += ctx.gain_scale;
        delay_seen[ctx.control_delay] = true;
    }
    for mean in [mean_mass, mean_joint, mean_gain] {
        assert!((mean / n as f64 - 1.0).abs() < 0.005);
    }
    assert_eq!(delay_seen, [true; 4]);
}

/// With intervals drawn from [5, 10] s, a 12 s episode sees exactly one or
/// two pushes, always.
#[test]
fn twelve_second_episode_gets_one_or_two_pushes() {
    let model = RobotModel::default();
    let alpha = standing_alpha(&model);
    for seed in 0..40u64 {
        let mut rng = env_rng(seed, 0);
        let ctx = sample_context(&DrRanges::default(), true, &mut rng);
        let mut env = Env::new(model.clone(), EngineConfig::engine_a(), seed, 1);
        env.reset(ctx, model.standing_pose(), [0.0; NQ]);
        let mut pushes = 0;
        for _ in 0..600 {
            if env.step_control(alpha).pushed {
                pushes += 1;
            }
        }
        assert!(
            pushes == 1 || pushes == 2,
            "seed {seed}: {pushes} pushes at interval {}",
            env.context.push_interval
        );
    }
}
