use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Terrain variant for an episode. Slopes are realized by rotating gravity,
/// so the contact plane itself stays at z = 0; the rough variant adds
/// per-step ground height jitter on top of the same slope angle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerrainTier {
    Flat,
    SmoothSlope,
    RoughSlope,
}

impl TerrainTier {
    pub fn parse(s: &str) -> Option<TerrainTier> {
        match s {
            "flat" => Some(TerrainTier::Flat),
            "smooth_slope" => Some(TerrainTier::SmoothSlope),
            "rough_slope" => Some(TerrainTier::RoughSlope),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TerrainTier::Flat => "flat",
            TerrainTier::SmoothSlope => "smooth_slope",
            TerrainTier::RoughSlope => "rough_slope",
        }
    }
}

pub const SLOPE_ANGLE: f64 = 0.15;
pub const ROUGH_JITTER_STD: f64 = 0.005;

/// Episode-level physical context. Sampled once per episode and held bitwise
/// constant until reset; nothing in the step path may mutate it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsContext {
    /// Multiplies every link mass and inertia.
    pub mass_scale: f64,
    /// Multiplies the passive joint viscous damping.
    pub joint_scale: f64,
    /// Multiplies the proportional term of the PD actuator.
    pub gain_scale: f64,
    /// Gravity magnitude, m/s^2.
    pub gravity: f64,
    /// Coulomb friction coefficient at the foot contacts.
    pub friction: f64,
    /// Action-to-actuation delay in whole control ticks.
    pub control_delay: usize,
    /// Seconds between scheduled base pushes; infinity disables pushes.
    pub push_interval: f64,
    /// Base velocity change applied by each push, m/s.
    pub push_delta_v: f64,
    /// Std of the zero-mean velocity noise injected each physics substep.
    pub noise_std: f64,
    /// Gravity rotation angle, radians. Positive tilts gravity toward +x.
    pub slope: f64,
    /// Std of the per-substep ground height jitter, m. Zero off rough terrain.
    pub ground_jitter_std: f64,
}

impl DynamicsContext {
    /// Nominal physics: unit scales, standard gravity, no delay, no pushes,
    /// no noise, flat ground.
    pub fn nominal() -> Self {
        DynamicsContext {
            mass_scale: 1.0,
            joint_scale: 1.0,
            gain_scale: 1.0,
            gravity: 9.8,
            friction: 0.8,
            control_delay: 0,
            push_interval: f64::INFINITY,
            push_delta_v: 0.0,
            noise_std: 0.0,
            slope: 0.0,
            ground_jitter_std: 0.0,
        }
    }

    /// Replaces the terrain fields, leaving the randomization draws intact.
    pub fn with_terrain(mut self, tier: TerrainTier) -> Self {
        match tier {
            TerrainTier::Flat => {
                self.slope = 0.0;
                self.ground_jitter_std = 0.0;
            }
            TerrainTier::SmoothSlope => {
                self.slope = SLOPE_ANGLE;
                self.ground_jitter_std = 0.0;
            }
            TerrainTier::RoughSlope => {
                self.slope = SLOPE_ANGLE;
                self.ground_jitter_std = ROUGH_JITTER_STD;
            }
        }
        self
    }

    /// Gravity as a world-frame vector; the slope rotation gives it a +x
    /// component so "downhill" is the +x direction.
    pub fn gravity_vec(&self) -> (f64, f64) {
        (
            self.gravity * self.slope.sin(),
            -self.gravity * self.slope.cos(),
        )
    }

    /// Terrain observation exposed to policies: slope angle and a jitter flag.
    pub fn terrain_obs(&self) -> [f64; 2] {
        [
            self.slope,
            if self.ground_jitter_std > 0.0 {
                1.0
            } else {
                0.0
            },
        ]
    }
}

/// Episode randomization ranges. Defaults follow the training setup this
/// module reproduces: +-10% scale factors, slightly perturbed gravity,
/// up to three control ticks of delay, and pushes every 5 to 10 seconds
/// that kick the base by 0.2 to 0.5 m/s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DrRanges {
    pub mass_scale: (f64, f64),
    pub joint_scale: (f64, f64),
    pub gain_scale: (f64, f64),
    pub gravity: (f64, f64),
    pub delay_choices: Vec<usize>,
    pub push_interval: (f64, f64),
    pub push_delta_v: (f64, f64),
    pub noise_std: f64,
    pub friction: f64,
}

impl Default for DrRanges {
    fn default() -> Self {
        DrRanges {
            mass_scale: (0.9, 1.1),
            joint_scale: (0.9, 1.1),
            gain_scale: (0.9, 1.1),
            gravity: (9.7, 9.9),
            delay_choices: vec![0, 1, 2, 3],
            push_interval: (5.0, 10.0),
            push_delta_v: (0.2, 0.5),
            noise_std: 1e-3,
            friction: 0.8,
        }
    }
}

/// Draws one episode context. With randomization disabled the nominal
/// context is returned and the rng is untouched, so disabling randomization
/// never shifts downstream random draws.
///
/// The draw order is fixed (mass, joint, gain, gravity, delay, push interval,
/// push magnitude); changing it would silently break seeded reproducibility.
pub fn sample_context(
    ranges: &DrRanges,
    dr_enabled: bool,
    rng: &mut ChaCha8Rng,
) -> DynamicsContext {
    if !dr_enabled {
        let mut ctx = DynamicsContext::nominal();
        ctx.friction = ranges.friction;
        return ctx;
    }
    let mass_scale = rng.gen_range(ranges.mass_scale.0..=ranges.mass_scale.1);
    let joint_scale = rng.gen_range(ranges.joint_scale.0..=ranges.joint_scale.1);
    let gain_scale = rng.gen_range(ranges.gain_scale.0..=ranges.gain_scale.1);
    let gravity = rng.gen_range(ranges.gravity.0..=ranges.gravity.1);
    let control_delay = ranges.delay_choices[rng.gen_range(0..ranges.delay_choices.len())];
    let push_interval = rng.gen_range(ranges.push_interval.0..=ranges.push_interval.1);
    let push_delta_v = rng.gen_range(ranges.push_delta_v.0..=ranges.push_delta_v.1);
    DynamicsContext {
        mass_scale,
        joint_scale,
        gain_scale,
        gravity,
        friction: ranges.friction,
        control_delay,
        push_interval,
        push_delta_v,
        noise_std: ranges.noise_std,
        slope: 0.0,
        ground_jitter_std: 0.0,
    }
}
