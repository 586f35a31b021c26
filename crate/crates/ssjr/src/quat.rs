//! Unit quaternions for planar rotations.
//!
//! The walker lives in the x-z plane, so every rotation is about the world
//! y axis and a quaternion is `[cos(a/2), 0, sin(a/2), 0]` in `[w, x, y, z]`
//! order. The packet schema still stores all four components so files keep
//! the same layout as full 3D motion data.

pub type Quat = [f64; 4];

pub const IDENTITY: Quat = [1.0, 0.0, 0.0, 0.0];

/// Rotation about the out-of-plane axis by `angle` radians.
pub fn from_angle(angle: f64) -> Quat {
    let half = 0.5 * angle;
    [half.cos(), 0.0, half.sin(), 0.0]
}

/// Signed planar angle of a y-axis quaternion, in (-2pi, 2pi).
pub fn to_angle(q: &Quat) -> f64 {
    2.0 * q[2].atan2(q[0])
}

pub fn dot(a: &Quat, b: &Quat) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3]
}

pub fn norm(q: &Quat) -> f64 {
    dot(q, q).sqrt()
}

pub fn normalize(q: &Quat) -> Quat {
    let n = norm(q);
    [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
}

/// Angular distance between two unit quaternions: 2 acos(|<a, b>|).
/// The absolute value folds the double cover, so q and -q are 0 apart.
pub fn angle_between(a: &Quat, b: &Quat) -> f64 {
    2.0 * dot(a, b).abs().clamp(0.0, 1.0).acos()
}

/// Spherical linear interpolation along the shorter arc. Exact at the
/// endpoints: t = 0 returns `a` and t = 1 returns `b` (up to the sign flip
/// that picks the shorter arc, which represents the same rotation).
pub fn slerp(a: &Quat, b: &Quat, t: f64) -> Quat {
    if t == 0.0 {
        return *a;
    }
    let mut d = dot(a, b);
    let mut bb = *b;
    if d < 0.0 {
        d = -d;
        for v in &mut bb {
            *v = -*v;
        }
    }
    if t == 1.0 {
        return bb;
    }
    // Nearly parallel: fall back to normalized lerp, the arc is degenerate.
    if d > 1.0 - 1e-12 {
        let out = [
            a[0] + t * (bb[0] - a[0]),
            a[1] + t * (bb[1] - a[1]),
            a[2] + t * (bb[2] - a[2]),
            a[3] + t * (bb[3] - a[3]),
        ];
        return normalize(&out);
    }
    let theta = d.clamp(-1.0, 1.0).acos();
    let s = theta.sin();
    let wa = ((1.0 - t) * theta).sin() / s;
    let wb = (t * theta).sin() / s;
    [
        wa * a[0] + wb * bb[0],
        wa * a[1] + wb * bb[1],
        wa * a[2] + wb * bb[2],
        wa * a[3] + wb * bb[3],
    ]
}
