//! Lookahead command windows sliced from motion packets.
//!
//! A command window is what the policy sees of the reference motion: for
//! each of the next `horizon` frames and each key joint, the joint's
//! root-relative planar position and its world angle. Positions subtract
//! the reference root at the anchor frame, so windows are invariant to
//! rigid translation of the whole clip and carry only relative intent.

use crate::packet::{MotionPacket, PacketError};
use crate::quat;
use hord_sim::{MARKER_BASE, MARKER_FOOT_L, MARKER_FOOT_R, MARKER_HAND, NUM_MARKERS};

/// Key joints for the sparse (student) command channel: pelvis, both feet,
/// and the hand endpoint.
pub const SPARSE_KEY_JOINTS: [usize; 4] =
    [MARKER_BASE, MARKER_FOOT_L, MARKER_FOOT_R, MARKER_HAND];

/// Key joints for the dense (teacher) channel: every marker.
pub fn dense_key_joints() -> Vec<usize> {
    (0..NUM_MARKERS).collect()
}

/// One lookahead window. `entries` is row-major over `[step][key joint]`;
/// each entry is `[x_rel, z_rel, angle]`: root-relative planar position in
/// meters and world angle in radians.
#[derive(Debug, Clone, PartialEq)]
pub struct CommandWindow {
    pub horizon: usize,
    pub key_joints: Vec<usize>,
    /// Which observation channel this window feeds. The geometry is
    /// identical in both modes; sparse windows just use the 4-joint set
    /// and a short horizon.
    pub sparse: bool,
    pub entries: Vec<[f64; 3]>,
}

impl CommandWindow {
    pub fn entry(&self, step: usize, key: usize) -> [f64; 3] {
        self.entries[step * self.key_joints.len() + key]
    }

    /// Flat feature vector, 3 numbers per entry in `[step][joint]` order.
    pub fn features(&self) -> Vec<f64> {
        self.entries.iter().flatten().copied().collect()
    }
}

/// Packet frame holding at time `time_s`, clamped to the clip.
pub fn frame_at(p: &MotionPacket, time_s: f64) -> usize {
    let raw = (time_s * p.header.fps as f64).round();
    (raw.max(0.0) as usize).min(p.header.num_frames - 1)
}

/// Slice the lookahead window starting after `frame`: steps h = 1..=horizon
/// read frame + h, clamped to the final frame so a window at the clip end
/// holds the last pose. Joint 0 is the root by packet convention; its
/// translation at the (clamped) anchor frame is subtracted from every
/// position.
pub fn extract_commands(
    p: &MotionPacket,
    frame: usize,
    horizon: usize,
    key_joints: &[usize],
    sparse: bool,
) -> Result<CommandWindow, PacketError> {
    if key_joints.is_empty() {
        return Err(PacketError::Config("empty key joint set".into()));
    }
    if horizon == 0 {
        return Err(PacketError::Config("horizon must be >= 1".into()));
    }
    for &k in key_joints {
        if k >= p.header.num_joints {
            return Err(PacketError::Config(format!(
                "key joint {k} out of range for {} joints",
                p.header.num_joints
            )));
        }
    }
    let last = p.header.num_frames - 1;
    let anchor = frame.min(last);
    let root = p.translation(anchor, 0);

    let mut entries = Vec::with_capacity(horizon * key_joints.len());
    for h in 1..=horizon {
        let f = (frame + h).min(last);
        for &jnt in key_joints {
            let t = p.translation(f, jnt);
            let q = p.rotation(f, jnt);
            entries.push([t[0] - root[0], t[2] - root[2], quat::to_angle(&q)]);
        }
    }
    Ok(CommandWindow {
        horizon,
        key_joints: key_joints.to_vec(),
        sparse,
        entries,
    })
}
