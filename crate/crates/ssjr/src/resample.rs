//! Frame-rate conversion for motion packets.

use crate::packet::{MotionPacket, PacketError};
use crate::quat;

/// Resample a packet to `target_fps`. Linear fields interpolate linearly,
/// quaternions spherically; the duration is preserved and the frame count
/// follows the round(fps x duration) rule. Same-rate calls return the
/// packet unchanged, which also makes resampling idempotent at a rate.
pub fn resample(p: &MotionPacket, target_fps: u32) -> Result<MotionPacket, PacketError> {
    if target_fps == 0 {
        return Err(PacketError::Config("target fps must be >= 1".into()));
    }
    if target_fps == p.header.fps {
        return Ok(p.clone());
    }
    let t_new = MotionPacket::expected_frames(target_fps, p.header.duration);
    if t_new < 2 {
        return Err(PacketError::BadHeader(format!(
            "resampling to {target_fps} fps leaves {t_new} frame(s); need at least 2"
        )));
    }
    let t_src = p.header.num_frames;
    let (j, d) = (p.header.num_joints, p.header.num_dofs);

    // Source position of output frame i, clamped so the last output frame
    // never reads past the final source frame.
    let positions: Vec<(usize, usize, f64)> = (0..t_new)
        .map(|i| {
            let s = (i as f64 * p.header.fps as f64 / target_fps as f64)
                .min((t_src - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(t_src - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect();

    let lerp_field = |data: &[f64], width: usize| -> Vec<f64> {
        let mut out = Vec::with_capacity(t_new * width);
        for &(i0, i1, u) in &positions {
            for k in 0..width {
                let a = data[i0 * width + k];
                let b = data[i1 * width + k];
                out.push(a + u * (b - a));
            }
        }
        out
    };
    let slerp_field = |data: &[f64], per_frame: usize| -> Vec<f64> {
        let width = per_frame * 4;
        let mut out = Vec::with_capacity(t_new * width);
        for &(i0, i1, u) in &positions {
            for k in 0..per_frame {
                let at0 = i0 * width + k * 4;
                let at1 = i1 * width + k * 4;
                let a = [data[at0], data[at0 + 1], data[at0 + 2], data[at0 + 3]];
                let b = [data[at1], data[at1 + 1], data[at1 + 2], data[at1 + 3]];
                out.extend_from_slice(&quat::slerp(&a, &b, u));
            }
        }
        out
    };

    let mut header = p.header.clone();
    header.fps = target_fps;
    header.num_frames = t_new;
    let out = MotionPacket {
        header,
        global_translation: lerp_field(&p.global_translation, j * 3),
        global_rotation_quat: slerp_field(&p.global_rotation_quat, j),
        global_lin_vel: lerp_field(&p.global_lin_vel, j * 3),
        global_ang_vel: lerp_field(&p.global_ang_vel, j * 3),
        local_rotation_quat: slerp_field(&p.local_rotation_quat, d),
        root_lin_vel: lerp_field(&p.root_lin_vel, 3),
        root_ang_vel: lerp_field(&p.root_ang_vel, 3),
        dof_pos: lerp_field(&p.dof_pos, d),
        dof_vel: lerp_field(&p.dof_vel, d),
    };
    out.validate()?;
    Ok(out)
}
