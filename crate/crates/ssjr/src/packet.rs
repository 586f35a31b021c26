//! Motion packet type and its binary file format.
//!
//! A packet stores a time-indexed motion clip as named float64 tensors:
//! per-joint world-frame translations, rotations (unit quaternions), and
//! velocities, plus per-dof local rotations, positions, and velocities.
//! Files use the shared block container with the magic `SSJRPKT1`; the
//! packet header rides in the container's JSON metadata and is validated
//! against the payload shapes on read. Round trips are bit-exact.
//!
//! Walker clips use 7 joints (pelvis, knees, feet, hand, head marker set)
//! and 7 dofs (the full generalized coordinate vector). The format itself
//! is shape-generic; clips with other skeleton sizes read and write the
//! same way.

use crate::quat;
use hord_io::{read_block_file, write_block_file, Block, BlockFile};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const PACKET_MAGIC: &[u8; 8] = b"SSJRPKT1";

#[derive(Debug, thiserror::Error)]
pub enum PacketError {
    #[error(transparent)]
    Container(#[from] hord_io::ContainerError),
    #[error("bad header: {0}")]
    BadHeader(String),
    #[error("field {field}: expected shape {expected:?}, found {found:?}")]
    BadShape {
        field: &'static str,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("field {field}: missing from file")]
    MissingField { field: &'static str },
    #[error("field {field}: non-unit quaternion (norm {norm}) at frame {frame}, index {index}")]
    NonUnitQuat {
        field: &'static str,
        frame: usize,
        index: usize,
        norm: f64,
    },
    #[error("config error: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacketHeader {
    pub fps: u32,
    /// Clip length in seconds.
    pub duration: f64,
    pub num_frames: usize,
    pub num_joints: usize,
    pub num_dofs: usize,
    /// Optional free-text description; carried through files untouched.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

/// A motion clip. All tensors are flat row-major `Vec<f64>` with shapes
/// given in the field comments; `T` is `num_frames`, `J` `num_joints`,
/// `D` `num_dofs`. Packets are immutable once built: every operation that
/// changes one returns a new packet.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionPacket {
    pub header: PacketHeader,
    /// [T, J, 3] world positions, meters. Planar clips embed (x, z) as
    /// (x, 0, z): index 2 is height.
    pub global_translation: Vec<f64>,
    /// [T, J, 4] world rotations, unit quaternions in [w, x, y, z] order.
    pub global_rotation_quat: Vec<f64>,
    /// [T, J, 3] world linear velocities, m/s.
    pub global_lin_vel: Vec<f64>,
    /// [T, J, 3] world angular velocities, rad/s about (x, y, z).
    pub global_ang_vel: Vec<f64>,
    /// [T, D, 4] per-dof local rotations, unit quaternions.
    pub local_rotation_quat: Vec<f64>,
    /// [T, 3] root linear velocity, m/s.
    pub root_lin_vel: Vec<f64>,
    /// [T, 3] root angular velocity, rad/s.
    pub root_ang_vel: Vec<f64>,
    /// [T, D] generalized positions.
    pub dof_pos: Vec<f64>,
    /// [T, D] generalized velocities.
    pub dof_vel: Vec<f64>,
}

impl MotionPacket {
    /// Frames divided by fps must reproduce the header duration; this is
    /// the canonical frame-count rule used everywhere a clip is resampled.
    pub fn expected_frames(fps: u32, duration: f64) -> usize {
        (fps as f64 * duration).round() as usize
    }

    pub fn translation(&self, frame: usize, joint: usize) -> [f64; 3] {
        let j = self.header.num_joints;
        let at = (frame * j + joint) * 3;
        [
            self.global_translation[at],
            self.global_translation[at + 1],
            self.global_translation[at + 2],
        ]
    }

    pub fn rotation(&self, frame: usize, joint: usize) -> quat::Quat {
        let j = self.header.num_joints;
        let at = (frame * j + joint) * 4;
        [
            self.global_rotation_quat[at],
            self.global_rotation_quat[at + 1],
            self.global_rotation_quat[at + 2],
            self.global_rotation_quat[at + 3],
        ]
    }

    pub fn lin_vel(&self, frame: usize, joint: usize) -> [f64; 3] {
        let j = self.header.num_joints;
        let at = (frame * j + joint) * 3;
        [
            self.global_lin_vel[at],
            self.global_lin_vel[at + 1],
            self.global_lin_vel[at + 2],
        ]
    }

    pub fn dof(&self, frame: usize, dof: usize) -> f64 {
        self.dof_pos[frame * self.header.num_dofs + dof]
    }

    pub fn dof_velocity(&self, frame: usize, dof: usize) -> f64 {
        self.dof_vel[frame * self.header.num_dofs + dof]
    }

    /// Check every structural invariant: frame-count rule, tensor shapes,
    /// and unit-norm quaternions (within 1e-6).
    pub fn validate(&self) -> Result<(), PacketError> {
        let h = &self.header;
        if h.num_frames != Self::expected_frames(h.fps, h.duration) {
            return Err(PacketError::BadHeader(format!(
                "num_frames {} != round(fps {} x duration {})",
                h.num_frames, h.fps, h.duration
            )));
        }
        if h.num_frames == 0 || h.num_joints == 0 || h.num_dofs == 0 {
            return Err(PacketError::BadHeader(
                "zero frames, joints, or dofs".into(),
            ));
        }
        let (t, j, d) = (h.num_frames, h.num_joints, h.num_dofs);
        self.check_len("global_translation", self.global_translation.len(), &[t, j, 3])?;
        self.check_len("global_rotation_quat", self.global_rotation_quat.len(), &[t, j, 4])?;
        self.check_len("global_lin_vel", self.global_lin_vel.len(), &[t, j, 3])?;
        self.check_len("global_ang_vel", self.global_ang_vel.len(), &[t, j, 3])?;
        self.check_len("local_rotation_quat", self.local_rotation_quat.len(), &[t, d, 4])?;
        self.check_len("root_lin_vel", self.root_lin_vel.len(), &[t, 3])?;
        self.check_len("root_ang_vel", self.root_ang_vel.len(), &[t, 3])?;
        self.check_len("dof_pos", self.dof_pos.len(), &[t, d])?;
        self.check_len("dof_vel", self.dof_vel.len(), &[t, d])?;
        check_unit_quats("global_rotation_quat", &self.global_rotation_quat, j)?;
        check_unit_quats("local_rotation_quat", &self.local_rotation_quat, d)?;
        Ok(())
    }

    fn check_len(
        &self,
        field: &'static str,
        len: usize,
        shape: &[usize],
    ) -> Result<(), PacketError> {
        let expected: usize = shape.iter().product();
        if len != expected {
            return Err(PacketError::BadShape {
                field,
                expected: shape.to_vec(),
                found: vec![len],
            });
        }
        Ok(())
    }
}

fn check_unit_quats(field: &'static str, data: &[f64], per_frame: usize) -> Result<(), PacketError> {
    for (i, q) in data.chunks_exact(4).enumerate() {
        let n = quat::norm(&[q[0], q[1], q[2], q[3]]);
        if (n - 1.0).abs() > 1e-6 {
            return Err(PacketError::NonUnitQuat {
                field,
                frame: i / per_frame,
                index: i % per_frame,
                norm: n,
            });
        }
    }
    Ok(())
}

const FIELDS: [(&str, usize); 9] = [
    ("global_translation", 0),
    ("global_rotation_quat", 1),
    ("global_lin_vel", 2),
    ("global_ang_vel", 3),
    ("local_rotation_quat", 4),
    ("root_lin_vel", 5),
    ("root_ang_vel", 6),
    ("dof_pos", 7),
    ("dof_vel", 8),
];

fn field_shape(header: &PacketHeader, idx: usize) -> Vec<usize> {
    let (t, j, d) = (header.num_frames, header.num_joints, header.num_dofs);
    match idx {
        0 => vec![t, j, 3],
        1 => vec![t, j, 4],
        2 | 3 => vec![t, j, 3],
        4 => vec![t, d, 4],
        5 | 6 => vec![t, 3],
        7 | 8 => vec![t, d],
        _ => unreachable!(),
    }
}

fn field_data<'a>(p: &'a MotionPacket, idx: usize) -> &'a [f64] {
    match idx {
        0 => &p.global_translation,
        1 => &p.global_rotation_quat,
        2 => &p.global_lin_vel,
        3 => &p.global_ang_vel,
        4 => &p.local_rotation_quat,
        5 => &p.root_lin_vel,
        6 => &p.root_ang_vel,
        7 => &p.dof_pos,
        8 => &p.dof_vel,
        _ => unreachable!(),
    }
}

/// Validate and write a packet. Identical packets produce identical bytes.
pub fn write_packet(p: &MotionPacket, path: &Path) -> Result<(), PacketError> {
    p.validate()?;
    let meta = serde_json::to_value(&p.header)
        .map_err(|e| PacketError::BadHeader(e.to_string()))?;
    let mut file = BlockFile::new(PACKET_MAGIC, meta);
    for (name, idx) in FIELDS {
        file.push(Block::new(
            name,
            field_shape(&p.header, idx),
            field_data(p, idx).to_vec(),
        ));
    }
    write_block_file(path, &file)?;
    Ok(())
}

/// Read and fully validate a packet. Corrupt headers, shape mismatches,
/// and non-unit quaternions are rejected; no partial packet escapes.
pub fn read_packet(path: &Path) -> Result<MotionPacket, PacketError> {
    let file = read_block_file(path, Some(PACKET_MAGIC))?;
    let header: PacketHeader = serde_json::from_value(file.meta.clone())
        .map_err(|e| PacketError::BadHeader(e.to_string()))?;

    let mut tensors: [Option<Vec<f64>>; 9] = Default::default();
    for (name, idx) in FIELDS {
        let block = file
            .block(name)
            .ok_or(PacketError::MissingField { field: name })?;
        let expected = field_shape(&header, idx);
        if block.shape != expected {
            return Err(PacketError::BadShape {
                field: name,
                expected,
                found: block.shape.clone(),
            });
        }
        tensors[idx] = Some(block.values.clone());
    }
    let mut taken = tensors.into_iter().map(|t| t.unwrap());
    let packet = MotionPacket {
        header,
        global_translation: taken.next().unwrap(),
        global_rotation_quat: taken.next().unwrap(),
        global_lin_vel: taken.next().unwrap(),
        global_ang_vel: taken.next().unwrap(),
        local_rotation_quat: taken.next().unwrap(),
        root_lin_vel: taken.next().unwrap(),
        root_ang_vel: taken.next().unwrap(),
        dof_pos: taken.next().unwrap(),
        dof_vel: taken.next().unwrap(),
    };
    packet.validate()?;
    Ok(packet)
}
