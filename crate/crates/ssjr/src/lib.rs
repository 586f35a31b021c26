//! Motion packets and the sparse-command interface.
//!
//! This crate owns the clip format the rest of the stack trains against:
//! a binary packet of time-indexed joint trajectories, procedural clip
//! generation on the simulator, acceptance filtering, frame-rate
//! conversion, and the lookahead command windows policies consume.

pub mod commands;
pub mod filter;
pub mod generate;
pub mod packet;
pub mod quat;
pub mod resample;

pub use commands::{
    dense_key_joints, extract_commands, frame_at, CommandWindow, SPARSE_KEY_JOINTS,
};
pub use filter::{filter_clip, ClipFilterReport, RejectReason};
pub use generate::{generate_reference, GenerateError, MotionKind, ALL_KINDS, CLIP_FPS};
pub use packet::{read_packet, write_packet, MotionPacket, PacketError, PacketHeader, PACKET_MAGIC};
pub use resample::resample;
