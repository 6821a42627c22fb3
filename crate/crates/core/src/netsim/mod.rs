//! Emulated edge-to-central feature streaming: a bit-exact packet format,
//! a timestamp-aligning frame assembler and a TCP collector/emitter pair.

mod assembler;
mod packet;
mod tcp;

pub use assembler::{FeatureFrame, FrameAssembler, NodeFeatures, DEFAULT_TIMEOUT};
pub use packet::{
    decode_packet, encode_packet, read_frame, write_frame, FeatureKind, FeaturePacket, CRC_LEN,
    FIXED_HEADER_LEN, MAGIC, MAX_FRAME_LEN, VERSION,
};
pub use tcp::{Collector, CollectorOptions, CollectorStats, NodeEmitter};
