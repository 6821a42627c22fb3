//! Binary wire format for timestamped feature packets.
//!
//! ```text
//! offset  size       field
//! 0       4          magic "WSNF"
//! 4       1          version (1)
//! 5       1          node_id
//! 6       1          kind (0 soundmap, 1 gtgram, 2 position)
//! 7       8          timestamp, u64 LE, whole epoch seconds
//! 15      1          ndims
//! 16      2·ndims    dims, u16 LE each
//! ..      4·Πdims    payload, f32 LE, row-major
//! ..      4          CRC-32 (IEEE) of everything above, u32 LE
//! ```

use std::io::{ErrorKind, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"WSNF";
pub const VERSION: u8 = 1;
/// Bytes before the dims array.
pub const FIXED_HEADER_LEN: usize = 16;
pub const CRC_LEN: usize = 4;
/// Upper bound accepted by [`read_frame`].
pub const MAX_FRAME_LEN: usize = 16 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Soundmap = 0,
    Gtgram = 1,
    Position = 2,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 3] = [FeatureKind::Soundmap, FeatureKind::Gtgram, FeatureKind::Position];

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(FeatureKind::Soundmap),
            1 => Some(FeatureKind::Gtgram),
            2 => Some(FeatureKind::Position),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturePacket {
    pub version: u8,
    pub node_id: u8,
    pub kind: FeatureKind,
    pub timestamp: u64,
    pub dims: Vec<u16>,
    pub payload: Vec<f32>,
}

impl FeaturePacket {
    pub fn new(node_id: u8, kind: FeatureKind, timestamp: u64, dims: Vec<u16>, payload: Vec<f32>) -> Self {
        Self {
            version: VERSION,
            node_id,
            kind,
            timestamp,
            dims,
            payload,
        }
    }

    pub fn encoded_len(&self) -> usize {
        FIXED_HEADER_LEN + 2 * self.dims.len() + 4 * self.payload.len() + CRC_LEN
    }

    fn validate(&self) -> Result<()> {
        if self.version != VERSION {
            return Err(Error::InvalidPacket(format!("unsupported version {}", self.version)));
        }
        if self.dims.len() > u8::MAX as usize {
            return Err(Error::InvalidPacket(format!("{} dims exceed 255", self.dims.len())));
        }
        let expected = element_count(&self.dims);
        if expected != Some(self.payload.len()) {
            return Err(Error::InvalidPacket(format!(
                "dims {:?} describe {expected:?} values, payload has {}",
                self.dims,
                self.payload.len()
            )));
        }
        Ok(())
    }
}

/// Product of `dims`, `None` on overflow.
fn element_count(dims: &[u16]) -> Option<usize> {
    dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
}

pub fn encode_packet(p: &FeaturePacket) -> Result<Vec<u8>> {
    p.validate()?;
    let mut out = Vec::with_capacity(p.encoded_len());
    out.extend_from_slice(&MAGIC);
    out.push(p.version);
    out.push(p.node_id);
    out.push(p.kind as u8);
    out.extend_from_slice(&p.timestamp.to_le_bytes());
    out.push(p.dims.len() as u8);
    for d in &p.dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in &p.payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn decode_packet(bytes: &[u8]) -> Result<FeaturePacket> {
    let need = |needed: usize| -> Result<()> {
        if bytes.len() < needed {
            Err(Error::Truncated {
                needed,
                available: bytes.len(),
            })
        } else {
            Ok(())
        }
    };
    need(MAGIC.len())?;
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    need(FIXED_HEADER_LEN)?;
    let ndims = bytes[15] as usize;
    need(FIXED_HEADER_LEN + 2 * ndims)?;
    let dims: Vec<u16> = bytes[FIXED_HEADER_LEN..FIXED_HEADER_LEN + 2 * ndims]
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect();
    let payload_start = FIXED_HEADER_LEN + 2 * ndims;
    let body_len = element_count(&dims)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(payload_start))
        .ok_or_else(|| Error::InvalidPacket(format!("dims {dims:?} overflow")))?;
    need(body_len + CRC_LEN)?;

    let stored = u32::from_le_bytes(bytes[body_len..body_len + CRC_LEN].try_into().unwrap());
    let computed = crc32fast::hash(&bytes[..body_len]);
    if stored != computed {
        return Err(Error::BadCrc { stored, computed });
    }
    let version = bytes[4];
    if version != VERSION {
        return Err(Error::InvalidPacket(format!("unsupported version {version}")));
    }
    let kind = FeatureKind::from_u8(bytes[6])
        .ok_or_else(|| Error::InvalidPacket(format!("unknown feature kind {}", bytes[6])))?;
    if bytes.len() != body_len + CRC_LEN {
        return Err(Error::InvalidPacket(format!(
            "{} trailing bytes",
            bytes.len() - body_len - CRC_LEN
        )));
    }
    let payload = bytes[payload_start..body_len]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(FeaturePacket {
        version,
        node_id: bytes[5],
        kind,
        timestamp: u64::from_le_bytes(bytes[7..15].try_into().unwrap()),
        dims,
        payload,
    })
}

/// Writes one length-delimited frame: u32 LE byte count, then the bytes.
pub fn write_frame<W: Write>(w: &mut W, bytes: &[u8]) -> std::io::Result<()> {
    let len = u32::try_from(bytes.len())
        .map_err(|_| std::io::Error::new(ErrorKind::InvalidInput, "frame too large"))?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(bytes)
}

/// Reads one length-delimited frame; `Ok(None)` on a clean end of stream.
pub fn read_frame<R: Read>(r: &mut R) -> std::io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut len[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(ErrorKind::UnexpectedEof.into()),
            Ok(n) => got += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    let len = u32::from_le_bytes(len) as usize;
    if len > MAX_FRAME_LEN {
        return Err(std::io::Error::new(
            ErrorKind::InvalidData,
            format!("frame length {len} exceeds {MAX_FRAME_LEN}"),
        ));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    Ok(Some(buf))
}
