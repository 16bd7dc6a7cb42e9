//! The `.cdc` container: a fixed 14-byte header followed by the packed payload.
//!
//! | offset | size | field                      |
//! |--------|------|----------------------------|
//! | 0      | 4    | magic `CDC1`               |
//! | 4      | 1    | version (`0x01`)           |
//! | 5      | 1    | bits dropped               |
//! | 6      | 4    | width, u32 little-endian   |
//! | 10     | 4    | height, u32 little-endian  |
//! | 14     | …    | payload                    |

use super::{payload_len, BitsDropped, PackedImage};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CDC1";
pub const VERSION: u8 = 0x01;
pub const HEADER_LEN: usize = 14;

pub fn encode_file(p: &PackedImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + p.payload().len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(p.bits().get());
    out.extend_from_slice(&p.width().to_le_bytes());
    out.extend_from_slice(&p.height().to_le_bytes());
    out.extend_from_slice(p.payload());
    out
}

pub fn decode_file(bytes: &[u8]) -> Result<PackedImage> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::NotACdcFile(bytes[..bytes.len().min(4)].to_vec()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::CorruptPayload {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    if bytes[4] != VERSION {
        return Err(Error::UnsupportedVersion(bytes[4]));
    }
    let bits = BitsDropped::new(bytes[5] as u32)?;
    let width = u32::from_le_bytes(bytes[6..10].try_into().unwrap());
    let height = u32::from_le_bytes(bytes[10..14].try_into().unwrap());
    let payload = &bytes[HEADER_LEN..];
    let expected = payload_len(width, height, bits);
    if payload.len() != expected {
        return Err(Error::CorruptPayload {
            expected,
            found: payload.len(),
        });
    }
    PackedImage::from_parts(width, height, bits, payload.to_vec())
}
