//! Flat binary array files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic   4 bytes  b"DQAR"
//! version u16      currently 1
//! dtype   u8       1 = f64
//! rank    u8
//! extents u64 * rank
//! payload f64 * product(extents)
//! crc32   u32      over everything above
//! ```
//!
//! The format is deliberately dumb: language-neutral, byte-exact, and
//! checkable. Corruption surfaces as a typed error, never as garbage data.

use crate::error::FormatError;
use crate::{CoreError, Result};
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: [u8; 4] = *b"DQAR";
pub const VERSION: u16 = 1;
pub const DTYPE_F64: u8 = 1;

/// A shaped f64 array as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Array {
    pub extents: Vec<u64>,
    pub data: Vec<f64>,
}

impl Array {
    pub fn new(extents: Vec<u64>, data: Vec<f64>) -> Result<Self> {
        let expect: u64 = extents.iter().product();
        if expect != data.len() as u64 {
            return Err(CoreError::Validation(format!(
                "array extents {extents:?} imply {expect} values, got {}",
                data.len()
            )));
        }
        Ok(Self { extents, data })
    }
}

/// Serializes an array into the container format.
pub fn encode(array: &Array) -> Vec<u8> {
    let mut buf = Vec::with_capacity(16 + array.extents.len() * 8 + array.data.len() * 8 + 4);
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(DTYPE_F64);
    buf.push(array.extents.len() as u8);
    for e in &array.extents {
        buf.extend_from_slice(&e.to_le_bytes());
    }
    for v in &array.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

/// Parses and verifies a container, ignoring any trailing bytes.
pub fn decode(bytes: &[u8]) -> Result<Array> {
    decode_prefix(bytes).map(|(a, _)| a)
}

/// Parses a container from the front of `bytes`, returning the array and the
/// number of bytes consumed. Lets several containers live in one file.
pub fn decode_prefix(bytes: &[u8]) -> Result<(Array, usize)> {
    let need = |n: usize| -> Result<()> {
        if bytes.len() < n {
            Err(FormatError::Truncated {
                needed: n as u64,
                available: bytes.len() as u64,
            }
            .into())
        } else {
            Ok(())
        }
    };
    need(8)?;
    let mut magic = [0u8; 4];
    magic.copy_from_slice(&bytes[..4]);
    if magic != MAGIC {
        return Err(FormatError::BadMagic {
            expected: MAGIC,
            found: magic,
        }
        .into());
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(FormatError::Version {
            found: version,
            supported: VERSION,
        }
        .into());
    }
    let dtype = bytes[6];
    if dtype != DTYPE_F64 {
        return Err(FormatError::Dtype(dtype).into());
    }
    let rank = bytes[7] as usize;
    let header = 8 + rank * 8;
    need(header)?;
    let mut extents = Vec::with_capacity(rank);
    for i in 0..rank {
        let mut b = [0u8; 8];
        b.copy_from_slice(&bytes[8 + i * 8..16 + i * 8]);
        extents.push(u64::from_le_bytes(b));
    }
    let count: u64 = extents.iter().product();
    let total = header as u64 + count * 8 + 4;
    need(total as usize)?;
    let payload_end = header + (count as usize) * 8;

    let mut crc_bytes = [0u8; 4];
    crc_bytes.copy_from_slice(&bytes[payload_end..payload_end + 4]);
    let stored = u32::from_le_bytes(crc_bytes);
    let computed = crc32fast::hash(&bytes[..payload_end]);
    if stored != computed {
        return Err(FormatError::Checksum { stored, computed }.into());
    }

    let mut data = Vec::with_capacity(count as usize);
    for chunk in bytes[header..payload_end].chunks_exact(8) {
        let mut b = [0u8; 8];
        b.copy_from_slice(chunk);
        data.push(f64::from_le_bytes(b));
    }
    Ok((Array::new(extents, data)?, payload_end + 4))
}

pub fn write_array(path: &Path, array: &Array) -> Result<()> {
    let bytes = encode(array);
    let mut file = std::fs::File::create(path).map_err(|e| CoreError::io(path, e))?;
    file.write_all(&bytes).map_err(|e| CoreError::io(path, e))?;
    Ok(())
}

pub fn read_array(path: &Path) -> Result<Array> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| CoreError::io(path, e))?
        .read_to_end(&mut bytes)
        .map_err(|e| CoreError::io(path, e))?;
    decode(&bytes)
}
