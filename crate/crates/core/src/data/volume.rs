//! `VOL3` volume files.
//!
//! Layout, all little-endian:
//!
//! | bytes | field |
//! |-------|-------|
//! | 4 | magic `VOL3` |
//! | 4 | version `u32` = 1 |
//! | 16 | `C, D, H, W` as `u32` |
//! | 4·C·D·H·W | `f32` voxels, row-major, channel outermost |

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const VOLUME_MAGIC: &[u8; 4] = b"VOL3";
pub const VOLUME_VERSION: u32 = 1;
const HEADER_LEN: usize = 24;

pub fn encode_volume(volume: &Tensor<f32>) -> Result<Vec<u8>> {
    if volume.rank() != 4 {
        return Err(Error::shape(
            "save_volume",
            format!("volume must be [C,D,H,W], got {:?}", volume.shape()),
        ));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * volume.numel());
    out.extend_from_slice(VOLUME_MAGIC);
    out.extend_from_slice(&VOLUME_VERSION.to_le_bytes());
    for &d in volume.shape() {
        let d = u32::try_from(d).map_err(|_| Error::shape("save_volume", "extent exceeds u32"))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for &v in volume.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_volume(bytes: &[u8], path: &Path) -> Result<Tensor<f32>> {
    let format = |detail: &str| Error::Format {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    };
    if bytes.len() < 8 {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: HEADER_LEN as u64,
            actual: bytes.len() as u64,
        });
    }
    if &bytes[..4] != VOLUME_MAGIC {
        return Err(format(&format!("bad magic {:?}, expected \"VOL3\"", String::from_utf8_lossy(&bytes[..4]))));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VOLUME_VERSION {
        return Err(Error::Version {
            what: "VOL3",
            found: version,
            supported: VOLUME_VERSION,
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: HEADER_LEN as u64,
            actual: bytes.len() as u64,
        });
    }
    let dims: Vec<usize> = bytes[8..HEADER_LEN]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize)
        .collect();
    let numel = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| format("dimensions overflow"))?;
    let expected = HEADER_LEN as u64 + 4 * numel as u64;
    if bytes.len() as u64 != expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            actual: bytes.len() as u64,
        });
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Tensor::from_vec(dims, data)
}

pub fn save_volume(path: impl AsRef<Path>, volume: &Tensor<f32>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_volume(volume)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_volume(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_volume(&bytes, path)
}
