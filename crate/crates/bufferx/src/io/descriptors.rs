//! External descriptor record file: one binary record per keypoint.
//!
//! Record layout, little-endian throughout:
//!   cloud id hash (8 bytes) | scale (1 byte: 0=local, 1=middle, 2=global) |
//!   keypoint index (4 bytes) | H·W·D f32 cylindrical map | D f32 vector.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::patch::{CylDims, ExternalBackend, Scale};

pub type RecordMap = std::collections::HashMap<(u64, u8, u32), (Vec<f32>, Vec<f32>)>;

/// Stable 64-bit FNV-1a hash of a cloud id string, for use as the record key.
pub fn hash_cloud_id(id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in id.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn load_descriptor_records(path: &Path, dims: CylDims) -> Result<RecordMap> {
    dims.validate()?;
    let bytes = fs::read(path)?;
    let cyl_len = dims.h * dims.w * dims.d;
    let record_len = 8 + 1 + 4 + 4 * (cyl_len + dims.d);
    if bytes.len() % record_len != 0 {
        return Err(Error::parse(
            path,
            format!("byte {}", bytes.len() / record_len * record_len),
            format!(
                "file length {} is not a multiple of the {}-byte record",
                bytes.len(),
                record_len
            ),
        ));
    }
    let mut records = RecordMap::new();
    for r in 0..bytes.len() / record_len {
        let base = r * record_len;
        let rec = &bytes[base..base + record_len];
        let cloud_hash = u64::from_le_bytes(rec[0..8].try_into().unwrap());
        let scale = rec[8];
        if Scale::from_byte(scale).is_none() {
            return Err(Error::parse(
                path,
                format!("byte {}", base + 8),
                format!("invalid scale byte {scale}"),
            ));
        }
        let keypoint = u32::from_le_bytes(rec[9..13].try_into().unwrap());
        let mut floats = rec[13..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
        let cyl: Vec<f32> = floats.by_ref().take(cyl_len).collect();
        let vec: Vec<f32> = floats.collect();
        if cyl.iter().chain(&vec).any(|x| !x.is_finite()) {
            return Err(Error::parse(
                path,
                format!("byte {base}"),
                format!("non-finite value in record {r}"),
            ));
        }
        records.insert((cloud_hash, scale, keypoint), (cyl, vec));
    }
    Ok(records)
}

pub fn save_descriptor_records(
    path: &Path,
    dims: CylDims,
    records: &[(u64, Scale, u32, Vec<f32>, Vec<f32>)],
) -> Result<()> {
    let cyl_len = dims.h * dims.w * dims.d;
    let mut file = fs::File::create(path)?;
    let mut buf = Vec::new();
    for (cloud_hash, scale, keypoint, cyl, vec) in records {
        if cyl.len() != cyl_len || vec.len() != dims.d {
            return Err(Error::InvalidParameter(format!(
                "record shape {}x{} does not match dims {dims:?}",
                cyl.len(),
                vec.len()
            )));
        }
        buf.extend_from_slice(&cloud_hash.to_le_bytes());
        buf.push(scale.index() as u8);
        buf.extend_from_slice(&keypoint.to_le_bytes());
        for v in cyl.iter().chain(vec) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    file.write_all(&buf)?;
    Ok(())
}

/// Loads a record file into a usable descriptor backend.
pub fn load_external_backend(path: &Path, dims: CylDims) -> Result<ExternalBackend> {
    ExternalBackend::new(dims, load_descriptor_records(path, dims)?)
}
