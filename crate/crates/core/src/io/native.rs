//! Minimal native volume format used for hand-built fixtures.
//!
//! Layout (little-endian): 4-byte magic (`PSV1` scalar / `PLV1` label),
//! three u32 dims, three f32 spacings, one u32 trailer (num_classes for
//! label files, zero otherwise), then float32 or uint16 samples.

use crate::error::{Error, Result};
use crate::io::nifti::labels_from_samples;
use crate::volume::{Grid, LabelVolume, ScalarVolume};

pub const SCALAR_MAGIC: &[u8; 4] = b"PSV1";
pub const LABEL_MAGIC: &[u8; 4] = b"PLV1";
pub const HEADER_SIZE: usize = 32;

struct Header {
    label: bool,
    grid: Grid,
    trailer: u32,
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

fn f32_at(bytes: &[u8], at: usize) -> f32 {
    f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

pub fn has_magic(bytes: &[u8]) -> bool {
    bytes.len() >= 4 && (&bytes[..4] == SCALAR_MAGIC || &bytes[..4] == LABEL_MAGIC)
}

fn parse(bytes: &[u8]) -> Result<Header> {
    if !has_magic(bytes) {
        return Err(Error::Format("not a native volume file".into()));
    }
    if bytes.len() < HEADER_SIZE {
        return Err(Error::Truncated(format!(
            "native header needs {HEADER_SIZE} bytes, file has {}",
            bytes.len()
        )));
    }
    let dims = [0, 1, 2].map(|i| u32_at(bytes, 4 + 4 * i) as usize);
    let spacing = [0, 1, 2].map(|i| f32_at(bytes, 16 + 4 * i) as f64);
    let header = Header {
        label: &bytes[..4] == LABEL_MAGIC,
        grid: Grid::new(dims, spacing)?,
        trailer: u32_at(bytes, 28),
    };
    let sample = if header.label { 2 } else { 4 };
    let needed = HEADER_SIZE + header.grid.len() * sample;
    if bytes.len() < needed {
        return Err(Error::Truncated(format!(
            "header declares {needed} bytes, file has {}",
            bytes.len()
        )));
    }
    Ok(header)
}

fn payload(header: &Header, bytes: &[u8]) -> Vec<f64> {
    let n = header.grid.len();
    if header.label {
        bytes[HEADER_SIZE..HEADER_SIZE + 2 * n]
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]) as f64)
            .collect()
    } else {
        bytes[HEADER_SIZE..HEADER_SIZE + 4 * n]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect()
    }
}

pub fn decode_scalar(bytes: &[u8]) -> Result<ScalarVolume> {
    let header = parse(bytes)?;
    let data = payload(&header, bytes)
        .into_iter()
        .map(|v| v as f32)
        .collect();
    ScalarVolume::new(header.grid, data)
}

pub fn decode_label(bytes: &[u8]) -> Result<LabelVolume> {
    let header = parse(bytes)?;
    let labels = labels_from_samples(&payload(&header, bytes))?;
    let max = labels.iter().copied().max().unwrap_or(0);
    let declared = if header.label {
        u16::try_from(header.trailer).unwrap_or(0)
    } else {
        0
    };
    LabelVolume::new(header.grid, labels, declared.max(max))
}

fn encode_header(magic: &[u8; 4], grid: &Grid, trailer: u32) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(HEADER_SIZE + grid.len() * 4);
    out.extend_from_slice(magic);
    for d in grid.dims() {
        let d = u32::try_from(d)
            .map_err(|_| Error::Format(format!("dimension {d} does not fit u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for s in grid.spacing() {
        out.extend_from_slice(&(s as f32).to_le_bytes());
    }
    out.extend_from_slice(&trailer.to_le_bytes());
    Ok(out)
}

pub fn encode_scalar(volume: &ScalarVolume) -> Result<Vec<u8>> {
    let mut out = encode_header(SCALAR_MAGIC, volume.grid(), 0)?;
    for v in volume.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn encode_label(volume: &LabelVolume) -> Result<Vec<u8>> {
    let mut out = encode_header(LABEL_MAGIC, volume.grid(), volume.num_classes() as u32)?;
    for v in volume.labels() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}
