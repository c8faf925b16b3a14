//! NIfTI-1 single-file (`.nii`, `.nii.gz`) subset.
//!
//! Only the fields needed for voxel-grid work are interpreted: `dim`,
//! `datatype`, `bitpix`, `pixdim[1..3]`, `vox_offset`, the scaling pair and
//! an origin taken from `qoffset_*` (or the sform translation column).
//! Orientation is not interpreted.

use crate::error::{Error, Result};
use crate::volume::{Grid, LabelVolume, ScalarVolume};

pub const HEADER_SIZE: usize = 348;
/// Header plus the 4-byte extension flag.
pub const DATA_OFFSET: usize = 352;

const NIFTI_INTENT_LABEL: i16 = 1002;

mod offsets {
    pub const SIZEOF_HDR: usize = 0;
    pub const DIM: usize = 40;
    pub const INTENT_P1: usize = 56;
    pub const INTENT_CODE: usize = 68;
    pub const DATATYPE: usize = 70;
    pub const BITPIX: usize = 72;
    pub const PIXDIM: usize = 76;
    pub const VOX_OFFSET: usize = 108;
    pub const SCL_SLOPE: usize = 112;
    pub const SCL_INTER: usize = 116;
    pub const XYZT_UNITS: usize = 123;
    pub const QFORM_CODE: usize = 252;
    pub const SFORM_CODE: usize = 254;
    pub const QOFFSET: usize = 268;
    pub const SROW_X: usize = 280;
    pub const MAGIC: usize = 344;
}

/// On-disk sample types understood by the reader.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Datatype {
    Uint8,
    Int16,
    Int32,
    Float32,
    Float64,
    Int8,
    Uint16,
}

impl Datatype {
    pub const ALL: [Datatype; 7] = [
        Datatype::Uint8,
        Datatype::Int16,
        Datatype::Int32,
        Datatype::Float32,
        Datatype::Float64,
        Datatype::Int8,
        Datatype::Uint16,
    ];

    pub fn code(self) -> i16 {
        match self {
            Datatype::Uint8 => 2,
            Datatype::Int16 => 4,
            Datatype::Int32 => 8,
            Datatype::Float32 => 16,
            Datatype::Float64 => 64,
            Datatype::Int8 => 256,
            Datatype::Uint16 => 512,
        }
    }

    pub fn from_code(code: i16) -> Result<Self> {
        Ok(match code {
            2 => Datatype::Uint8,
            4 => Datatype::Int16,
            8 => Datatype::Int32,
            16 => Datatype::Float32,
            64 => Datatype::Float64,
            256 => Datatype::Int8,
            512 => Datatype::Uint16,
            other => {
                return Err(Error::Format(format!("unsupported NIfTI datatype {other}")));
            }
        })
    }

    pub fn size(self) -> usize {
        match self {
            Datatype::Uint8 | Datatype::Int8 => 1,
            Datatype::Int16 | Datatype::Uint16 => 2,
            Datatype::Int32 | Datatype::Float32 => 4,
            Datatype::Float64 => 8,
        }
    }

    fn is_float(self) -> bool {
        matches!(self, Datatype::Float32 | Datatype::Float64)
    }

    fn range(self) -> (f64, f64) {
        match self {
            Datatype::Uint8 => (0.0, u8::MAX as f64),
            Datatype::Int8 => (i8::MIN as f64, i8::MAX as f64),
            Datatype::Int16 => (i16::MIN as f64, i16::MAX as f64),
            Datatype::Uint16 => (0.0, u16::MAX as f64),
            Datatype::Int32 => (i32::MIN as f64, i32::MAX as f64),
            Datatype::Float32 => (f32::MIN as f64, f32::MAX as f64),
            Datatype::Float64 => (f64::MIN, f64::MAX),
        }
    }

    /// Whether every value in `values` is stored exactly by this type.
    pub fn represents(self, values: impl IntoIterator<Item = f64>) -> bool {
        let (lo, hi) = self.range();
        values.into_iter().all(|v| {
            v >= lo && v <= hi && (self.is_float() || v.fract() == 0.0) && {
                self != Datatype::Float32 || (v as f32) as f64 == v
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Endian {
    Little,
    Big,
}

struct Fields<'a> {
    bytes: &'a [u8],
    endian: Endian,
}

impl Fields<'_> {
    fn array<const N: usize>(&self, at: usize) -> [u8; N] {
        let mut out = [0u8; N];
        out.copy_from_slice(&self.bytes[at..at + N]);
        if self.endian == Endian::Big {
            out.reverse();
        }
        out
    }

    fn i16(&self, at: usize) -> i16 {
        i16::from_le_bytes(self.array(at))
    }

    fn i32(&self, at: usize) -> i32 {
        i32::from_le_bytes(self.array(at))
    }

    fn f32(&self, at: usize) -> f32 {
        f32::from_le_bytes(self.array(at))
    }
}

/// The decoded subset of a NIfTI-1 header.
#[derive(Debug, Clone, PartialEq)]
pub struct Header {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
    pub datatype: Datatype,
    pub vox_offset: usize,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub intent_code: i16,
    pub intent_p1: f32,
    big_endian: bool,
}

impl Header {
    pub fn is_big_endian(&self) -> bool {
        self.big_endian
    }

    fn voxel_count(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_SIZE {
            return Err(Error::Truncated(format!(
                "NIfTI header needs {HEADER_SIZE} bytes, file has {}",
                bytes.len()
            )));
        }
        let raw = i32::from_le_bytes(bytes[0..4].try_into().unwrap());
        let endian = if raw == HEADER_SIZE as i32 {
            Endian::Little
        } else if raw.swap_bytes() == HEADER_SIZE as i32 {
            Endian::Big
        } else {
            return Err(Error::Format(format!("sizeof_hdr is {raw}, expected 348")));
        };
        let f = Fields { bytes, endian };
        debug_assert_eq!(f.i32(offsets::SIZEOF_HDR), HEADER_SIZE as i32);

        match &bytes[offsets::MAGIC..offsets::MAGIC + 4] {
            b"n+1\0" => {}
            b"ni1\0" => {
                return Err(Error::Format(
                    "two-file NIfTI (.hdr/.img, magic \"ni1\") is not supported".into(),
                ));
            }
            other => {
                return Err(Error::Format(format!("bad NIfTI magic {other:?}")));
            }
        }

        let mut dim = [0i16; 8];
        for (i, d) in dim.iter_mut().enumerate() {
            *d = f.i16(offsets::DIM + 2 * i);
        }
        let rank = dim[0];
        if !(1..=7).contains(&rank) {
            return Err(Error::Format(format!("dim[0] = {rank} out of range")));
        }
        let rank = rank as usize;
        if dim[4..=rank.max(3)].iter().any(|&d| d > 1) {
            return Err(Error::Format(format!(
                "only 3D volumes are supported, dim = {:?}",
                &dim[..=rank]
            )));
        }
        let mut dims = [1usize; 3];
        for axis in 0..rank.min(3) {
            let d = dim[axis + 1];
            if d < 1 {
                return Err(Error::Format(format!(
                    "dim[{}] = {d} is not positive",
                    axis + 1
                )));
            }
            dims[axis] = d as usize;
        }

        let datatype = Datatype::from_code(f.i16(offsets::DATATYPE))?;
        let bitpix = f.i16(offsets::BITPIX);
        if bitpix as usize != datatype.size() * 8 {
            return Err(Error::Format(format!(
                "bitpix {bitpix} inconsistent with datatype {datatype:?}"
            )));
        }

        let mut spacing = [1.0f64; 3];
        for (axis, s) in spacing.iter_mut().enumerate() {
            let v = f.f32(offsets::PIXDIM + 4 * (axis + 1)).abs() as f64;
            // A zero pixdim on a singleton axis is common; treat it as 1 mm.
            *s = if v == 0.0 && dims[axis] == 1 { 1.0 } else { v };
        }
        let _units = bytes[offsets::XYZT_UNITS];

        let vox_offset = f.f32(offsets::VOX_OFFSET);
        if !(vox_offset.is_finite() && vox_offset >= DATA_OFFSET as f32) {
            return Err(Error::Format(format!("vox_offset {vox_offset} is invalid")));
        }

        let origin = if f.i16(offsets::QFORM_CODE) > 0 {
            [0, 1, 2].map(|i| f.f32(offsets::QOFFSET + 4 * i) as f64)
        } else if f.i16(offsets::SFORM_CODE) > 0 {
            [0, 1, 2].map(|i| f.f32(offsets::SROW_X + 16 * i + 12) as f64)
        } else {
            [0.0; 3]
        };

        Ok(Header {
            dims,
            spacing,
            origin,
            datatype,
            vox_offset: vox_offset as usize,
            scl_slope: f.f32(offsets::SCL_SLOPE),
            scl_inter: f.f32(offsets::SCL_INTER),
            intent_code: f.i16(offsets::INTENT_CODE),
            intent_p1: f.f32(offsets::INTENT_P1),
            big_endian: endian == Endian::Big,
        })
    }

    fn has_scaling(&self) -> bool {
        self.scl_slope != 0.0
            && self.scl_slope.is_finite()
            && (self.scl_slope != 1.0 || self.scl_inter != 0.0)
    }

    fn grid(&self) -> Result<Grid> {
        Grid::with_origin(self.dims, self.spacing, self.origin)
    }
}

/// Decodes the payload of a parsed file to f64 samples with scaling applied.
fn samples(header: &Header, bytes: &[u8]) -> Result<Vec<f64>> {
    let n = header.voxel_count();
    let size = header.datatype.size();
    let needed = n
        .checked_mul(size)
        .and_then(|b| b.checked_add(header.vox_offset))
        .ok_or_else(|| Error::Format("declared data size overflows".into()))?;
    if bytes.len() < needed {
        return Err(Error::Truncated(format!(
            "header declares {needed} bytes (offset {} + {n} voxels x {size}), file has {}",
            header.vox_offset,
            bytes.len()
        )));
    }
    let payload = &bytes[header.vox_offset..needed];
    let big = header.big_endian;
    macro_rules! decode {
        ($t:ty) => {
            payload
                .chunks_exact(size)
                .map(|c| {
                    let arr: [u8; std::mem::size_of::<$t>()] = c.try_into().unwrap();
                    (if big {
                        <$t>::from_be_bytes(arr)
                    } else {
                        <$t>::from_le_bytes(arr)
                    }) as f64
                })
                .collect::<Vec<f64>>()
        };
    }
    let mut values = match header.datatype {
        Datatype::Uint8 => decode!(u8),
        Datatype::Int8 => decode!(i8),
        Datatype::Int16 => decode!(i16),
        Datatype::Uint16 => decode!(u16),
        Datatype::Int32 => decode!(i32),
        Datatype::Float32 => decode!(f32),
        Datatype::Float64 => decode!(f64),
    };
    if header.has_scaling() {
        let (slope, inter) = (header.scl_slope as f64, header.scl_inter as f64);
        for v in &mut values {
            *v = *v * slope + inter;
        }
    }
    Ok(values)
}

pub fn decode_scalar(bytes: &[u8]) -> Result<ScalarVolume> {
    let header = Header::parse(bytes)?;
    let values = samples(&header, bytes)?;
    let data = values.into_iter().map(|v| v as f32).collect::<Vec<_>>();
    ScalarVolume::new(header.grid()?, data)
}

pub fn decode_label(bytes: &[u8]) -> Result<LabelVolume> {
    let header = Header::parse(bytes)?;
    let values = samples(&header, bytes)?;
    let labels = labels_from_samples(&values)?;
    let grid = header.grid()?;
    let max = labels.iter().copied().max().unwrap_or(0);
    let declared = if header.intent_code == NIFTI_INTENT_LABEL
        && header.intent_p1.fract() == 0.0
        && header.intent_p1 >= 0.0
        && header.intent_p1 <= u16::MAX as f32
    {
        header.intent_p1 as u16
    } else {
        0
    };
    LabelVolume::new(grid, labels, declared.max(max))
}

pub(crate) fn labels_from_samples(values: &[f64]) -> Result<Vec<u16>> {
    values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if v.fract() != 0.0 || !v.is_finite() {
                Err(Error::LabelDomain(format!(
                    "non-integral label {v} at voxel {i}"
                )))
            } else if v < 0.0 {
                Err(Error::LabelDomain(format!(
                    "negative label {v} at voxel {i}"
                )))
            } else if v > u16::MAX as f64 {
                Err(Error::LabelDomain(format!(
                    "label {v} at voxel {i} exceeds 65535"
                )))
            } else {
                Ok(v as u16)
            }
        })
        .collect()
}

struct HeaderSpec {
    grid: Grid,
    datatype: Datatype,
    intent_code: i16,
    intent_p1: f32,
}

fn encode_header(spec: &HeaderSpec) -> Result<Vec<u8>> {
    let mut h = vec![0u8; DATA_OFFSET];
    let put = |h: &mut Vec<u8>, at: usize, b: &[u8]| h[at..at + b.len()].copy_from_slice(b);

    put(
        &mut h,
        offsets::SIZEOF_HDR,
        &(HEADER_SIZE as i32).to_le_bytes(),
    );
    let dims = spec.grid.dims();
    let mut dim = [1i16; 8];
    dim[0] = 3;
    for axis in 0..3 {
        dim[axis + 1] = i16::try_from(dims[axis])
            .map_err(|_| Error::Format(format!("dimension {} does not fit NIfTI-1", dims[axis])))?;
    }
    for (i, d) in dim.iter().enumerate() {
        put(&mut h, offsets::DIM + 2 * i, &d.to_le_bytes());
    }
    put(&mut h, offsets::INTENT_P1, &spec.intent_p1.to_le_bytes());
    put(
        &mut h,
        offsets::INTENT_CODE,
        &spec.intent_code.to_le_bytes(),
    );
    put(
        &mut h,
        offsets::DATATYPE,
        &spec.datatype.code().to_le_bytes(),
    );
    put(
        &mut h,
        offsets::BITPIX,
        &((spec.datatype.size() * 8) as i16).to_le_bytes(),
    );
    let spacing = spec.grid.spacing();
    let mut pixdim = [1.0f32; 8];
    for axis in 0..3 {
        pixdim[axis + 1] = spacing[axis] as f32;
    }
    for (i, p) in pixdim.iter().enumerate() {
        put(&mut h, offsets::PIXDIM + 4 * i, &p.to_le_bytes());
    }
    put(
        &mut h,
        offsets::VOX_OFFSET,
        &(DATA_OFFSET as f32).to_le_bytes(),
    );
    put(&mut h, offsets::SCL_SLOPE, &1.0f32.to_le_bytes());
    put(&mut h, offsets::SCL_INTER, &0.0f32.to_le_bytes());
    // NIFTI_UNITS_MM
    h[offsets::XYZT_UNITS] = 2;
    put(&mut h, offsets::QFORM_CODE, &1i16.to_le_bytes());
    let origin = spec.grid.origin();
    for (i, o) in origin.iter().enumerate() {
        put(&mut h, offsets::QOFFSET + 4 * i, &(*o as f32).to_le_bytes());
    }
    put(&mut h, offsets::MAGIC, b"n+1\0");
    Ok(h)
}

fn encode_payload(out: &mut Vec<u8>, values: impl Iterator<Item = f64>, datatype: Datatype) {
    for v in values {
        match datatype {
            Datatype::Uint8 => out.push(v as u8),
            Datatype::Int8 => out.extend_from_slice(&(v as i8).to_le_bytes()),
            Datatype::Int16 => out.extend_from_slice(&(v as i16).to_le_bytes()),
            Datatype::Uint16 => out.extend_from_slice(&(v as u16).to_le_bytes()),
            Datatype::Int32 => out.extend_from_slice(&(v as i32).to_le_bytes()),
            Datatype::Float32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            Datatype::Float64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
}

pub fn encode_scalar(volume: &ScalarVolume, datatype: Datatype) -> Result<Vec<u8>> {
    let values = || volume.data().iter().map(|&v| v as f64);
    if !datatype.represents(values()) {
        return Err(Error::Format(format!(
            "intensities are not exactly representable as {datatype:?}"
        )));
    }
    let mut out = encode_header(&HeaderSpec {
        grid: *volume.grid(),
        datatype,
        intent_code: 0,
        intent_p1: 0.0,
    })?;
    out.reserve(volume.data().len() * datatype.size());
    encode_payload(&mut out, values(), datatype);
    Ok(out)
}

pub fn encode_label(volume: &LabelVolume, datatype: Datatype) -> Result<Vec<u8>> {
    let values = || volume.labels().iter().map(|&v| v as f64);
    if !datatype.represents(values().chain([volume.num_classes() as f64])) {
        return Err(Error::Format(format!(
            "labels are not representable as {datatype:?}"
        )));
    }
    let mut out = encode_header(&HeaderSpec {
        grid: *volume.grid(),
        datatype,
        intent_code: NIFTI_INTENT_LABEL,
        intent_p1: volume.num_classes() as f32,
    })?;
    out.reserve(volume.labels().len() * datatype.size());
    encode_payload(&mut out, values(), datatype);
    Ok(out)
}

/// Smallest unsigned type holding every label of `volume`.
pub fn label_datatype(volume: &LabelVolume) -> Datatype {
    if volume.num_classes() <= u8::MAX as u16 {
        Datatype::Uint8
    } else {
        Datatype::Uint16
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Hand-built header: dim=(3,4,4,4), int16, pixdim=(1,1.5,1.5,1.5).
    fn minimal_fixture(big_endian: bool) -> Vec<u8> {
        let mut h = vec![0u8; DATA_OFFSET + 64 * 2];
        let put = |h: &mut Vec<u8>, at: usize, le: &[u8]| {
            let mut b = le.to_vec();
            if big_endian {
                b.reverse();
            }
            h[at..at + b.len()].copy_from_slice(&b);
        };
        put(&mut h, 0, &348i32.to_le_bytes());
        for (i, d) in [3i16, 4, 4, 4, 1, 1, 1, 1].iter().enumerate() {
            put(&mut h, 40 + 2 * i, &d.to_le_bytes());
        }
        put(&mut h, 70, &4i16.to_le_bytes());
        put(&mut h, 72, &16i16.to_le_bytes());
        for (i, p) in [1.0f32, 1.5, 1.5, 1.5].iter().enumerate() {
            put(&mut h, 76 + 4 * i, &p.to_le_bytes());
        }
        put(&mut h, 108, &352f32.to_le_bytes());
        h[344..348].copy_from_slice(b"n+1\0");
        for i in 0..64 {
            let v = (i as i16) - 10;
            put(&mut h, DATA_OFFSET + 2 * i, &v.to_le_bytes());
        }
        h
    }

    #[test]
    fn reads_minimal_int16_fixture() {
        let v = decode_scalar(&minimal_fixture(false)).unwrap();
        assert_eq!(v.dims(), [4, 4, 4]);
        assert_eq!(v.spacing(), [1.5, 1.5, 1.5]);
        assert_eq!(v.get(0, 0, 0), -10.0);
        assert_eq!(v.get(3, 3, 3), 53.0);
    }

    #[test]
    fn big_endian_header_is_byte_swapped() {
        let le = decode_scalar(&minimal_fixture(false)).unwrap();
        let be_bytes = minimal_fixture(true);
        assert!(Header::parse(&be_bytes).unwrap().is_big_endian());
        let be = decode_scalar(&be_bytes).unwrap();
        assert_eq!(le, be);
    }

    #[test]
    fn short_payload_is_truncation() {
        let mut bytes = minimal_fixture(false);
        bytes.truncate(bytes.len() - 1);
        assert!(matches!(decode_scalar(&bytes), Err(Error::Truncated(_))));
        assert!(matches!(
            Header::parse(&bytes[..100]),
            Err(Error::Truncated(_))
        ));
    }

    #[test]
    fn bad_magic_and_bitpix() {
        let mut bytes = minimal_fixture(false);
        bytes[344..348].copy_from_slice(b"xyz\0");
        assert!(matches!(decode_scalar(&bytes), Err(Error::Format(_))));

        let mut bytes = minimal_fixture(false);
        bytes[344..348].copy_from_slice(b"ni1\0");
        assert!(matches!(decode_scalar(&bytes), Err(Error::Format(_))));

        let mut bytes = minimal_fixture(false);
        bytes[72..74].copy_from_slice(&8i16.to_le_bytes());
        assert!(matches!(decode_scalar(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn negative_labels_rejected() {
        // The fixture holds values -10..53.
        assert!(matches!(
            decode_label(&minimal_fixture(false)),
            Err(Error::LabelDomain(_))
        ));
    }

    #[test]
    fn non_integral_float_labels_rejected() {
        let g = Grid::new([2, 1, 1], [1.0; 3]).unwrap();
        let v = ScalarVolume::new(g, vec![1.0, 2.5]).unwrap();
        let bytes = encode_scalar(&v, Datatype::Float32).unwrap();
        assert!(matches!(decode_label(&bytes), Err(Error::LabelDomain(_))));
    }

    #[test]
    fn scaling_is_applied() {
        let mut bytes = minimal_fixture(false);
        bytes[112..116].copy_from_slice(&2.0f32.to_le_bytes());
        bytes[116..120].copy_from_slice(&1.0f32.to_le_bytes());
        let v = decode_scalar(&bytes).unwrap();
        assert_eq!(v.get(0, 0, 0), -19.0);
    }

    #[test]
    fn representability() {
        assert!(Datatype::Int16.represents([-5.0, 300.0]));
        assert!(!Datatype::Int16.represents([0.5]));
        assert!(!Datatype::Uint8.represents([256.0]));
        assert!(!Datatype::Float32.represents([0.1f64]));
        assert!(Datatype::Float64.represents([0.1f64]));
    }
}
