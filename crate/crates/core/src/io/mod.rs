//! Reading and writing volumes on disk.
//!
//! Files are recognised by content: NIfTI-1 single-file (optionally gzip
//! compressed) or the native fixture format. On write the format is chosen
//! by extension: `.pvol` (optionally `.pvol.gz`) selects the native format,
//! anything else is written as NIfTI-1, gzip-compressed when the path ends
//! in `.gz`. Writing is always little-endian.

pub mod native;
pub mod nifti;

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::error::{Error, Result};
use crate::volume::{LabelVolume, ScalarVolume, Volume};

pub use nifti::Datatype;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VolumeKind {
    Scalar,
    Label,
}

/// Extensions probed when looking a case up by id in a directory.
pub const KNOWN_EXTENSIONS: [&str; 4] = ["nii.gz", "nii", "pvol", "pvol.gz"];

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.len() >= 2 && raw[0] == 0x1F && raw[1] == 0x8B {
        let mut out = Vec::with_capacity(raw.len() * 2);
        MultiGzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::UnexpectedEof => {
                    Error::Truncated(format!("{}: gzip stream ends early", path.display()))
                }
                _ => Error::io(path, e),
            })?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn with_path(path: &Path, err: Error) -> Error {
    match err {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        Error::Truncated(m) => Error::Truncated(format!("{}: {m}", path.display())),
        Error::LabelDomain(m) => Error::LabelDomain(format!("{}: {m}", path.display())),
        other => other,
    }
}

pub fn read_volume(path: impl AsRef<Path>, kind: VolumeKind) -> Result<Volume> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    let native = native::has_magic(&bytes);
    let out = match (kind, native) {
        (VolumeKind::Scalar, true) => native::decode_scalar(&bytes).map(Volume::Scalar),
        (VolumeKind::Label, true) => native::decode_label(&bytes).map(Volume::Label),
        (VolumeKind::Scalar, false) => nifti::decode_scalar(&bytes).map(Volume::Scalar),
        (VolumeKind::Label, false) => nifti::decode_label(&bytes).map(Volume::Label),
    };
    out.map_err(|e| with_path(path, e))
}

pub fn read_scalar(path: impl AsRef<Path>) -> Result<ScalarVolume> {
    match read_volume(path, VolumeKind::Scalar)? {
        Volume::Scalar(v) => Ok(v),
        Volume::Label(_) => unreachable!(),
    }
}

pub fn read_label(path: impl AsRef<Path>) -> Result<LabelVolume> {
    match read_volume(path, VolumeKind::Label)? {
        Volume::Label(v) => Ok(v),
        Volume::Scalar(_) => unreachable!(),
    }
}

fn is_native_path(path: &Path) -> bool {
    let name = path.to_string_lossy();
    name.ends_with(".pvol") || name.ends_with(".pvol.gz")
}

fn is_gzip_path(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let data = if is_gzip_path(path) {
        let mut enc = GzEncoder::new(Vec::with_capacity(bytes.len() / 2), Compression::fast());
        enc.write_all(bytes).map_err(|e| Error::io(path, e))?;
        enc.finish().map_err(|e| Error::io(path, e))?
    } else {
        bytes.to_vec()
    };
    fs::write(path, data).map_err(|e| Error::io(path, e))
}

fn encode_scalar_default(v: &ScalarVolume, path: &Path) -> Result<Vec<u8>> {
    if is_native_path(path) {
        native::encode_scalar(v)
    } else {
        nifti::encode_scalar(v, Datatype::Float32)
    }
}

fn encode_label_default(v: &LabelVolume, path: &Path) -> Result<Vec<u8>> {
    if is_native_path(path) {
        native::encode_label(v)
    } else {
        nifti::encode_label(v, nifti::label_datatype(v))
    }
}

/// Writes a volume with the default on-disk type: float32 for images, the
/// smallest unsigned integer type for labels.
pub fn write_volume(volume: &Volume, path: impl AsRef<Path>) -> Result<()> {
    match volume {
        Volume::Scalar(v) => write_scalar(v, path),
        Volume::Label(v) => write_label(v, path),
    }
}

/// Writes NIfTI-1 with an explicit sample type; fails if any value would
/// not be stored exactly.
pub fn write_nifti_as(volume: &Volume, path: impl AsRef<Path>, datatype: Datatype) -> Result<()> {
    let path = path.as_ref();
    let bytes = match volume {
        Volume::Scalar(v) => nifti::encode_scalar(v, datatype)?,
        Volume::Label(v) => nifti::encode_label(v, datatype)?,
    };
    write_bytes(path, &bytes)
}

pub fn write_scalar(volume: &ScalarVolume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    write_bytes(path, &encode_scalar_default(volume, path)?)
}

pub fn write_label(volume: &LabelVolume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    write_bytes(path, &encode_label_default(volume, path)?)
}

/// Finds `<dir>/<case_id>.<ext>` for the first known extension that exists.
pub fn find_case_file(dir: &Path, case_id: &str) -> Option<std::path::PathBuf> {
    KNOWN_EXTENSIONS
        .iter()
        .map(|ext| dir.join(format!("{case_id}.{ext}")))
        .find(|p| p.is_file())
}
