//! Planar 8-bit luma files: frames back to back, no header. Dimensions come
//! from the caller or from a sidecar `<file>.hdr` holding `W H F`.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::{CodecError, LumaSequence, Plane};

#[derive(Debug, Error)]
pub enum RawError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: malformed header {content:?}; expected \"W H F\"")]
    Header { path: PathBuf, content: String },
    #[error("{path}: {actual} bytes, expected {expected} for {width}x{height}x{frames}")]
    Size { path: PathBuf, expected: usize, actual: usize, width: usize, height: usize, frames: usize },
    #[error(transparent)]
    Codec(#[from] CodecError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RawDims {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".hdr");
    PathBuf::from(s)
}

pub fn read_sidecar(path: &Path) -> Result<RawDims, RawError> {
    let hdr = sidecar_path(path);
    let content = fs::read_to_string(&hdr).map_err(|source| RawError::Io { path: hdr.clone(), source })?;
    let fields: Vec<usize> = content.split_whitespace().filter_map(|t| t.parse().ok()).collect();
    match (fields.as_slice(), content.split_whitespace().count()) {
        ([w, h, f], 3) if *w > 0 && *h > 0 && *f > 0 => Ok(RawDims { width: *w, height: *h, frames: *f }),
        _ => Err(RawError::Header { path: hdr, content }),
    }
}

pub fn write_sidecar(path: &Path, dims: RawDims) -> Result<(), RawError> {
    let hdr = sidecar_path(path);
    fs::write(&hdr, format!("{} {} {}\n", dims.width, dims.height, dims.frames)).map_err(|source| RawError::Io { path: hdr, source })
}

/// Read a raw luma file; `dims` of `None` consults the sidecar header.
pub fn read_raw(path: &Path, dims: Option<RawDims>) -> Result<LumaSequence, RawError> {
    let dims = match dims {
        Some(d) => d,
        None => read_sidecar(path)?,
    };
    let bytes = fs::read(path).map_err(|source| RawError::Io { path: path.to_path_buf(), source })?;
    let frame = dims.width * dims.height;
    let expected = frame * dims.frames;
    if bytes.len() != expected || frame == 0 {
        return Err(RawError::Size {
            path: path.to_path_buf(),
            expected,
            actual: bytes.len(),
            width: dims.width,
            height: dims.height,
            frames: dims.frames,
        });
    }
    let frames = bytes
        .chunks_exact(frame)
        .map(|c| Plane::new(dims.width, dims.height, c.to_vec()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(LumaSequence::new(frames)?)
}

/// Write frames and the sidecar header.
pub fn write_raw(seq: &LumaSequence, path: &Path) -> Result<(), RawError> {
    let mut bytes = Vec::with_capacity(seq.width() * seq.height() * seq.len());
    for f in seq.frames() {
        bytes.extend_from_slice(f.data());
    }
    fs::write(path, bytes).map_err(|source| RawError::Io { path: path.to_path_buf(), source })?;
    write_sidecar(path, RawDims { width: seq.width(), height: seq.height(), frames: seq.len() })
}
