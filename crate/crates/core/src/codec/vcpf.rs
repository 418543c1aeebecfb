//! VCPF container: reconstructed frames plus coding priors.
//!
//! Little-endian layout:
//!
//! ```text
//! "VCPF" u16 version=1 u16 W u16 H u16 origW u16 origH u16 frames
//! u8 block_size u8 qp u8 search_range
//! per frame:
//!   u8 frame_type (0 intra, 1 inter)
//!   (W/B)·(H/B) × (i16 dx, i16 dy)   row-major block grid
//!   W·H × u8   predictive plane
//!   W·H × i16  dequantized residual plane
//!   W·H × u8   reconstructed plane
//! ```

use std::fs;
use std::path::Path;

use thiserror::Error;

use super::{
    BlockSize, CodecConfig, CodingPriors, Encoded, FrameKind, FramePriors, LumaSequence, MotionVector,
    MotionVectorField, OrigDims, Plane, Qp,
};

pub const MAGIC: &[u8; 4] = b"VCPF";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 19;

#[derive(Debug, Error)]
pub enum VcpfError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic at byte 0: expected \"VCPF\", found {found:?}")]
    BadMagic { found: Vec<u8> },
    #[error("unsupported version {found} at byte {offset}; expected {VERSION}")]
    UnsupportedVersion { found: u16, offset: usize },
    #[error("truncated {field} at byte {offset}: expected {expected} bytes, {actual} available")]
    Truncated { field: String, offset: usize, expected: usize, actual: usize },
    #[error("invalid {field} at byte {offset}: {reason}")]
    Invalid { field: String, offset: usize, reason: String },
    #[error("{count} trailing bytes after the last frame at byte {offset}")]
    TrailingBytes { offset: usize, count: usize },
    #[error("cannot serialize: {0}")]
    Unrepresentable(String),
}

/// Byte size of a container with the given geometry.
pub fn container_len(width: usize, height: usize, frames: usize, block: usize) -> usize {
    let grid = (width / block) * (height / block);
    HEADER_LEN + frames * (1 + grid * 4 + width * height * 4)
}

pub fn to_bytes(enc: &Encoded) -> Result<Vec<u8>, VcpfError> {
    let (w, h, n) = (enc.lq.width(), enc.lq.height(), enc.lq.len());
    let b = enc.config.block.pixels();
    if enc.priors.frames.len() != n {
        return Err(VcpfError::Unrepresentable(format!("{} prior frames for {n} reconstructed frames", enc.priors.frames.len())));
    }
    let u16_of = |v: usize, what: &str| {
        u16::try_from(v).map_err(|_| VcpfError::Unrepresentable(format!("{what} {v} exceeds 65535")))
    };
    let mut out = Vec::with_capacity(container_len(w, h, n, b));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for (v, what) in [(w, "width"), (h, "height"), (enc.orig.width, "original width"), (enc.orig.height, "original height"), (n, "frame count")] {
        out.extend_from_slice(&u16_of(v, what)?.to_le_bytes());
    }
    out.push(b as u8);
    out.push(enc.config.qp.value());
    out.push(enc.config.search_range);
    for (fp, recon) in enc.priors.frames.iter().zip(enc.lq.frames()) {
        if fp.mv.cols() * fp.mv.rows() != (w / b) * (h / b) || fp.predictive.width() != w || fp.residual.height() != h {
            return Err(VcpfError::Unrepresentable("prior planes disagree with sequence geometry".into()));
        }
        out.push(match fp.kind {
            FrameKind::Intra => 0,
            FrameKind::Inter => 1,
        });
        for v in fp.mv.vectors() {
            out.extend_from_slice(&v.dx.to_le_bytes());
            out.extend_from_slice(&v.dy.to_le_bytes());
        }
        out.extend_from_slice(fp.predictive.data());
        for r in fp.residual.data() {
            out.extend_from_slice(&r.to_le_bytes());
        }
        out.extend_from_slice(recon.data());
    }
    Ok(out)
}

pub fn write_vcpf(enc: &Encoded, path: impl AsRef<Path>) -> Result<(), VcpfError> {
    fs::write(path, to_bytes(enc)?)?;
    Ok(())
}

pub fn read_vcpf(path: impl AsRef<Path>) -> Result<Encoded, VcpfError> {
    from_bytes(&fs::read(path)?)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, field: impl Fn() -> String) -> Result<&'a [u8], VcpfError> {
        let actual = self.bytes.len() - self.pos;
        if actual < n {
            return Err(VcpfError::Truncated { field: field(), offset: self.pos, expected: n, actual });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, field: &str) -> Result<u8, VcpfError> {
        Ok(self.take(1, || field.to_string())?[0])
    }

    fn u16(&mut self, field: &str) -> Result<u16, VcpfError> {
        let s = self.take(2, || field.to_string())?;
        Ok(u16::from_le_bytes([s[0], s[1]]))
    }
}

fn invalid(field: &str, offset: usize, reason: impl Into<String>) -> VcpfError {
    VcpfError::Invalid { field: field.to_string(), offset, reason: reason.into() }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Encoded, VcpfError> {
    let mut c = Cursor { bytes, pos: 0 };
    let magic = c.take(4, || "magic".into())?;
    if magic != MAGIC {
        return Err(VcpfError::BadMagic { found: magic.to_vec() });
    }
    let version = c.u16("version")?;
    if version != VERSION {
        return Err(VcpfError::UnsupportedVersion { found: version, offset: 4 });
    }
    let w = c.u16("width")? as usize;
    let h = c.u16("height")? as usize;
    let ow = c.u16("original width")? as usize;
    let oh = c.u16("original height")? as usize;
    let n = c.u16("frame count")? as usize;
    let b_raw = c.u8("block size")?;
    let qp_raw = c.u8("qp")?;
    let range = c.u8("search range")?;

    let block = BlockSize::try_from(b_raw as u32).map_err(|e| invalid("block size", 16, e.to_string()))?;
    let qp = Qp::try_from(qp_raw as u32).map_err(|e| invalid("qp", 17, e.to_string()))?;
    if !(1..=64).contains(&range) {
        return Err(invalid("search range", 18, format!("{range} outside 1..=64")));
    }
    let b = block.pixels();
    if w == 0 || h == 0 || w % b != 0 || h % b != 0 {
        return Err(invalid("width/height", 6, format!("{w}x{h} is not a nonzero multiple of block size {b}")));
    }
    if ow == 0 || oh == 0 || ow > w || oh > h {
        return Err(invalid("original width/height", 10, format!("{ow}x{oh} does not fit in {w}x{h}")));
    }
    if n == 0 {
        return Err(invalid("frame count", 14, "container holds no frames"));
    }

    let (cols, rows) = (w / b, h / b);
    let plane = w * h;
    let mut priors = Vec::with_capacity(n);
    let mut recon = Vec::with_capacity(n);
    for t in 0..n {
        let type_off = c.pos;
        let kind = match c.u8(&format!("frame {t} type"))? {
            0 => FrameKind::Intra,
            1 => FrameKind::Inter,
            other => return Err(invalid(&format!("frame {t} type"), type_off, format!("{other} is neither 0 nor 1"))),
        };
        let mv_off = c.pos;
        let mv_bytes = c.take(cols * rows * 4, || format!("frame {t} motion vectors"))?;
        let vectors: Vec<MotionVector> = mv_bytes
            .chunks_exact(4)
            .map(|q| MotionVector { dx: i16::from_le_bytes([q[0], q[1]]), dy: i16::from_le_bytes([q[2], q[3]]) })
            .collect();
        if let Some(i) = vectors.iter().position(|v| v.dx.unsigned_abs() > range as u16 || v.dy.unsigned_abs() > range as u16) {
            return Err(invalid(&format!("frame {t} motion vectors"), mv_off + i * 4, format!("vector exceeds search range {range}")));
        }
        let pred = c.take(plane, || format!("frame {t} predictive plane"))?.to_vec();
        let res_bytes = c.take(plane * 2, || format!("frame {t} residual plane"))?;
        let residual: Vec<i16> = res_bytes.chunks_exact(2).map(|q| i16::from_le_bytes([q[0], q[1]])).collect();
        let rec = c.take(plane, || format!("frame {t} reconstructed plane"))?.to_vec();
        let mk = |e: super::CodecError| invalid(&format!("frame {t}"), type_off, e.to_string());
        priors.push(FramePriors {
            kind,
            mv: MotionVectorField::from_vectors(b, cols, rows, vectors),
            predictive: Plane::new(w, h, pred).map_err(mk)?,
            residual: Plane::new(w, h, residual).map_err(mk)?,
        });
        recon.push(Plane::new(w, h, rec).map_err(mk)?);
    }
    if c.pos != bytes.len() {
        return Err(VcpfError::TrailingBytes { offset: c.pos, count: bytes.len() - c.pos });
    }
    let lq = LumaSequence::new(recon).map_err(|e| invalid("frames", HEADER_LEN, e.to_string()))?;
    Ok(Encoded {
        config: CodecConfig { block, search_range: range, qp },
        orig: OrigDims { width: ow, height: oh },
        lq,
        priors: CodingPriors { frames: priors },
    })
}
