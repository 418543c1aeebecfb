//! Deterministic integer toy codec that produces coding priors.
//!
//! The codec is a luma-only IPPP hybrid coder: full-search integer-pel block
//! motion estimation against the previous reconstruction, and a uniform
//! scalar quantizer applied directly to the pixel-domain residual. It keeps
//! the three side products the restoration network consumes: per-block
//! motion vectors, the motion-compensated predictive frame and the
//! dequantized residual.

mod encode;
mod me;
pub mod raw;
pub mod vcpf;

pub use encode::{dequantize, encode, encode_sequence, encode_sequence_with_threads, quantize, Encoded};
pub use me::{block_motion_search, BlockMatch};

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("sequence has no frames")]
    EmptySequence,
    #[error("frame dimensions must be nonzero")]
    ZeroDims,
    #[error("frame {index} is {got_width}x{got_height}, expected {width}x{height}")]
    FrameDims { index: usize, width: usize, height: usize, got_width: usize, got_height: usize },
    #[error("plane data has {got} samples, expected {expected}")]
    PlaneLength { expected: usize, got: usize },
    #[error("unsupported QP {0}; supported QPs are 22, 27, 32, 37")]
    UnsupportedQp(u32),
    #[error("unsupported block size {0}; supported block sizes are 8, 16")]
    UnsupportedBlockSize(u32),
    #[error("search range {0} out of bounds; expected 1..=64")]
    SearchRange(u32),
    #[error("frame size {width}x{height} is not a multiple of block size {block}")]
    Unaligned { width: usize, height: usize, block: usize },
    #[error("dimension {0} does not fit the container's 16-bit fields")]
    TooLarge(usize),
}

/// One 2-D sample plane, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Plane<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Copy> Plane<T> {
    pub fn new(width: usize, height: usize, data: Vec<T>) -> Result<Self, CodecError> {
        if width == 0 || height == 0 {
            return Err(CodecError::ZeroDims);
        }
        if data.len() != width * height {
            return Err(CodecError::PlaneLength { expected: width * height, got: data.len() });
        }
        Ok(Plane { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: T) -> Self {
        assert!(width > 0 && height > 0, "empty plane");
        Plane { width, height, data: vec![value; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> T) -> Self {
        assert!(width > 0 && height > 0, "empty plane");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Plane { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: T) {
        self.data[y * self.width + x] = v;
    }

    pub fn row(&self, y: usize) -> &[T] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    /// Top-left `width × height` window.
    pub fn crop(&self, width: usize, height: usize) -> Self {
        assert!(width <= self.width && height <= self.height);
        Plane::from_fn(width, height, |x, y| self.get(x, y))
    }

    /// Grow to `width × height` by replicating the last column and row.
    pub fn pad_replicate(&self, width: usize, height: usize) -> Self {
        assert!(width >= self.width && height >= self.height);
        Plane::from_fn(width, height, |x, y| self.get(x.min(self.width - 1), y.min(self.height - 1)))
    }
}

/// Ordered 8-bit luma frames of one size.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LumaSequence {
    width: usize,
    height: usize,
    frames: Vec<Plane<u8>>,
}

impl LumaSequence {
    pub fn new(frames: Vec<Plane<u8>>) -> Result<Self, CodecError> {
        let first = frames.first().ok_or(CodecError::EmptySequence)?;
        let (width, height) = (first.width, first.height);
        for (index, f) in frames.iter().enumerate() {
            if f.width != width || f.height != height {
                return Err(CodecError::FrameDims { index, width, height, got_width: f.width, got_height: f.height });
            }
        }
        Ok(LumaSequence { width, height, frames })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[Plane<u8>] {
        &self.frames
    }

    pub fn frame(&self, i: usize) -> &Plane<u8> {
        &self.frames[i]
    }

    pub fn into_frames(self) -> Vec<Plane<u8>> {
        self.frames
    }

    pub fn crop(&self, width: usize, height: usize) -> LumaSequence {
        LumaSequence { width, height, frames: self.frames.iter().map(|f| f.crop(width, height)).collect() }
    }
}

/// Size of the unpadded source, kept so consumers can crop back.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OrigDims {
    pub width: usize,
    pub height: usize,
}

/// Replicate-pad every frame up to the block grid.
pub fn pad_to_block_grid(seq: &LumaSequence, block: BlockSize) -> Result<(LumaSequence, OrigDims), CodecError> {
    if seq.is_empty() {
        return Err(CodecError::EmptySequence);
    }
    let b = block.pixels();
    let (w, h) = (seq.width.div_ceil(b) * b, seq.height.div_ceil(b) * b);
    let orig = OrigDims { width: seq.width, height: seq.height };
    if (w, h) == (seq.width, seq.height) {
        return Ok((seq.clone(), orig));
    }
    let frames = seq.frames.iter().map(|f| f.pad_replicate(w, h)).collect();
    Ok((LumaSequence { width: w, height: h, frames }, orig))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BlockSize {
    B8,
    B16,
}

impl BlockSize {
    pub fn pixels(self) -> usize {
        match self {
            BlockSize::B8 => 8,
            BlockSize::B16 => 16,
        }
    }
}

impl TryFrom<u32> for BlockSize {
    type Error = CodecError;

    fn try_from(v: u32) -> Result<Self, CodecError> {
        match v {
            8 => Ok(BlockSize::B8),
            16 => Ok(BlockSize::B16),
            other => Err(CodecError::UnsupportedBlockSize(other)),
        }
    }
}

/// Supported quantization parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Qp {
    Q22,
    Q27,
    Q32,
    Q37,
}

impl Qp {
    pub const ALL: [Qp; 4] = [Qp::Q22, Qp::Q27, Qp::Q32, Qp::Q37];

    pub fn value(self) -> u8 {
        match self {
            Qp::Q22 => 22,
            Qp::Q27 => 27,
            Qp::Q32 => 32,
            Qp::Q37 => 37,
        }
    }

    /// Quantizer step, `round(2^((qp - 4) / 6))` tabulated.
    pub fn step(self) -> i32 {
        match self {
            Qp::Q22 => 8,
            Qp::Q27 => 14,
            Qp::Q32 => 25,
            Qp::Q37 => 45,
        }
    }
}

impl TryFrom<u32> for Qp {
    type Error = CodecError;

    fn try_from(v: u32) -> Result<Self, CodecError> {
        match v {
            22 => Ok(Qp::Q22),
            27 => Ok(Qp::Q27),
            32 => Ok(Qp::Q32),
            37 => Ok(Qp::Q37),
            other => Err(CodecError::UnsupportedQp(other)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CodecConfig {
    pub block: BlockSize,
    pub search_range: u8,
    pub qp: Qp,
}

impl CodecConfig {
    pub fn new(block: u32, search_range: u32, qp: u32) -> Result<Self, CodecError> {
        if !(1..=64).contains(&search_range) {
            return Err(CodecError::SearchRange(search_range));
        }
        Ok(CodecConfig { block: BlockSize::try_from(block)?, search_range: search_range as u8, qp: Qp::try_from(qp)? })
    }
}

impl Default for CodecConfig {
    fn default() -> Self {
        CodecConfig { block: BlockSize::B16, search_range: 8, qp: Qp::Q37 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct MotionVector {
    pub dx: i16,
    pub dy: i16,
}

/// One motion vector per `block × block` tile, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MotionVectorField {
    block: usize,
    cols: usize,
    rows: usize,
    vectors: Vec<MotionVector>,
}

impl MotionVectorField {
    pub fn zeros(block: usize, width: usize, height: usize) -> Self {
        let (cols, rows) = (width.div_ceil(block), height.div_ceil(block));
        MotionVectorField { block, cols, rows, vectors: vec![MotionVector::default(); cols * rows] }
    }

    pub fn from_vectors(block: usize, cols: usize, rows: usize, vectors: Vec<MotionVector>) -> Self {
        assert_eq!(vectors.len(), cols * rows, "motion field size");
        MotionVectorField { block, cols, rows, vectors }
    }

    pub fn block(&self) -> usize {
        self.block
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn vectors(&self) -> &[MotionVector] {
        &self.vectors
    }

    pub fn get(&self, col: usize, row: usize) -> MotionVector {
        self.vectors[row * self.cols + col]
    }

    pub fn is_zero(&self) -> bool {
        self.vectors.iter().all(|v| v.dx == 0 && v.dy == 0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FrameKind {
    Intra,
    Inter,
}

/// Side information of one coded frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FramePriors {
    pub kind: FrameKind,
    pub mv: MotionVectorField,
    pub predictive: Plane<u8>,
    /// Dequantized residual.
    pub residual: Plane<i16>,
}

impl FramePriors {
    /// `clip(predictive + residual, 0, 255)`.
    pub fn reconstruct(&self) -> Plane<u8> {
        let data = self
            .predictive
            .data()
            .iter()
            .zip(self.residual.data())
            .map(|(&p, &r)| (p as i32 + r as i32).clamp(0, 255) as u8)
            .collect();
        Plane { width: self.predictive.width, height: self.predictive.height, data }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CodingPriors {
    pub frames: Vec<FramePriors>,
}
