use rayon::prelude::*;

use super::me::block_motion_search;
use super::{
    pad_to_block_grid, CodecConfig, CodecError, CodingPriors, FrameKind, FramePriors, LumaSequence, MotionVector,
    MotionVectorField, OrigDims, Plane,
};

/// Round-half-away-from-zero quantization index: `sign(r)·⌊(2|r| + Δ) / 2Δ⌋`.
pub fn quantize(residual: i32, step: i32) -> i32 {
    residual.signum() * ((2 * residual.abs() + step) / (2 * step))
}

/// Reconstructed residual `q·Δ`, limited to `[-255, 255]`.
///
/// The limit never changes the decoded pixel: any predictor plus a
/// residual beyond ±255 clips to the same value.
pub fn dequantize(index: i32, step: i32) -> i32 {
    (index * step).clamp(-255, 255)
}

/// Output of [`encode`]: padded reconstruction plus priors.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Encoded {
    pub config: CodecConfig,
    pub orig: OrigDims,
    pub lq: LumaSequence,
    pub priors: CodingPriors,
}

/// Pad `raw` to the block grid and encode it.
pub fn encode(raw: &LumaSequence, config: &CodecConfig) -> Result<Encoded, CodecError> {
    let (padded, orig) = pad_to_block_grid(raw, config.block)?;
    let (lq, priors) = encode_sequence(&padded, config)?;
    Ok(Encoded { config: *config, orig, lq, priors })
}

/// Encode a block-aligned sequence on the calling thread.
pub fn encode_sequence(seq: &LumaSequence, config: &CodecConfig) -> Result<(LumaSequence, CodingPriors), CodecError> {
    encode_impl(seq, config, false)
}

/// As [`encode_sequence`], with per-block motion search spread over
/// `threads` workers. Output does not depend on `threads`.
pub fn encode_sequence_with_threads(
    seq: &LumaSequence,
    config: &CodecConfig,
    threads: usize,
) -> Result<(LumaSequence, CodingPriors), CodecError> {
    if threads <= 1 {
        return encode_impl(seq, config, false);
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().expect("thread pool");
    pool.install(|| encode_impl(seq, config, true))
}

fn encode_impl(seq: &LumaSequence, config: &CodecConfig, parallel: bool) -> Result<(LumaSequence, CodingPriors), CodecError> {
    if seq.is_empty() {
        return Err(CodecError::EmptySequence);
    }
    let b = config.block.pixels();
    let (w, h) = (seq.width(), seq.height());
    if w % b != 0 || h % b != 0 {
        return Err(CodecError::Unaligned { width: w, height: h, block: b });
    }
    for d in [w, h, seq.len()] {
        if d > u16::MAX as usize {
            return Err(CodecError::TooLarge(d));
        }
    }
    let step = config.qp.step();
    let (cols, rows) = (w / b, h / b);
    let mut recon: Vec<Plane<u8>> = Vec::with_capacity(seq.len());
    let mut priors = Vec::with_capacity(seq.len());

    for (t, cur) in seq.frames().iter().enumerate() {
        let (kind, mv, predictive) = if t == 0 {
            (FrameKind::Intra, MotionVectorField::zeros(b, w, h), Plane::filled(w, h, 128u8))
        } else {
            let reference = &recon[t - 1];
            let search = |i: usize| {
                let (bx, by) = (i % cols * b, i / cols * b);
                let m = block_motion_search(cur, reference, bx, by, b, config.search_range as i32);
                MotionVector { dx: m.dx as i16, dy: m.dy as i16 }
            };
            let vectors: Vec<MotionVector> = if parallel {
                (0..cols * rows).into_par_iter().map(search).collect()
            } else {
                (0..cols * rows).map(search).collect()
            };
            let field = MotionVectorField::from_vectors(b, cols, rows, vectors);
            let pred = Plane::from_fn(w, h, |x, y| {
                let v = field.get(x / b, y / b);
                reference.get((x as i32 + v.dx as i32) as usize, (y as i32 + v.dy as i32) as usize)
            });
            (FrameKind::Inter, field, pred)
        };
        let residual_data: Vec<i16> = cur
            .data()
            .iter()
            .zip(predictive.data())
            .map(|(&c, &p)| dequantize(quantize(c as i32 - p as i32, step), step) as i16)
            .collect();
        let residual = Plane::new(w, h, residual_data)?;
        let fp = FramePriors { kind, mv, predictive, residual };
        recon.push(fp.reconstruct());
        priors.push(fp);
    }
    Ok((LumaSequence::new(recon)?, CodingPriors { frames: priors }))
}
