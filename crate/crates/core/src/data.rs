//! Training and evaluation samples: raw/VCPF pairing, temporal windows,
//! dense motion maps, crops, flips and evaluation padding.
//!
//! A sample is a [`ClipBatch`] with `N = 1`; [`collate`] stacks samples.

use std::fs;
use std::path::{Path, PathBuf};

use cpga_tensor::{Float, Tensor};
use rand::Rng;
use thiserror::Error;

use crate::codec::raw::{read_raw, RawError};
use crate::codec::vcpf::{read_vcpf, VcpfError};
use crate::codec::{CodecConfig, Encoded, FramePriors, LumaSequence, MotionVectorField, Plane};
use crate::model::ClipBatch;

#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    Raw(#[from] RawError),
    #[error("{path}: {source}")]
    Vcpf { path: PathBuf, source: VcpfError },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: expected `raw_path vcpf_path`, got {content:?}")]
    Manifest { path: PathBuf, line: usize, content: String },
    #[error("raw and coded sequences disagree: {0}")]
    Mismatch(String),
    #[error("crop {crop} does not fit a {width}x{height} sample")]
    CropTooLarge { crop: usize, width: usize, height: usize },
    #[error("crop {0} is not a positive multiple of 4")]
    CropNotAligned(usize),
    #[error("frame {index} out of range for a {frames}-frame sequence")]
    FrameOutOfRange { index: usize, frames: usize },
    #[error("cannot collate: {0}")]
    Collate(String),
}

/// Ground truth paired with its coded version, all planes at the original
/// (unpadded) size.
#[derive(Clone, Debug)]
pub struct PairedSequence {
    pub raw: LumaSequence,
    pub lq: LumaSequence,
    /// Per-frame priors; the motion fields keep the padded block grid.
    pub priors: Vec<FramePriors>,
    pub config: CodecConfig,
    pub source: Option<(PathBuf, PathBuf)>,
}

impl PairedSequence {
    pub fn new(raw: LumaSequence, enc: Encoded) -> Result<Self, DataError> {
        let (w, h) = (enc.orig.width, enc.orig.height);
        if raw.len() != enc.lq.len() {
            return Err(DataError::Mismatch(format!("{} raw frames vs {} coded", raw.len(), enc.lq.len())));
        }
        if (raw.width(), raw.height()) != (w, h) {
            return Err(DataError::Mismatch(format!("raw is {}x{}, coded original is {w}x{h}", raw.width(), raw.height())));
        }
        let priors = enc
            .priors
            .frames
            .into_iter()
            .map(|f| FramePriors { predictive: f.predictive.crop(w, h), residual: f.residual.crop(w, h), ..f })
            .collect();
        Ok(PairedSequence { raw, lq: enc.lq.crop(w, h), priors, config: enc.config, source: None })
    }

    /// Read a raw file (dimensions from its sidecar) and its container.
    pub fn load(raw_path: &Path, vcpf_path: &Path) -> Result<Self, DataError> {
        let raw = read_raw(raw_path, None)?;
        let enc = read_vcpf(vcpf_path).map_err(|source| DataError::Vcpf { path: vcpf_path.to_path_buf(), source })?;
        let mut seq = PairedSequence::new(raw, enc)?;
        seq.source = Some((raw_path.to_path_buf(), vcpf_path.to_path_buf()));
        Ok(seq)
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn width(&self) -> usize {
        self.raw.width()
    }

    pub fn height(&self) -> usize {
        self.raw.height()
    }

    pub fn search_range(&self) -> u8 {
        self.config.search_range
    }

    /// Clip of `2·radius + 1` frames centred on `t`.
    pub fn window(&self, t: usize, radius: usize) -> Result<ClipBatch<f32>, DataError> {
        if t >= self.len() {
            return Err(DataError::FrameOutOfRange { index: t, frames: self.len() });
        }
        let (w, h) = (self.width(), self.height());
        let plane = w * h;
        let idx = window_indices(t, radius, self.len());
        let r = self.search_range();
        let mut lq = Vec::with_capacity(idx.len() * plane);
        let mut pred = Vec::with_capacity(idx.len() * plane);
        let mut mv = Vec::with_capacity(2 * idx.len() * plane);
        for &i in &idx {
            lq.extend(self.lq.frame(i).data().iter().map(|&v| unit(v)));
            pred.extend(self.priors[i].predictive.data().iter().map(|&v| unit(v)));
            mv.extend(expand_mv(&self.priors[i].mv, w, h, r));
        }
        let t_len = idx.len();
        Ok(ClipBatch {
            lq: Tensor::from_vec(vec![1, t_len, h, w], lq),
            pred: Tensor::from_vec(vec![1, t_len, h, w], pred),
            mv: Tensor::from_vec(vec![1, 2 * t_len, h, w], mv),
            residual: Tensor::from_vec(vec![1, 1, h, w], self.priors[t].residual.data().iter().map(|&v| v as f32 / 255.0).collect()),
            gt: Tensor::from_vec(vec![1, 1, h, w], self.raw.frame(t).data().iter().map(|&v| unit(v)).collect()),
            search_range: r as f64,
        })
    }
}

fn unit(v: u8) -> f32 {
    v as f32 / 255.0
}

/// Source frame of each window slot, replicating the first and last frames.
pub fn window_indices(t: usize, radius: usize, frames: usize) -> Vec<usize> {
    let last = frames as isize - 1;
    (-(radius as isize)..=radius as isize).map(|o| (t as isize + o).clamp(0, last) as usize).collect()
}

/// Dense `[dx plane, dy plane]` of size `2·h·w`: every pixel takes its
/// block's vector divided by `range`.
pub fn expand_mv(field: &MotionVectorField, w: usize, h: usize, range: u8) -> Vec<f32> {
    let b = field.block();
    assert!(field.cols() * b >= w && field.rows() * b >= h, "motion grid does not cover {w}x{h}");
    let r = range.max(1) as f32;
    let mut out = vec![0.0; 2 * w * h];
    let (dxs, dys) = out.split_at_mut(w * h);
    for y in 0..h {
        for x in 0..w {
            let v = field.get(x / b, y / b);
            dxs[y * w + x] = v.dx as f32 / r;
            dys[y * w + x] = v.dy as f32 / r;
        }
    }
    out
}

/// Apply `f` to every `(N, C, H, W)` tensor of a sample.
fn map_planes<F: Float>(s: &ClipBatch<F>, f: impl Fn(&Tensor<F>) -> Tensor<F>) -> ClipBatch<F> {
    ClipBatch { lq: f(&s.lq), pred: f(&s.pred), mv: f(&s.mv), residual: f(&s.residual), gt: f(&s.gt), search_range: s.search_range }
}

fn crop_tensor<F: Float>(t: &Tensor<F>, x0: usize, y0: usize, cw: usize, ch: usize) -> Tensor<F> {
    let (n, c, h, w) = t.dims4();
    assert!(x0 + cw <= w && y0 + ch <= h);
    let mut out = Vec::with_capacity(n * c * ch * cw);
    for p in t.data().chunks(h * w) {
        for y in y0..y0 + ch {
            out.extend_from_slice(&p[y * w + x0..y * w + x0 + cw]);
        }
    }
    Tensor::from_vec(vec![n, c, ch, cw], out)
}

fn flip_tensor<F: Float>(t: &Tensor<F>, horizontal: bool) -> Tensor<F> {
    let (_, _, h, w) = t.dims4();
    let mut out = t.clone();
    for p in out.data_mut().chunks_mut(h * w) {
        if horizontal {
            p.chunks_mut(w).for_each(|row| row.reverse());
        } else {
            for y in 0..h / 2 {
                let (top, bottom) = p.split_at_mut((h - 1 - y) * w);
                top[y * w..(y + 1) * w].swap_with_slice(&mut bottom[..w]);
            }
        }
    }
    out
}

fn pad_tensor<F: Float>(t: &Tensor<F>, pw: usize, ph: usize) -> Tensor<F> {
    let (n, c, h, w) = t.dims4();
    let mut out = Vec::with_capacity(n * c * ph * pw);
    for p in t.data().chunks(h * w) {
        for y in 0..ph {
            let row = &p[y.min(h - 1) * w..(y.min(h - 1) + 1) * w];
            out.extend_from_slice(row);
            out.extend(std::iter::repeat_n(row[w - 1], pw - w));
        }
    }
    Tensor::from_vec(vec![n, c, ph, pw], out)
}

/// Same spatial window on every plane.
pub fn crop<F: Float>(s: &ClipBatch<F>, x0: usize, y0: usize, width: usize, height: usize) -> ClipBatch<F> {
    map_planes(s, |t| crop_tensor(t, x0, y0, width, height))
}

/// Mirror every plane; motion components along the mirrored axis change
/// sign (`dx` for a horizontal flip, `dy` for a vertical one).
pub fn flip<F: Float>(s: &ClipBatch<F>, horizontal: bool) -> ClipBatch<F> {
    let mut out = map_planes(s, |t| flip_tensor(t, horizontal));
    let (_, _, h, w) = out.mv.dims4();
    let first = if horizontal { 0 } else { 1 };
    for (ci, p) in out.mv.data_mut().chunks_mut(h * w).enumerate() {
        if ci % 2 == first {
            p.iter_mut().for_each(|v| *v = -*v);
        }
    }
    out
}

/// Random `crop × crop` window plus independent horizontal and vertical
/// flips, each with probability 1/2.
pub fn crop_and_augment<F: Float, R: Rng + ?Sized>(s: &ClipBatch<F>, crop_size: usize, rng: &mut R) -> Result<ClipBatch<F>, DataError> {
    if crop_size == 0 || crop_size % 4 != 0 {
        return Err(DataError::CropNotAligned(crop_size));
    }
    let (_, _, h, w) = s.lq.dims4();
    if crop_size > w || crop_size > h {
        return Err(DataError::CropTooLarge { crop: crop_size, width: w, height: h });
    }
    let x0 = rng.random_range(0..=w - crop_size);
    let y0 = rng.random_range(0..=h - crop_size);
    let mut out = crop(s, x0, y0, crop_size, crop_size);
    if rng.random_bool(0.5) {
        out = flip(&out, true);
    }
    if rng.random_bool(0.5) {
        out = flip(&out, false);
    }
    Ok(out)
}

/// Original size of a sample padded by [`pad_for_eval`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvalCrop {
    pub width: usize,
    pub height: usize,
}

impl EvalCrop {
    /// Cut an `(N, C, H', W')` network output back to the original size.
    pub fn apply<F: Float>(&self, t: &Tensor<F>) -> Tensor<F> {
        let (_, _, h, w) = t.dims4();
        if (w, h) == (self.width, self.height) {
            return t.clone();
        }
        crop_tensor(t, 0, 0, self.width, self.height)
    }
}

/// Replicate-pad height and width up to multiples of 4.
pub fn pad_for_eval<F: Float>(s: &ClipBatch<F>) -> (ClipBatch<F>, EvalCrop) {
    let (_, _, h, w) = s.lq.dims4();
    let record = EvalCrop { width: w, height: h };
    let (pw, ph) = (w.div_ceil(4) * 4, h.div_ceil(4) * 4);
    if (pw, ph) == (w, h) {
        return (s.clone(), record);
    }
    (map_planes(s, |t| pad_tensor(t, pw, ph)), record)
}

/// Stack samples along the batch axis.
pub fn collate<F: Float>(samples: &[ClipBatch<F>]) -> Result<ClipBatch<F>, DataError> {
    let first = samples.first().ok_or_else(|| DataError::Collate("no samples".into()))?;
    let stack = |get: fn(&ClipBatch<F>) -> &Tensor<F>| -> Result<Tensor<F>, DataError> {
        let shape = &get(first).shape()[1..];
        let mut data = Vec::new();
        for s in samples {
            if &get(s).shape()[1..] != shape {
                return Err(DataError::Collate(format!("shape {:?} vs {:?}", get(s).shape(), get(first).shape())));
            }
            data.extend_from_slice(get(s).data());
        }
        let n = data.len() / shape.iter().product::<usize>();
        Ok(Tensor::from_vec([&[n][..], shape].concat(), data))
    };
    if samples.iter().any(|s| s.search_range != first.search_range) {
        return Err(DataError::Collate("samples mix search ranges".into()));
    }
    Ok(ClipBatch {
        lq: stack(|s| &s.lq)?,
        pred: stack(|s| &s.pred)?,
        mv: stack(|s| &s.mv)?,
        residual: stack(|s| &s.residual)?,
        gt: stack(|s| &s.gt)?,
        search_range: first.search_range,
    })
}

/// Parse a dataset manifest: one `raw_path vcpf_path` pair per line, `#`
/// starts a comment. Relative paths resolve against the manifest's folder.
pub fn read_manifest(path: &Path) -> Result<Vec<(PathBuf, PathBuf)>, DataError> {
    let text = fs::read_to_string(path).map_err(|source| DataError::Io { path: path.to_path_buf(), source })?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        let [raw, vcpf] = fields[..] else {
            return Err(DataError::Manifest { path: path.to_path_buf(), line: i + 1, content: line.to_string() });
        };
        out.push((base.join(raw), base.join(vcpf)));
    }
    Ok(out)
}

pub fn load_manifest(path: &Path) -> Result<Vec<PairedSequence>, DataError> {
    read_manifest(path)?.iter().map(|(raw, vcpf)| PairedSequence::load(raw, vcpf)).collect()
}

/// Every `(sequence, centre frame)` pair of a dataset.
pub fn all_centres(data: &[PairedSequence]) -> Vec<(usize, usize)> {
    data.iter().enumerate().flat_map(|(s, seq)| (0..seq.len()).map(move |t| (s, t))).collect()
}

/// 8-bit plane from a `[0, 1]` network plane: clamp, then round half up.
pub fn export_plane<F: Float>(values: &[F], width: usize, height: usize) -> Plane<u8> {
    assert_eq!(values.len(), width * height);
    let data = values.iter().map(|&v| (v.as_f64() * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8).collect();
    Plane::new(width, height, data).expect("plane dims")
}
