//! Y-channel quality metrics, sequence reports and throughput.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use cpga_tensor::Tensor;

use crate::codec::Plane;
use crate::data::{export_plane, pad_for_eval, DataError, PairedSequence};
use crate::model::{ClipBatch, Cpga, ModelError};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    Dims(usize, usize, usize, usize),
    #[error("{width}x{height} frame is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")]
    TooSmall { width: usize, height: usize },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("plot: {0}")]
    Plot(String),
}

fn same_dims<T: Copy, U: Copy>(a: &Plane<T>, b: &Plane<U>) -> Result<(), MetricError> {
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(MetricError::Dims(a.width(), a.height(), b.width(), b.height()));
    }
    Ok(())
}

/// `10·log10(255² / MSE)`; identical planes give `f64::INFINITY`.
pub fn psnr(a: &Plane<u8>, b: &Plane<u8>) -> Result<f64, MetricError> {
    same_dims(a, b)?;
    let sse: u64 = a.data().iter().zip(b.data()).map(|(&x, &y)| (x as i64 - y as i64).pow(2) as u64).sum();
    if sse == 0 {
        return Ok(f64::INFINITY);
    }
    let mse = sse as f64 / a.data().len() as f64;
    Ok(10.0 * (255.0f64 * 255.0 / mse).log10())
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut taps = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, t) in taps.iter_mut().enumerate() {
        *t = (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= s);
    taps
}

/// Valid-window separable Gaussian filter of an `h × w` map.
fn filter(src: &[f64], w: usize, h: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(k, t)| t * src[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(k, t)| t * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

/// Single-scale SSIM: 11×11 Gaussian window (σ = 1.5), mean over every
/// position where the window fits inside the frame.
pub fn ssim(a: &Plane<u8>, b: &Plane<u8>) -> Result<f64, MetricError> {
    same_dims(a, b)?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(MetricError::TooSmall { width: w, height: h });
    }
    let taps = gaussian_taps();
    let fa: Vec<f64> = a.data().iter().map(|&v| v as f64).collect();
    let fb: Vec<f64> = b.data().iter().map(|&v| v as f64).collect();
    let prod = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| p * q).collect() };
    let mu_a = filter(&fa, w, h, &taps);
    let mu_b = filter(&fb, w, h, &taps);
    let aa = filter(&prod(&fa, &fa), w, h, &taps);
    let bb = filter(&prod(&fb, &fb), w, h, &taps);
    let ab = filter(&prod(&fa, &fb), w, h, &taps);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        total += ((2.0 * ma * mb + C1) * (2.0 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2));
    }
    Ok(total / mu_a.len() as f64)
}

/// Per-frame quality of one sequence before and after enhancement.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceReport {
    pub name: String,
    pub psnr_lq: Vec<f64>,
    pub psnr_enh: Vec<f64>,
    pub ssim_lq: Vec<f64>,
    pub ssim_enh: Vec<f64>,
    pub frames_per_second: f64,
    pub params: usize,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

impl SequenceReport {
    pub fn frames(&self) -> usize {
        self.psnr_lq.len()
    }

    pub fn delta_psnr(&self) -> f64 {
        mean(&self.psnr_enh) - mean(&self.psnr_lq)
    }

    pub fn delta_ssim(&self) -> f64 {
        mean(&self.ssim_enh) - mean(&self.ssim_lq)
    }

    /// Per-frame `PSNR(enhanced) − PSNR(lq)`.
    pub fn fluctuation(&self) -> Vec<f64> {
        self.psnr_enh.iter().zip(&self.psnr_lq).map(|(e, l)| e - l).collect()
    }

    /// `frame,psnr_lq,psnr_enh` rows.
    pub fn fluctuation_csv(&self) -> String {
        let mut s = String::from("frame,psnr_lq,psnr_enh\n");
        for (i, (l, e)) in self.psnr_lq.iter().zip(&self.psnr_enh).enumerate() {
            writeln!(s, "{i},{l},{e}").expect("string write");
        }
        s
    }

    pub fn write_fluctuation(&self, path: &Path) -> Result<(), MetricError> {
        fs::write(path, self.fluctuation_csv()).map_err(|source| MetricError::Io { path: path.display().to_string(), source })
    }

    pub fn summary(&self) -> String {
        format!(
            "{}: {} frames, PSNR {:.4} -> {:.4} dB (delta {:+.4}), SSIM {:.5} -> {:.5} (delta {:+.5}), {:.2} fps, {} params",
            self.name,
            self.frames(),
            mean(&self.psnr_lq),
            mean(&self.psnr_enh),
            self.delta_psnr(),
            mean(&self.ssim_lq),
            mean(&self.ssim_enh),
            self.delta_ssim(),
            self.frames_per_second,
            self.params
        )
    }
}

/// Enhance one padded-and-cropped clip; returns the exported centre plane.
pub fn enhance_clip(model: &Cpga<f32>, clip: &ClipBatch<f32>) -> Result<Plane<u8>, MetricError> {
    let (padded, record) = pad_for_eval(clip);
    let out = record.apply(&model.enhance(&padded)?);
    let (_, _, h, w) = out.dims4();
    Ok(export_plane(out.data(), w, h))
}

/// Mean `(ΔPSNR, ΔSSIM)` over the centre frames `clips` (`(sequence,
/// frame)` pairs).
pub fn evaluate_clips(model: &Cpga<f32>, sequences: &[PairedSequence], clips: &[(usize, usize)]) -> Result<(f64, f64), MetricError> {
    let radius = model.config().radius;
    let (mut dp, mut ds) = (0.0, 0.0);
    for &(s, t) in clips {
        let seq = &sequences[s];
        let enh = enhance_clip(model, &seq.window(t, radius)?)?;
        let (gt, lq) = (seq.raw.frame(t), seq.lq.frame(t));
        dp += psnr(&enh, gt)? - psnr(lq, gt)?;
        ds += ssim(&enh, gt)? - ssim(lq, gt)?;
    }
    let n = clips.len().max(1) as f64;
    Ok((dp / n, ds / n))
}

/// Enhance every frame of `seq` and score it against the ground truth.
pub fn evaluate_sequence(model: &Cpga<f32>, seq: &PairedSequence, name: &str) -> Result<(SequenceReport, Vec<Plane<u8>>), MetricError> {
    let radius = model.config().radius;
    let start = Instant::now();
    let enhanced = (0..seq.len()).map(|t| enhance_clip(model, &seq.window(t, radius)?)).collect::<Result<Vec<_>, _>>()?;
    let elapsed = start.elapsed().as_secs_f64();
    let scores: Vec<[f64; 4]> = (0..seq.len())
        .into_par_iter()
        .map(|t| {
            let (gt, lq, enh) = (seq.raw.frame(t), seq.lq.frame(t), &enhanced[t]);
            Ok([psnr(lq, gt)?, psnr(enh, gt)?, ssim(lq, gt)?, ssim(enh, gt)?])
        })
        .collect::<Result<_, MetricError>>()?;
    let col = |i: usize| scores.iter().map(|s| s[i]).collect::<Vec<f64>>();
    let report = SequenceReport {
        name: name.to_string(),
        psnr_lq: col(0),
        psnr_enh: col(1),
        ssim_lq: col(2),
        ssim_enh: col(3),
        frames_per_second: seq.len() as f64 / elapsed.max(f64::MIN_POSITIVE),
        params: model.num_params(),
    };
    Ok((report, enhanced))
}

/// Line plot of the per-frame PSNR of the compressed (grey) and enhanced
/// (red) frames, written as PNG.
pub fn plot_fluctuation(report: &SequenceReport, path: &Path) -> Result<(), MetricError> {
    const W: u32 = 640;
    const H: u32 = 320;
    const M: f64 = 20.0;
    let mut img = image::RgbImage::from_pixel(W, H, image::Rgb([255, 255, 255]));
    let finite: Vec<f64> = report.psnr_lq.iter().chain(&report.psnr_enh).copied().filter(|v| v.is_finite()).collect();
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if finite.is_empty() { (0.0, 1.0) } else if hi - lo < 1e-6 { (lo - 0.5, hi + 0.5) } else { (lo, hi) };
    let n = report.frames().max(2) - 1;
    let to_px = |i: usize, v: f64| {
        let x = M + (W as f64 - 2.0 * M) * i as f64 / n as f64;
        let v = if v.is_finite() { v } else { hi };
        let y = H as f64 - M - (H as f64 - 2.0 * M) * (v - lo) / (hi - lo);
        (x, y)
    };
    let axis = image::Rgb([0, 0, 0]);
    for x in M as u32..W - M as u32 {
        img.put_pixel(x, H - M as u32, axis);
    }
    for y in M as u32..=H - M as u32 {
        img.put_pixel(M as u32, y, axis);
    }
    for (series, color) in [(&report.psnr_lq, image::Rgb([128, 128, 128])), (&report.psnr_enh, image::Rgb([200, 30, 30]))] {
        for i in 1..series.len() {
            let (x0, y0) = to_px(i - 1, series[i - 1]);
            let (x1, y1) = to_px(i, series[i]);
            let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
            for s in 0..=steps {
                let f = s as f64 / steps as f64;
                let (x, y) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
                if x >= 0.0 && y >= 0.0 && (x as u32) < W && (y as u32) < H {
                    img.put_pixel(x as u32, y as u32, color);
                }
            }
        }
    }
    img.save(path).map_err(|e| MetricError::Plot(format!("{}: {e}", path.display())))
}

/// Throughput at one resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub mean_fps: f64,
    pub stdev_fps: f64,
    pub params: usize,
}

/// Resolutions of the throughput table.
pub const BENCH_RESOLUTIONS: [(usize, usize); 3] = [(416, 240), (832, 480), (1280, 720)];

pub const BENCH_WARMUP: usize = 3;

/// Frames per second of single-clip inference on random content, timed per
/// frame after [`BENCH_WARMUP`] untimed frames.
pub fn bench(model: &Cpga<f32>, width: usize, height: usize, frames: usize) -> Result<BenchReport, MetricError> {
    let t = model.config().frames();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let clip = ClipBatch {
        lq: Tensor::uniform(vec![1, t, height, width], 0.0, 1.0, &mut rng),
        pred: Tensor::uniform(vec![1, t, height, width], 0.0, 1.0, &mut rng),
        mv: Tensor::uniform(vec![1, 2 * t, height, width], -0.5, 0.5, &mut rng),
        residual: Tensor::uniform(vec![1, 1, height, width], -0.1, 0.1, &mut rng),
        gt: Tensor::zeros(vec![1, 1, height, width]),
        search_range: 8.0,
    };
    for _ in 0..BENCH_WARMUP {
        enhance_clip(model, &clip)?;
    }
    let mut fps = Vec::with_capacity(frames);
    for _ in 0..frames {
        let start = Instant::now();
        enhance_clip(model, &clip)?;
        fps.push(1.0 / start.elapsed().as_secs_f64().max(f64::MIN_POSITIVE));
    }
    let mean_fps = mean(&fps);
    let var = fps.iter().map(|f| (f - mean_fps).powi(2)).sum::<f64>() / (fps.len().max(2) - 1) as f64;
    Ok(BenchReport { width, height, frames, mean_fps, stdev_fps: var.sqrt(), params: model.num_params() })
}
