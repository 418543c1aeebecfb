//! 2-D convolution and transposed convolution via im2col + GEMM.

use std::sync::Arc;

use crate::gemm::{gemm, Mat};
use crate::{Float, Graph, Tensor, Var};

/// How taps that fall outside the input are filled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    Zeros,
    Replicate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub pad: usize,
    pub padding: Padding,
}

impl ConvSpec {
    /// Stride 1, padding `k / 2` with zeros.
    pub fn same(kernel: usize) -> Self {
        ConvSpec { stride: 1, pad: kernel / 2, padding: Padding::Zeros }
    }

    pub fn strided(kernel: usize, stride: usize) -> Self {
        ConvSpec { stride, pad: kernel / 2, padding: Padding::Zeros }
    }
}

/// Convolution geometry of one image: `c × h × w` input, square kernel.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Geom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl Geom {
    pub fn new(c: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Self {
        assert!(h + 2 * pad >= k && w + 2 * pad >= k, "kernel larger than padded input");
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        Geom { c, h, w, k, stride, pad, ho, wo }
    }

    pub fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    pub fn out_len(&self) -> usize {
        self.ho * self.wo
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    /// Source index along one axis, or `None` for a zero tap.
    #[inline]
    fn src(o: usize, kk: usize, stride: usize, pad: usize, len: usize, mode: Padding) -> Option<usize> {
        let i = (o * stride + kk) as isize - pad as isize;
        if i >= 0 && (i as usize) < len {
            Some(i as usize)
        } else {
            match mode {
                Padding::Zeros => None,
                Padding::Replicate => Some(i.clamp(0, len as isize - 1) as usize),
            }
        }
    }
}

/// Output positions `o` whose source `o·stride + kk − pad` lies in `0..len`.
#[inline]
fn valid_range(kk: usize, stride: usize, pad: usize, len: usize, outs: usize) -> (usize, usize) {
    // smallest o with o·stride + kk >= pad
    let lo = pad.saturating_sub(kk).div_ceil(stride).min(outs);
    // largest o with o·stride + kk − pad <= len − 1, exclusive
    let hi = if len + pad > kk { ((len + pad - kk - 1) / stride + 1).min(outs) } else { 0 };
    (lo, hi.max(lo))
}

/// Unfold one image into `(c·k·k) × (ho·wo)` columns.
pub(crate) fn im2col<F: Float>(x: &[F], g: &Geom, mode: Padding, cols: &mut [F]) {
    let l = g.out_len();
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * l..(row + 1) * l];
                let (lo, hi) = valid_range(kx, g.stride, g.pad, g.w, g.wo);
                for oy in 0..g.ho {
                    let drow = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    let Some(iy) = Geom::src(oy, ky, g.stride, g.pad, g.h, mode) else {
                        drow.fill(F::zero());
                        continue;
                    };
                    let srow = &plane[iy * g.w..(iy + 1) * g.w];
                    if hi > lo {
                        let first = lo * g.stride + kx - g.pad;
                        if g.stride == 1 {
                            drow[lo..hi].copy_from_slice(&srow[first..first + (hi - lo)]);
                        } else {
                            for (d, &v) in drow[lo..hi].iter_mut().zip(srow[first..].iter().step_by(g.stride)) {
                                *d = v;
                            }
                        }
                    }
                    let (left, right) = match mode {
                        Padding::Zeros => (F::zero(), F::zero()),
                        Padding::Replicate => (srow[0], srow[g.w - 1]),
                    };
                    drow[..lo].fill(left);
                    drow[hi..].fill(right);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back into an image.
pub(crate) fn col2im<F: Float>(cols: &[F], g: &Geom, mode: Padding, x: &mut [F]) {
    let l = g.out_len();
    for c in 0..g.c {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * l..(row + 1) * l];
                let (lo, hi) = valid_range(kx, g.stride, g.pad, g.w, g.wo);
                for oy in 0..g.ho {
                    let Some(iy) = Geom::src(oy, ky, g.stride, g.pad, g.h, mode) else {
                        continue;
                    };
                    let srow = &src[oy * g.wo..(oy + 1) * g.wo];
                    let prow = &mut plane[iy * g.w..(iy + 1) * g.w];
                    if hi > lo {
                        let first = lo * g.stride + kx - g.pad;
                        if g.stride == 1 {
                            for (p, &v) in prow[first..first + (hi - lo)].iter_mut().zip(&srow[lo..hi]) {
                                *p += v;
                            }
                        } else {
                            for (p, &v) in prow[first..].iter_mut().step_by(g.stride).zip(&srow[lo..hi]) {
                                *p += v;
                            }
                        }
                    }
                    if mode == Padding::Replicate {
                        let left: F = srow[..lo].iter().copied().sum();
                        let right: F = srow[hi..].iter().copied().sum();
                        prow[0] += left;
                        prow[g.w - 1] += right;
                    }
                }
            }
        }
    }
}

fn add_bias<F: Float>(out: &mut [F], bias: &[F], plane: usize) {
    for (chunk, &b) in out.chunks_mut(plane).zip(bias.iter().cycle()) {
        for v in chunk {
            *v += b;
        }
    }
}

fn bias_grad<F: Float>(g: &Tensor<F>) -> Tensor<F> {
    let (n, c, h, w) = g.dims4();
    let plane = h * w;
    let mut d = vec![F::zero(); c];
    for b in 0..n {
        for (ch, dv) in d.iter_mut().enumerate() {
            let base = (b * c + ch) * plane;
            *dv += g.data()[base..base + plane].iter().copied().sum::<F>();
        }
    }
    Tensor::from_vec(vec![c], d)
}

impl<F: Float> Graph<F> {
    /// `x (N,Ci,H,W)`, `w (Co,Ci,k,k)`, optional `b (Co)`.
    pub fn conv2d(&self, x: &Var<F>, w: &Var<F>, b: Option<&Var<F>>, spec: ConvSpec) -> Var<F> {
        let (n, ci, h, wd) = x.dims4();
        let (co, wci, k, k2) = w.dims4();
        assert_eq!(ci, wci, "conv2d: input has {ci} channels, weight expects {wci}");
        assert_eq!(k, k2, "conv2d: square kernels only");
        let g = Geom::new(ci, h, wd, k, spec.stride, spec.pad);
        let (rows, l) = (g.rows(), g.out_len());
        let mut inputs = vec![x, w];
        if let Some(b) = b {
            assert_eq!(b.shape(), &[co], "conv2d bias shape");
            inputs.push(b);
        }
        let needs = self.needs(&inputs);
        let keep_cols = needs[1] && !g.is_pointwise();

        let xd = x.value().data();
        let wdat = w.value().data();
        let mut out = vec![F::zero(); n * co * l];
        let mut saved = if keep_cols { vec![F::zero(); n * rows * l] } else { Vec::new() };
        let mut scratch = if keep_cols || g.is_pointwise() { Vec::new() } else { vec![F::zero(); rows * l] };
        for bi in 0..n {
            let xs = &xd[bi * ci * h * wd..(bi + 1) * ci * h * wd];
            let cols: &[F] = if g.is_pointwise() {
                xs
            } else if keep_cols {
                let dst = &mut saved[bi * rows * l..(bi + 1) * rows * l];
                im2col(xs, &g, spec.padding, dst);
                dst
            } else {
                im2col(xs, &g, spec.padding, &mut scratch);
                &scratch
            };
            gemm(Mat::new(wdat, co, rows), Mat::new(cols, rows, l), F::zero(), &mut out[bi * co * l..(bi + 1) * co * l]);
        }
        if let Some(b) = b {
            add_bias(&mut out, b.value().data(), l);
        }
        let out = Tensor::from_vec(vec![n, co, g.ho, g.wo], out);

        let (xv, wv) = (x.shared(), w.shared());
        let saved = Arc::new(saved);
        let has_bias = b.is_some();
        self.record(out, &inputs, move |grad, needs| {
            let gd = grad.data();
            let dx = needs[0].then(|| {
                let mut dx = vec![F::zero(); n * ci * h * wd];
                let mut dcols = if g.is_pointwise() { Vec::new() } else { vec![F::zero(); rows * l] };
                for bi in 0..n {
                    let gn = &gd[bi * co * l..(bi + 1) * co * l];
                    let dxn = &mut dx[bi * ci * h * wd..(bi + 1) * ci * h * wd];
                    if g.is_pointwise() {
                        gemm(Mat::new(wv.data(), co, rows).t(), Mat::new(gn, co, l), F::zero(), dxn);
                    } else {
                        gemm(Mat::new(wv.data(), co, rows).t(), Mat::new(gn, co, l), F::zero(), &mut dcols);
                        col2im(&dcols, &g, spec.padding, dxn);
                    }
                }
                Tensor::from_vec(vec![n, ci, h, wd], dx)
            });
            let dw = needs[1].then(|| {
                let mut dw = vec![F::zero(); co * rows];
                let mut scratch = Vec::new();
                for bi in 0..n {
                    let gn = &gd[bi * co * l..(bi + 1) * co * l];
                    let xs = &xv.data()[bi * ci * h * wd..(bi + 1) * ci * h * wd];
                    let cols: &[F] = if g.is_pointwise() {
                        xs
                    } else if !saved.is_empty() {
                        &saved[bi * rows * l..(bi + 1) * rows * l]
                    } else {
                        scratch.resize(rows * l, F::zero());
                        im2col(xs, &g, spec.padding, &mut scratch);
                        &scratch
                    };
                    gemm(Mat::new(gn, co, l), Mat::new(cols, rows, l).t(), F::one(), &mut dw);
                }
                Tensor::from_vec(vec![co, ci, k, k], dw)
            });
            let mut res = vec![dx, dw];
            if has_bias {
                res.push(needs[2].then(|| bias_grad(grad)));
            }
            res
        })
    }

    /// Transposed convolution, `w (Ci,Co,k,k)`; output side
    /// `(in - 1)·stride - 2·pad + k + output_pad`.
    pub fn conv_transpose2d(
        &self,
        x: &Var<F>,
        w: &Var<F>,
        b: Option<&Var<F>>,
        stride: usize,
        pad: usize,
        output_pad: usize,
    ) -> Var<F> {
        let (n, ci, hi, wi) = x.dims4();
        let (wci, co, k, k2) = w.dims4();
        assert_eq!(ci, wci, "conv_transpose2d: input has {ci} channels, weight expects {wci}");
        assert_eq!(k, k2);
        let ho = (hi - 1) * stride + k + output_pad - 2 * pad;
        let wo = (wi - 1) * stride + k + output_pad - 2 * pad;
        // geometry of the forward conv whose adjoint this is
        let g = Geom::new(co, ho, wo, k, stride, pad);
        assert_eq!((g.ho, g.wo), (hi, wi), "conv_transpose2d geometry");
        let (rows, lin, lout) = (g.rows(), hi * wi, ho * wo);
        let mut inputs = vec![x, w];
        if let Some(b) = b {
            assert_eq!(b.shape(), &[co]);
            inputs.push(b);
        }
        let xd = x.value().data();
        let wdat = w.value().data();
        let mut out = vec![F::zero(); n * co * lout];
        let mut cols = vec![F::zero(); rows * lin];
        for bi in 0..n {
            let xs = &xd[bi * ci * lin..(bi + 1) * ci * lin];
            gemm(Mat::new(wdat, ci, rows).t(), Mat::new(xs, ci, lin), F::zero(), &mut cols);
            col2im(&cols, &g, Padding::Zeros, &mut out[bi * co * lout..(bi + 1) * co * lout]);
        }
        if let Some(b) = b {
            add_bias(&mut out, b.value().data(), lout);
        }
        let out = Tensor::from_vec(vec![n, co, ho, wo], out);
        let (xv, wv) = (x.shared(), w.shared());
        let has_bias = b.is_some();
        self.record(out, &inputs, move |grad, needs| {
            let gd = grad.data();
            let mut gcols = vec![F::zero(); rows * lin];
            let mut dx = needs[0].then(|| vec![F::zero(); n * ci * lin]);
            let mut dw = needs[1].then(|| vec![F::zero(); ci * rows]);
            for bi in 0..n {
                im2col(&gd[bi * co * lout..(bi + 1) * co * lout], &g, Padding::Zeros, &mut gcols);
                if let Some(dx) = dx.as_mut() {
                    gemm(Mat::new(wv.data(), ci, rows), Mat::new(&gcols, rows, lin), F::zero(), &mut dx[bi * ci * lin..(bi + 1) * ci * lin]);
                }
                if let Some(dw) = dw.as_mut() {
                    let xs = &xv.data()[bi * ci * lin..(bi + 1) * ci * lin];
                    gemm(Mat::new(xs, ci, lin), Mat::new(&gcols, rows, lin).t(), F::one(), dw);
                }
            }
            let mut res = vec![
                dx.map(|d| Tensor::from_vec(vec![n, ci, hi, wi], d)),
                dw.map(|d| Tensor::from_vec(vec![ci, co, k, k], d)),
            ];
            if has_bias {
                res.push(needs[2].then(|| bias_grad(grad)));
            }
            res
        })
    }
}
