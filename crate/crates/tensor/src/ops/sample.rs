//! Bilinear sampling with border replication: backward warping along a
//! displacement field and deformable 3×3 convolution.

use std::sync::Arc;

use crate::gemm::{gemm, Mat};
use crate::{Float, Graph, Tensor, Var};

/// Bilinear footprint of one sampling position inside an `h × w` plane.
#[derive(Clone, Copy, Debug)]
struct Footprint<F> {
    idx: [usize; 4],
    wy: F,
    wx: F,
    // derivative passes through only when the position was not clamped
    live_y: bool,
    live_x: bool,
}

impl<F: Float> Footprint<F> {
    #[inline]
    fn at(py: F, px: F, h: usize, w: usize) -> Self {
        let (hmax, wmax) = (F::lit((h - 1) as f64), F::lit((w - 1) as f64));
        let live_y = py >= F::zero() && py <= hmax;
        let live_x = px >= F::zero() && px <= wmax;
        let cy = py.max(F::zero()).min(hmax);
        let cx = px.max(F::zero()).min(wmax);
        let y0 = cy.floor().to_usize().unwrap_or(0).min(h - 1);
        let x0 = cx.floor().to_usize().unwrap_or(0).min(w - 1);
        let y1 = (y0 + 1).min(h - 1);
        let x1 = (x0 + 1).min(w - 1);
        let wy = cy - F::lit(y0 as f64);
        let wx = cx - F::lit(x0 as f64);
        Footprint { idx: [y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1], wy, wx, live_y, live_x }
    }

    #[inline]
    fn weights(&self) -> [F; 4] {
        let (wy, wx) = (self.wy, self.wx);
        let (oy, ox) = (F::one() - wy, F::one() - wx);
        [oy * ox, oy * wx, wy * ox, wy * wx]
    }

    #[inline]
    fn sample(&self, plane: &[F]) -> F {
        let (wy, wx) = (self.wy, self.wx);
        let (oy, ox) = (F::one() - wy, F::one() - wx);
        let top = ox * plane[self.idx[0]] + wx * plane[self.idx[1]];
        let bot = ox * plane[self.idx[2]] + wx * plane[self.idx[3]];
        oy * top + wy * bot
    }

    /// `(d/dy, d/dx)` of the sampled value.
    #[inline]
    fn slope(&self, plane: &[F]) -> (F, F) {
        let v = [plane[self.idx[0]], plane[self.idx[1]], plane[self.idx[2]], plane[self.idx[3]]];
        let (wy, wx) = (self.wy, self.wx);
        let dy = if self.live_y { (F::one() - wx) * (v[2] - v[0]) + wx * (v[3] - v[1]) } else { F::zero() };
        let dx = if self.live_x { (F::one() - wy) * (v[1] - v[0]) + wy * (v[3] - v[2]) } else { F::zero() };
        (dy, dx)
    }

    #[inline]
    fn scatter(&self, plane: &mut [F], g: F) {
        for (i, wgt) in self.idx.iter().zip(self.weights()) {
            plane[*i] += g * wgt;
        }
    }
}

/// Position sampled by a deformable tap.
#[inline]
fn deform_position<F: Float>(off: &[F], t: usize, l: usize, plane: usize, y: usize, x: usize, k: usize, pad: usize) -> (F, F) {
    let (ky, kx) = (t / k, t % k);
    let dy = off[(2 * t) * plane + l];
    let dx = off[(2 * t + 1) * plane + l];
    let py = F::lit(y as f64 + ky as f64 - pad as f64) + dy;
    let px = F::lit(x as f64 + kx as f64 - pad as f64) + dx;
    (py, px)
}

impl<F: Float> Graph<F> {
    /// Backward warp: `out(c, y, x) = feat(c, y + flow_y, x + flow_x)`.
    ///
    /// `flow` is `(N, 2, H, W)` with channel 0 the horizontal and channel 1
    /// the vertical displacement, in pixels.
    pub fn warp(&self, feat: &Var<F>, flow: &Var<F>) -> Var<F> {
        let (n, c, h, w) = feat.dims4();
        assert_eq!(flow.shape(), &[n, 2, h, w], "warp: flow must be (N,2,H,W) matching the feature");
        let plane = h * w;
        let fd = feat.value().data();
        let fl = flow.value().data();
        let mut out = vec![F::zero(); n * c * plane];
        for b in 0..n {
            let fx = &fl[(b * 2) * plane..(b * 2 + 1) * plane];
            let fy = &fl[(b * 2 + 1) * plane..(b * 2 + 2) * plane];
            for y in 0..h {
                for x in 0..w {
                    let l = y * w + x;
                    let fp = Footprint::at(F::lit(y as f64) + fy[l], F::lit(x as f64) + fx[l], h, w);
                    for ch in 0..c {
                        let base = (b * c + ch) * plane;
                        out[base + l] = fp.sample(&fd[base..base + plane]);
                    }
                }
            }
        }
        let out = Tensor::from_vec(vec![n, c, h, w], out);
        let (fv, flv) = (feat.shared(), flow.shared());
        self.record(out, &[feat, flow], move |g, needs| {
            let gd = g.data();
            let (fd, fl) = (fv.data(), flv.data());
            let mut dfeat = needs[0].then(|| vec![F::zero(); n * c * plane]);
            let mut dflow = needs[1].then(|| vec![F::zero(); n * 2 * plane]);
            for b in 0..n {
                for y in 0..h {
                    for x in 0..w {
                        let l = y * w + x;
                        let fx = fl[(b * 2) * plane + l];
                        let fy = fl[(b * 2 + 1) * plane + l];
                        let fp = Footprint::at(F::lit(y as f64) + fy, F::lit(x as f64) + fx, h, w);
                        let (mut sy, mut sx) = (F::zero(), F::zero());
                        for ch in 0..c {
                            let base = (b * c + ch) * plane;
                            let gv = gd[base + l];
                            if let Some(df) = dfeat.as_mut() {
                                fp.scatter(&mut df[base..base + plane], gv);
                            }
                            if dflow.is_some() {
                                let (dy, dx) = fp.slope(&fd[base..base + plane]);
                                sy += gv * dy;
                                sx += gv * dx;
                            }
                        }
                        if let Some(dfl) = dflow.as_mut() {
                            dfl[(b * 2) * plane + l] += sx;
                            dfl[(b * 2 + 1) * plane + l] += sy;
                        }
                    }
                }
            }
            vec![
                dfeat.map(|d| Tensor::from_vec(vec![n, c, h, w], d)),
                dflow.map(|d| Tensor::from_vec(vec![n, 2, h, w], d)),
            ]
        })
    }

    /// Deformable convolution (no modulation, one offset group), stride 1,
    /// "same" output size.
    ///
    /// `offset` is `(N, 2·k·k, H, W)`; for tap `t = ky·k + kx`, channel `2t`
    /// holds the vertical and `2t + 1` the horizontal displacement. Samples
    /// outside the frame replicate the border.
    pub fn deform_conv2d(&self, x: &Var<F>, offset: &Var<F>, w: &Var<F>, b: Option<&Var<F>>) -> Var<F> {
        let (n, ci, h, wd) = x.dims4();
        let (co, wci, k, k2) = w.dims4();
        assert_eq!(ci, wci, "deform_conv2d channel mismatch");
        assert_eq!(k, k2);
        let taps = k * k;
        assert_eq!(offset.shape(), &[n, 2 * taps, h, wd], "deform_conv2d offset shape");
        let pad = k / 2;
        let (plane, rows) = (h * wd, ci * taps);
        let mut inputs = vec![x, offset, w];
        if let Some(b) = b {
            assert_eq!(b.shape(), &[co]);
            inputs.push(b);
        }
        let needs = self.needs(&inputs);

        let xd = x.value().data();
        let od = offset.value().data();
        let mut cols_all = if needs[2] { vec![F::zero(); n * rows * plane] } else { Vec::new() };
        let mut scratch = if needs[2] { Vec::new() } else { vec![F::zero(); rows * plane] };
        let mut out = vec![F::zero(); n * co * plane];
        for bi in 0..n {
            let xs = &xd[bi * ci * plane..(bi + 1) * ci * plane];
            let off = &od[bi * 2 * taps * plane..(bi + 1) * 2 * taps * plane];
            let cols: &mut [F] = if needs[2] { &mut cols_all[bi * rows * plane..(bi + 1) * rows * plane] } else { &mut scratch };
            for t in 0..taps {
                for y in 0..h {
                    for xx in 0..wd {
                        let l = y * wd + xx;
                        let (py, px) = deform_position(off, t, l, plane, y, xx, k, pad);
                        let fp = Footprint::at(py, px, h, wd);
                        for ch in 0..ci {
                            cols[(ch * taps + t) * plane + l] = fp.sample(&xs[ch * plane..(ch + 1) * plane]);
                        }
                    }
                }
            }
            gemm(Mat::new(w.value().data(), co, rows), Mat::new(cols, rows, plane), F::zero(), &mut out[bi * co * plane..(bi + 1) * co * plane]);
        }
        if let Some(b) = b {
            for (chunk, &bv) in out.chunks_mut(plane).zip(b.value().data().iter().cycle()) {
                for v in chunk {
                    *v += bv;
                }
            }
        }
        let out = Tensor::from_vec(vec![n, co, h, wd], out);
        let (xv, ov, wv) = (x.shared(), offset.shared(), w.shared());
        let cols_all = Arc::new(cols_all);
        let has_bias = b.is_some();
        self.record(out, &inputs, move |g, needs| {
            let gd = g.data();
            let (xd, od, wdat) = (xv.data(), ov.data(), wv.data());
            let mut dx = needs[0].then(|| vec![F::zero(); n * ci * plane]);
            let mut doff = needs[1].then(|| vec![F::zero(); n * 2 * taps * plane]);
            let mut dw = needs[2].then(|| vec![F::zero(); co * rows]);
            let mut dcols = vec![F::zero(); rows * plane];
            for bi in 0..n {
                let gn = &gd[bi * co * plane..(bi + 1) * co * plane];
                if let Some(dw) = dw.as_mut() {
                    let cols = &cols_all[bi * rows * plane..(bi + 1) * rows * plane];
                    gemm(Mat::new(gn, co, plane), Mat::new(cols, rows, plane).t(), F::one(), dw);
                }
                if dx.is_none() && doff.is_none() {
                    continue;
                }
                gemm(Mat::new(wdat, co, rows).t(), Mat::new(gn, co, plane), F::zero(), &mut dcols);
                let xs = &xd[bi * ci * plane..(bi + 1) * ci * plane];
                let off = &od[bi * 2 * taps * plane..(bi + 1) * 2 * taps * plane];
                for t in 0..taps {
                    for y in 0..h {
                        for xx in 0..wd {
                            let l = y * wd + xx;
                            let (py, px) = deform_position(off, t, l, plane, y, xx, k, pad);
                            let fp = Footprint::at(py, px, h, wd);
                            let (mut sy, mut sx) = (F::zero(), F::zero());
                            for ch in 0..ci {
                                let gv = dcols[(ch * taps + t) * plane + l];
                                let xplane = &xs[ch * plane..(ch + 1) * plane];
                                if let Some(dx) = dx.as_mut() {
                                    let base = (bi * ci + ch) * plane;
                                    fp.scatter(&mut dx[base..base + plane], gv);
                                }
                                if doff.is_some() {
                                    let (dy, dxs) = fp.slope(xplane);
                                    sy += gv * dy;
                                    sx += gv * dxs;
                                }
                            }
                            if let Some(doff) = doff.as_mut() {
                                let base = bi * 2 * taps * plane;
                                doff[base + (2 * t) * plane + l] += sy;
                                doff[base + (2 * t + 1) * plane + l] += sx;
                            }
                        }
                    }
                }
            }
            let mut res = vec![
                dx.map(|d| Tensor::from_vec(vec![n, ci, h, wd], d)),
                doff.map(|d| Tensor::from_vec(vec![n, 2 * taps, h, wd], d)),
                dw.map(|d| Tensor::from_vec(vec![co, ci, k, k], d)),
            ];
            if has_bias {
                res.push(needs[3].then(|| {
                    let mut d = vec![F::zero(); co];
                    for (i, chunk) in gd.chunks(plane).enumerate() {
                        d[i % co] += chunk.iter().copied().sum::<F>();
                    }
                    Tensor::from_vec(vec![co], d)
                }));
            }
            res
        })
    }
}
