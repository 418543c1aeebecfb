//! Fused spatial attention over NCHW feature maps.
//!
//! Every spatial position attends to every position of its window:
//! `out[:, i] = Σ_j softmax_j(scale · q[:, i]·k[:, j]) · v[:, j]`.

use crate::gemm::{gemm, Mat};
use crate::{Float, Graph, Tensor, Var};

/// Element budget of one block of attention rows.
const CHUNK_ELEMS: usize = 1 << 18;

/// Partition of the `h × w` grid into attention windows.
///
/// `None` means one global window. Windows are non-overlapping `size × size`
/// tiles in row-major order; edge tiles may be smaller.
pub fn attention_windows(h: usize, w: usize, size: Option<usize>) -> Vec<Vec<usize>> {
    match size {
        None => vec![(0..h * w).collect()],
        Some(s) => {
            assert!(s > 0);
            let mut out = Vec::new();
            for ty in (0..h).step_by(s) {
                for tx in (0..w).step_by(s) {
                    let mut idx = Vec::with_capacity(s * s);
                    for y in ty..(ty + s).min(h) {
                        for x in tx..(tx + s).min(w) {
                            idx.push(y * w + x);
                        }
                    }
                    out.push(idx);
                }
            }
            out
        }
    }
}

fn gather<F: Float>(src: &[F], channels: usize, plane: usize, idx: &[usize]) -> Vec<F> {
    let mut out = Vec::with_capacity(channels * idx.len());
    for c in 0..channels {
        let p = &src[c * plane..(c + 1) * plane];
        out.extend(idx.iter().map(|&i| p[i]));
    }
    out
}

fn scatter<F: Float>(dst: &mut [F], src: &[F], channels: usize, plane: usize, idx: &[usize]) {
    let lw = idx.len();
    for c in 0..channels {
        let p = &mut dst[c * plane..(c + 1) * plane];
        for (j, &i) in idx.iter().enumerate() {
            p[i] += src[c * lw + j];
        }
    }
}

/// Sum with independent partial accumulators so the loop vectorizes.
fn lane_sum<F: Float>(xs: &[F]) -> F {
    let mut acc = [F::zero(); 8];
    let mut chunks = xs.chunks_exact(8);
    for c in &mut chunks {
        for (a, &v) in acc.iter_mut().zip(c) {
            *a += v;
        }
    }
    let tail: F = chunks.remainder().iter().copied().sum();
    acc.iter().copied().sum::<F>() + tail
}

fn lane_max<F: Float>(xs: &[F]) -> F {
    let mut acc = [F::neg_infinity(); 8];
    let mut chunks = xs.chunks_exact(8);
    for c in &mut chunks {
        for (a, &v) in acc.iter_mut().zip(c) {
            *a = if v > *a { v } else { *a };
        }
    }
    chunks.remainder().iter().chain(&acc).copied().fold(F::neg_infinity(), |a, v| if v > a { v } else { a })
}

fn lane_dot<F: Float>(a: &[F], b: &[F]) -> F {
    let mut acc = [F::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: F = ca.remainder().iter().zip(cb.remainder()).map(|(&x, &y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    acc.iter().copied().sum::<F>() + tail
}

/// In-place `softmax(scale · row)` for every row of `s`.
fn softmax_rows<F: Float>(s: &mut [F], cols: usize, scale: F) {
    for row in s.chunks_mut(cols) {
        let m = lane_max(row) * scale;
        for v in row.iter_mut() {
            *v = (*v * scale - m).exp_nonpos();
        }
        let inv = F::one() / lane_sum(row);
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
}

/// Row-softmax probabilities `(lw × lw)` for window-local `q`, `k` of shape `(d × lw)`.
pub fn attention_probs<F: Float>(q: &[F], k: &[F], d: usize, lw: usize, scale: F) -> Vec<F> {
    let mut s = vec![F::zero(); lw * lw];
    gemm(Mat::new(q, d, lw).t(), Mat::new(k, d, lw), F::zero(), &mut s);
    softmax_rows(&mut s, lw, scale);
    s
}

/// Attention probabilities of every batch item and window, in order.
pub fn attention_maps<F: Float>(q: &Tensor<F>, k: &Tensor<F>, scale: F, window: Option<usize>) -> Vec<Tensor<F>> {
    let (n, d, h, w) = q.dims4();
    assert_eq!(k.shape(), q.shape());
    let plane = h * w;
    let mut out = Vec::new();
    for b in 0..n {
        for idx in attention_windows(h, w, window) {
            let qw = gather(&q.data()[b * d * plane..(b + 1) * d * plane], d, plane, &idx);
            let kw = gather(&k.data()[b * d * plane..(b + 1) * d * plane], d, plane, &idx);
            let lw = idx.len();
            out.push(Tensor::from_vec(vec![lw, lw], attention_probs(&qw, &kw, d, lw, scale)));
        }
    }
    out
}

/// A strided matrix operand: element `(i, j)` is `data[i·rs + j·cs]`.
#[derive(Clone, Copy)]
struct View<'a, F> {
    data: &'a [F],
    rs: usize,
    cs: usize,
}

fn view<F>(data: &[F], rs: usize, cs: usize) -> View<'_, F> {
    View { data, rs, cs }
}

/// `out (m × n, row stride ro) = a (m × k) · b (k × n) + beta · out`.
#[allow(clippy::too_many_arguments)]
fn mm<F: Float>(m: usize, k: usize, n: usize, a: View<'_, F>, b: View<'_, F>, beta: F, out: &mut [F], ro: usize) {
    let last = |v: &View<'_, F>, r: usize, c: usize| (r - 1) * v.rs + (c - 1) * v.cs;
    assert!(m > 0 && k > 0 && n > 0);
    assert!(last(&a, m, k) < a.data.len() && last(&b, k, n) < b.data.len());
    assert!((m - 1) * ro + n <= out.len() && ro >= n);
    // SAFETY: the furthest element of every operand is in bounds (checked
    // above) and `out` is uniquely borrowed with non-overlapping rows.
    unsafe {
        F::gemm_raw(
            m,
            k,
            n,
            F::one(),
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            out.as_mut_ptr(),
            ro as isize,
            1,
        )
    }
}

/// Window-local operands: `q`, `k` are `d × lw`, `v` is `c × lw`, all
/// row-major.
struct Window<'a, F> {
    q: &'a [F],
    k: &'a [F],
    v: &'a [F],
    d: usize,
    c: usize,
    lw: usize,
}

impl<F: Float> Window<'_, F> {
    fn chunk_rows(&self) -> usize {
        (CHUNK_ELEMS / self.lw).clamp(1, self.lw)
    }

    /// Probabilities of query rows `r0..r0+r` into `s (r × lw)`.
    fn probs(&self, r0: usize, r: usize, scale: F, s: &mut [F]) {
        let lw = self.lw;
        mm(r, self.d, lw, view(&self.q[r0..], 1, lw), view(self.k, lw, 1), F::zero(), s, lw);
        softmax_rows(&mut s[..r * lw], lw, scale);
    }

    /// `out (c × lw) = v · pᵀ`, one block of query rows at a time so the
    /// probabilities never leave cache.
    fn forward(&self, scale: F, out: &mut [F]) {
        let (lw, rows) = (self.lw, self.chunk_rows());
        let mut s = vec![F::zero(); rows * lw];
        for r0 in (0..lw).step_by(rows) {
            let r = rows.min(lw - r0);
            self.probs(r0, r, scale, &mut s);
            mm(self.c, lw, r, view(self.v, lw, 1), view(&s, 1, lw), F::zero(), &mut out[r0..], lw);
        }
    }

    /// Accumulates input gradients for the output gradient `gw (c × lw)`,
    /// recomputing the probabilities block by block.
    fn backward(&self, gw: &[F], scale: F, mut dq: Option<&mut [F]>, mut dk: Option<&mut [F]>, mut dv: Option<&mut [F]>) {
        let (d, c, lw, rows) = (self.d, self.c, self.lw, self.chunk_rows());
        let mut s = vec![F::zero(); rows * lw];
        let mut ds = vec![F::zero(); rows * lw];
        for r0 in (0..lw).step_by(rows) {
            let r = rows.min(lw - r0);
            self.probs(r0, r, scale, &mut s);
            let g_rows = &gw[r0..];
            if let Some(dv) = dv.as_deref_mut() {
                mm(c, r, lw, view(g_rows, lw, 1), view(&s, lw, 1), F::one(), dv, lw);
            }
            if dq.is_none() && dk.is_none() {
                continue;
            }
            mm(r, c, lw, view(g_rows, 1, lw), view(self.v, lw, 1), F::zero(), &mut ds, lw);
            for (drow, prow) in ds.chunks_mut(lw).zip(s.chunks(lw)).take(r) {
                let dot = lane_dot(drow, prow);
                for (x, &pv) in drow.iter_mut().zip(prow) {
                    *x = pv * (*x - dot) * scale;
                }
            }
            if let Some(dq) = dq.as_deref_mut() {
                mm(d, lw, r, view(self.k, lw, 1), view(&ds, 1, lw), F::one(), &mut dq[r0..], lw);
            }
            if let Some(dk) = dk.as_deref_mut() {
                mm(d, r, lw, view(&self.q[r0..], lw, 1), view(&ds, lw, 1), F::one(), dk, lw);
            }
        }
    }
}

impl<F: Float> Graph<F> {
    /// `q`, `k`: `(N, d, H, W)`; `v`: `(N, c, H, W)`; returns `(N, c, H, W)`.
    /// `scale` must be positive.
    pub fn spatial_attention(&self, q: &Var<F>, k: &Var<F>, v: &Var<F>, scale: F, window: Option<usize>) -> Var<F> {
        let (n, d, h, w) = q.dims4();
        assert_eq!(k.shape(), q.shape(), "attention: key shape must match query");
        let (vn, c, vh, vw) = v.dims4();
        assert!(vn == n && vh == h && vw == w, "attention: value spatial dims must match");
        assert!(scale > F::zero(), "attention: scale must be positive");
        let plane = h * w;
        let wins = attention_windows(h, w, window);
        let global = wins.len() == 1;
        let inputs = [q, k, v];

        let (qd, kd, vd) = (q.value().data(), k.value().data(), v.value().data());
        let mut out = vec![F::zero(); n * c * plane];
        for b in 0..n {
            let qb = &qd[b * d * plane..(b + 1) * d * plane];
            let kb = &kd[b * d * plane..(b + 1) * d * plane];
            let vb = &vd[b * c * plane..(b + 1) * c * plane];
            let ob = &mut out[b * c * plane..(b + 1) * c * plane];
            if global {
                Window { q: qb, k: kb, v: vb, d, c, lw: plane }.forward(scale, ob);
                continue;
            }
            for idx in &wins {
                let lw = idx.len();
                let (qw, kw, vw) = (gather(qb, d, plane, idx), gather(kb, d, plane, idx), gather(vb, c, plane, idx));
                let mut ow = vec![F::zero(); c * lw];
                Window { q: &qw, k: &kw, v: &vw, d, c, lw }.forward(scale, &mut ow);
                scatter(ob, &ow, c, plane, idx);
            }
        }
        let out = Tensor::from_vec(vec![n, c, h, w], out);
        let (qv, kv, vv) = (q.shared(), k.shared(), v.shared());
        self.record(out, &inputs, move |g, needs| {
            let gd = g.data();
            let mut dq = needs[0].then(|| vec![F::zero(); n * d * plane]);
            let mut dk = needs[1].then(|| vec![F::zero(); n * d * plane]);
            let mut dv = needs[2].then(|| vec![F::zero(); n * c * plane]);
            for b in 0..n {
                let qb = &qv.data()[b * d * plane..(b + 1) * d * plane];
                let kb = &kv.data()[b * d * plane..(b + 1) * d * plane];
                let vb = &vv.data()[b * c * plane..(b + 1) * c * plane];
                let gb = &gd[b * c * plane..(b + 1) * c * plane];
                let dqb = dq.as_mut().map(|x| &mut x[b * d * plane..(b + 1) * d * plane]);
                let dkb = dk.as_mut().map(|x| &mut x[b * d * plane..(b + 1) * d * plane]);
                let dvb = dv.as_mut().map(|x| &mut x[b * c * plane..(b + 1) * c * plane]);
                if global {
                    Window { q: qb, k: kb, v: vb, d, c, lw: plane }.backward(gb, scale, dqb, dkb, dvb);
                    continue;
                }
                let (mut dqb, mut dkb, mut dvb) = (dqb, dkb, dvb);
                for idx in &wins {
                    let lw = idx.len();
                    let (qw, kw, vw, gw) = (gather(qb, d, plane, idx), gather(kb, d, plane, idx), gather(vb, c, plane, idx), gather(gb, c, plane, idx));
                    let mut dqw = dqb.is_some().then(|| vec![F::zero(); d * lw]);
                    let mut dkw = dkb.is_some().then(|| vec![F::zero(); d * lw]);
                    let mut dvw = dvb.is_some().then(|| vec![F::zero(); c * lw]);
                    Window { q: &qw, k: &kw, v: &vw, d, c, lw }.backward(&gw, scale, dqw.as_deref_mut(), dkw.as_deref_mut(), dvw.as_deref_mut());
                    for (dst, src, ch) in [(dqb.as_deref_mut(), dqw, d), (dkb.as_deref_mut(), dkw, d), (dvb.as_deref_mut(), dvw, c)] {
                        if let (Some(dst), Some(src)) = (dst, src) {
                            scatter(dst, &src, ch, plane, idx);
                        }
                    }
                }
            }
            vec![
                dq.map(|x| Tensor::from_vec(vec![n, d, h, w], x)),
                dk.map(|x| Tensor::from_vec(vec![n, d, h, w], x)),
                dv.map(|x| Tensor::from_vec(vec![n, c, h, w], x)),
            ]
        })
    }
}
