use crate::{Float, Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShiftAxis {
    /// Along the width (x) axis.
    Horizontal,
    /// Along the height (y) axis.
    Vertical,
}

/// `dst(p) = src(p - delta)` along `axis`, zero where the source is outside.
fn shift_plane<F: Float>(src: &[F], dst: &mut [F], h: usize, w: usize, axis: ShiftAxis, delta: isize) {
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = match axis {
                ShiftAxis::Horizontal => (y as isize, x as isize - delta),
                ShiftAxis::Vertical => (y as isize - delta, x as isize),
            };
            dst[y * w + x] = if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                src[sy as usize * w + sx as usize]
            } else {
                F::zero()
            };
        }
    }
}

fn apply<F: Float>(x: &Tensor<F>, axis: ShiftAxis, start: usize, len: usize, amount: isize) -> Tensor<F> {
    let (n, c, h, w) = x.dims4();
    let plane = h * w;
    let half = len / 2;
    let mut out = x.clone();
    for b in 0..n {
        for ch in start..start + len {
            let delta = if ch < start + half { amount } else { -amount };
            let base = (b * c + ch) * plane;
            shift_plane(&x.data()[base..base + plane], &mut out.data_mut()[base..base + plane], h, w, axis, delta);
        }
    }
    out
}

impl<F: Float> Graph<F> {
    /// Partial channel shift: channels `start..start+len/2` move by
    /// `+amount` pixels along `axis`, channels `start+len/2..start+len` by
    /// `-amount`; vacated pixels are zero and all other channels pass
    /// through untouched.
    pub fn channel_shift(&self, x: &Var<F>, axis: ShiftAxis, start: usize, len: usize, amount: usize) -> Var<F> {
        let (_, c, _, _) = x.dims4();
        assert!(start + len <= c, "shift window {start}..{} exceeds {c} channels", start + len);
        assert!(len % 2 == 0, "shift window must have even width");
        let amount = amount as isize;
        let out = apply(x.value(), axis, start, len, amount);
        self.record(out, &[x], move |g, _| vec![Some(apply(g, axis, start, len, -amount))])
    }
}
