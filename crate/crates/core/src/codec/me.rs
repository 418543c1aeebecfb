use super::Plane;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockMatch {
    pub dx: i32,
    pub dy: i32,
    pub sad: u32,
}

impl BlockMatch {
    /// Ordering key: SAD, then `|dx| + |dy|`, then `dy`, then `dx`.
    fn key(&self) -> (u32, i32, i32, i32) {
        (self.sad, self.dx.abs() + self.dy.abs(), self.dy, self.dx)
    }
}

#[inline]
fn sad(cur: &Plane<u8>, reference: &Plane<u8>, x: usize, y: usize, rx: usize, ry: usize, block: usize) -> u32 {
    let mut acc = 0u32;
    for r in 0..block {
        let a = &cur.row(y + r)[x..x + block];
        let b = &reference.row(ry + r)[rx..rx + block];
        acc += a.iter().zip(b).map(|(&p, &q)| p.abs_diff(q) as u32).sum::<u32>();
    }
    acc
}

/// Full search over `[-range, range]²` for the `block × block` tile of `cur`
/// at `(x, y)`. Only displacements that keep the reference tile inside
/// `reference` are considered; ties go to the smaller `|dx| + |dy|`, then
/// the smaller `dy`, then the smaller `dx`.
pub fn block_motion_search(cur: &Plane<u8>, reference: &Plane<u8>, x: usize, y: usize, block: usize, range: i32) -> BlockMatch {
    assert!(x + block <= cur.width() && y + block <= cur.height(), "block outside current frame");
    assert_eq!((cur.width(), cur.height()), (reference.width(), reference.height()));
    let (w, h) = (reference.width() as i32, reference.height() as i32);
    let (xi, yi, b) = (x as i32, y as i32, block as i32);
    let dy_lo = (-range).max(-yi);
    let dy_hi = range.min(h - b - yi);
    let dx_lo = (-range).max(-xi);
    let dx_hi = range.min(w - b - xi);
    let mut best: Option<BlockMatch> = None;
    for dy in dy_lo..=dy_hi {
        for dx in dx_lo..=dx_hi {
            let cand = BlockMatch {
                dx,
                dy,
                sad: sad(cur, reference, x, y, (xi + dx) as usize, (yi + dy) as usize, block),
            };
            if best.is_none_or(|b| cand.key() < b.key()) {
                best = Some(cand);
            }
        }
    }
    best.expect("search window always contains the block's own position")
}
