//! Seeded synthetic luma sequences: a textured background under a slow pan
//! with a few independently moving textured objects on top.
//!
//! The content is band-limited noise plus oriented gratings, which gives the
//! codec edges, flat areas and sub-pixel motion to work with.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::{LumaSequence, Plane};

/// Smooth value noise on a periodic lattice.
struct ValueNoise {
    cells: usize,
    spacing: f64,
    grid: Vec<f64>,
}

impl ValueNoise {
    fn new(rng: &mut ChaCha8Rng, cells: usize, spacing: f64) -> Self {
        let grid = (0..cells * cells).map(|_| rng.random_range(-1.0..1.0)).collect();
        ValueNoise { cells, spacing, grid }
    }

    fn at(&self, x: f64, y: f64) -> f64 {
        let (gx, gy) = (x / self.spacing, y / self.spacing);
        let (x0, y0) = (gx.floor(), gy.floor());
        let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
        let (tx, ty) = (smooth(gx - x0), smooth(gy - y0));
        let n = self.cells as i64;
        let idx = |i: f64, j: f64| {
            let (i, j) = ((i as i64).rem_euclid(n) as usize, (j as i64).rem_euclid(n) as usize);
            self.grid[j * self.cells + i]
        };
        let top = idx(x0, y0) * (1.0 - tx) + idx(x0 + 1.0, y0) * tx;
        let bot = idx(x0, y0 + 1.0) * (1.0 - tx) + idx(x0 + 1.0, y0 + 1.0) * tx;
        top * (1.0 - ty) + bot * ty
    }
}

struct Texture {
    mean: f64,
    octaves: Vec<(ValueNoise, f64)>,
    gratings: Vec<(f64, f64, f64, f64)>,
}

impl Texture {
    fn new(rng: &mut ChaCha8Rng) -> Self {
        let mean = rng.random_range(60.0..190.0);
        let octaves = [(24.0, 40.0), (8.0, 22.0), (3.0, 9.0)]
            .into_iter()
            .map(|(spacing, amp)| (ValueNoise::new(rng, 32, spacing), amp * rng.random_range(0.5..1.0)))
            .collect();
        let gratings = (0..rng.random_range(1..=2))
            .map(|_| {
                let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
                let freq = rng.random_range(0.08..0.45);
                (theta.cos() * freq, theta.sin() * freq, rng.random_range(0.0..6.3), rng.random_range(8.0..25.0))
            })
            .collect();
        Texture { mean, octaves, gratings }
    }

    fn at(&self, x: f64, y: f64) -> f64 {
        let noise: f64 = self.octaves.iter().map(|(n, a)| a * n.at(x, y)).sum();
        let waves: f64 = self.gratings.iter().map(|&(fx, fy, ph, a)| a * (fx * x + fy * y + ph).sin()).sum();
        self.mean + noise + waves
    }
}

struct Object {
    texture: Texture,
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    vx: f64,
    vy: f64,
    ellipse: bool,
}

impl Object {
    fn covers(&self, x: f64, y: f64) -> bool {
        let (u, v) = ((x - self.cx) / self.rx, (y - self.cy) / self.ry);
        if self.ellipse {
            u * u + v * v <= 1.0
        } else {
            u.abs() <= 1.0 && v.abs() <= 1.0
        }
    }
}

/// A `width × height × frames` sequence fully determined by `seed`.
///
/// Background pan is at most 1.5 px/frame and objects move at most
/// 3 px/frame, both at sub-pixel precision.
pub fn moving_sequence(width: usize, height: usize, frames: usize, seed: u64) -> LumaSequence {
    assert!(width > 0 && height > 0 && frames > 0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let background = Texture::new(&mut rng);
    let (pan_x, pan_y) = (rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5));
    let (w, h) = (width as f64, height as f64);
    let mut objects: Vec<Object> = (0..rng.random_range(2..=4))
        .map(|_| Object {
            texture: Texture::new(&mut rng),
            cx: rng.random_range(0.0..w),
            cy: rng.random_range(0.0..h),
            rx: rng.random_range(0.08..0.25) * w,
            ry: rng.random_range(0.08..0.25) * h,
            vx: rng.random_range(-3.0..3.0),
            vy: rng.random_range(-3.0..3.0),
            ellipse: rng.random_bool(0.5),
        })
        .collect();

    let mut out = Vec::with_capacity(frames);
    for t in 0..frames {
        let (ox, oy) = (pan_x * t as f64, pan_y * t as f64);
        let plane = Plane::from_fn(width, height, |x, y| {
            let (xf, yf) = (x as f64, y as f64);
            let value = objects
                .iter()
                .rev()
                .find(|o| o.covers(xf, yf))
                .map(|o| o.texture.at(xf - o.cx, yf - o.cy))
                .unwrap_or_else(|| background.at(xf + ox, yf + oy));
            value.round().clamp(0.0, 255.0) as u8
        });
        out.push(plane);
        for o in objects.iter_mut() {
            o.cx += o.vx;
            o.cy += o.vy;
        }
    }
    LumaSequence::new(out).expect("frames share dimensions")
}
