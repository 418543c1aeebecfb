#![allow(dead_code)]

use cpga::model::{ClipBatch, ModelConfig};
use cpga_tensor::{Bound, Graph, ParamId, ParamStore, Tensor, Var};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::randn(shape.to_vec(), 1.0, &mut rng(seed))
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor<f64> {
    Tensor::uniform(shape.to_vec(), lo, hi, &mut rng(seed))
}

/// Narrow model for finite-difference probes: `channels` must be a multiple
/// of 4.
pub fn small_config(channels: usize) -> ModelConfig {
    ModelConfig { channels, shift_ratio: 2.0 / channels as f64, shift_h: 1, shift_w: 1, ..ModelConfig::default() }
}

/// Random clip with plausible value ranges; motion stays within ±half the
/// search range.
pub fn random_clip(cfg: &ModelConfig, n: usize, h: usize, w: usize, seed: u64) -> ClipBatch<f64> {
    let t = cfg.frames();
    let lq = uniform(&[n, t, h, w], 0.0, 1.0, seed);
    let noise = uniform(&[n, t, h, w], -0.05, 0.05, seed + 1);
    let pred = Tensor::from_vec(lq.shape().to_vec(), lq.data().iter().zip(noise.data()).map(|(a, b)| a + b).collect());
    ClipBatch {
        lq,
        pred,
        mv: uniform(&[n, 2 * t, h, w], -0.5, 0.5, seed + 2),
        residual: uniform(&[n, 1, h, w], -0.1, 0.1, seed + 3),
        gt: uniform(&[n, 1, h, w], 0.0, 1.0, seed + 4),
        search_range: 8.0,
    }
}

/// Relative L2 error between the analytic gradient of
/// `sum(f(params, inputs) · probe)` and central differences, over every
/// input and the listed parameters. At most `max_per` entries of each
/// tensor are probed.
pub fn grad_error(
    store: &ParamStore<f64>,
    params: &[ParamId],
    inputs: &[Tensor<f64>],
    max_per: usize,
    f: impl Fn(&Bound<f64>, &[Var<f64>]) -> Var<f64>,
) -> f64 {
    let eval = |store: &ParamStore<f64>, ins: &[Tensor<f64>], probe: Option<&Tensor<f64>>| -> (Tensor<f64>, f64) {
        let g = Graph::inference();
        let b = Bound::new(&g, store);
        let vars: Vec<_> = ins.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&b, &vars).value().clone();
        let s = probe.map_or(0.0, |p| out.data().iter().zip(p.data()).map(|(a, b)| a * b).sum());
        (out, s)
    };
    let (out, _) = eval(store, inputs, None);
    let probe = randn(out.shape(), 4242);

    let g = Graph::new();
    let b = Bound::new(&g, store);
    let vars: Vec<_> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let param_vars: Vec<_> = params.iter().map(|&id| b.p(id)).collect();
    let out = f(&b, &vars);
    let loss = g.sum_all(&g.mul(&out, &g.constant(probe.clone())));
    let grads = g.backward(&loss);

    let h = 1e-6;
    let mut pick = rng(7);
    let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
    let mut accumulate = |analytic: Option<&Tensor<f64>>, numel: usize, perturb: &dyn Fn(usize, f64) -> f64| {
        let idx: Vec<usize> = if numel <= max_per { (0..numel).collect() } else { sample(&mut pick, numel, max_per).into_vec() };
        for j in idx {
            let numeric = (perturb(j, h) - perturb(j, -h)) / (2.0 * h);
            let a = analytic.map_or(0.0, |t| t.data()[j]);
            diff2 += (a - numeric).powi(2);
            a2 += a * a;
            n2 += numeric * numeric;
        }
    };
    for (i, var) in vars.iter().enumerate() {
        accumulate(grads.get(var), inputs[i].numel(), &|j, d| {
            let mut ins = inputs.to_vec();
            ins[i].data_mut()[j] += d;
            eval(store, &ins, Some(&probe)).1
        });
    }
    for (k, var) in param_vars.iter().enumerate() {
        let id = params[k];
        accumulate(grads.get(var), store.get(id).numel(), &|j, d| {
            let mut s = store.clone();
            s.get_mut(id).data_mut()[j] += d;
            eval(&s, inputs, Some(&probe)).1
        });
    }
    assert!(n2 > 0.0, "degenerate probe: zero numeric gradient");
    diff2.sqrt() / a2.sqrt().max(n2.sqrt())
}

/// Every parameter whose name starts with `prefix`.
pub fn params_with_prefix<F: cpga_tensor::Float>(store: &ParamStore<F>, prefix: &str) -> Vec<ParamId> {
    store.ids().filter(|&id| store.name(id).starts_with(prefix)).collect()
}

/// Synthetic sequences compressed at QP 37 with 16×16 blocks.
pub fn toy_sequences(count: usize, width: usize, height: usize, frames: usize, seed: u64) -> Vec<cpga::data::PairedSequence> {
    let config = cpga::codec::CodecConfig::new(16, 8, 37).unwrap();
    (0..count as u64)
        .map(|i| {
            let raw = cpga::synth::moving_sequence(width, height, frames, seed + i);
            let enc = cpga::codec::encode(&raw, &config).unwrap();
            cpga::data::PairedSequence::new(raw, enc).unwrap()
        })
        .collect()
}

/// Per-pixel loop PSNR.
pub fn psnr_oracle(a: &[u8], b: &[u8]) -> f64 {
    let mut sum = 0.0;
    for i in 0..a.len() {
        let d = a[i] as f64 - b[i] as f64;
        sum += d * d;
    }
    10.0 * (65025.0 / (sum / a.len() as f64)).log10()
}

/// SSIM with a full 2-D Gaussian window evaluated at every valid position.
pub fn ssim_oracle(a: &[u8], b: &[u8], w: usize, h: usize) -> f64 {
    let mut win = [[0.0f64; 11]; 11];
    let mut total = 0.0;
    for (y, row) in win.iter_mut().enumerate() {
        for (x, v) in row.iter_mut().enumerate() {
            let (dy, dx) = (y as f64 - 5.0, x as f64 - 5.0);
            *v = (-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    let (c1, c2) = ((0.01f64 * 255.0).powi(2), (0.03f64 * 255.0).powi(2));
    let mut acc = 0.0;
    let mut count = 0;
    for oy in 0..=h - 11 {
        for ox in 0..=w - 11 {
            let (mut ma, mut mb) = (0.0, 0.0);
            for y in 0..11 {
                for x in 0..11 {
                    let k = win[y][x] / total;
                    ma += k * a[(oy + y) * w + ox + x] as f64;
                    mb += k * b[(oy + y) * w + ox + x] as f64;
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for y in 0..11 {
                for x in 0..11 {
                    let k = win[y][x] / total;
                    let (p, q) = (a[(oy + y) * w + ox + x] as f64 - ma, b[(oy + y) * w + ox + x] as f64 - mb);
                    va += k * p * p;
                    vb += k * q * q;
                    cov += k * p * q;
                }
            }
            acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    acc / count as f64
}

/// 1×1 convolution at one pixel, by name from the store.
fn pointwise(store: &ParamStore<f64>, name: &str, x: &[f64]) -> Vec<f64> {
    let w = store.get(store.find(&format!("{name}.weight")).unwrap());
    let b = store.get(store.find(&format!("{name}.bias")).unwrap());
    let (co, ci) = (w.shape()[0], w.shape()[1]);
    assert_eq!(ci, x.len());
    (0..co).map(|o| b.data()[o] + (0..ci).map(|i| w.data()[o * ci + i] * x[i]).sum::<f64>()).collect()
}

fn pixel(t: &Tensor<f64>, idx: usize) -> Vec<f64> {
    let (_, c, h, w) = t.dims4();
    (0..c).map(|ch| t.data()[ch * h * w + idx]).collect()
}

/// Explicit double loop over all position pairs.
pub fn nlau_oracle(store: &ParamStore<f64>, unit: &str, f: &Tensor<f64>, r: &Tensor<f64>) -> Tensor<f64> {
    let (_, c, h, w) = f.dims4();
    let l = h * w;
    let name = |s: &str| format!("{unit}.{s}");
    let mut q = Vec::new();
    let mut k = Vec::new();
    let mut v = Vec::new();
    for i in 0..l {
        let mut fr = pixel(f, i);
        fr.extend(pixel(r, i));
        let guide = pointwise(store, &name("guide"), &fr);
        q.push(pointwise(store, &name("query"), &guide));
        k.push(pointwise(store, &name("key"), &guide));
        v.push(pointwise(store, &name("value"), &pixel(f, i)));
    }
    let d = q[0].len();
    let mut out = vec![0.0; c * l];
    for i in 0..l {
        let logits: Vec<f64> = (0..l).map(|j| (0..d).map(|e| q[i][e] * k[j][e]).sum::<f64>() / (d as f64).sqrt()).collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|x| (x - m).exp()).sum();
        let mut y = vec![0.0; c];
        for j in 0..l {
            let a = (logits[j] - m).exp() / z;
            for ch in 0..c {
                y[ch] += a * v[j][ch];
            }
        }
        let s = pointwise(store, &name("out"), &y);
        for ch in 0..c {
            out[ch * l + i] = s[ch];
        }
    }
    Tensor::from_vec(vec![1, c, h, w], out)
}

/// Exhaustive search written without clamped loop bounds: every candidate in
/// the square is visited and out-of-frame ones are skipped.
pub fn brute_force(cur: &cpga::codec::Plane<u8>, reference: &cpga::codec::Plane<u8>, x: usize, y: usize, b: usize, r: i32) -> (i32, i32, u32) {
    let mut best: Option<(u32, i32, i32, i32)> = None;
    for dy in -r..=r {
        for dx in -r..=r {
            let (rx, ry) = (x as i32 + dx, y as i32 + dy);
            if rx < 0 || ry < 0 || rx + b as i32 > reference.width() as i32 || ry + b as i32 > reference.height() as i32 {
                continue;
            }
            let mut sad = 0u32;
            for j in 0..b {
                for i in 0..b {
                    let a = cur.get(x + i, y + j) as i32;
                    let c = reference.get(rx as usize + i, ry as usize + j) as i32;
                    sad += (a - c).unsigned_abs();
                }
            }
            let key = (sad, dx.abs() + dy.abs(), dy, dx);
            if best.is_none_or(|k| key < k) {
                best = Some(key);
            }
        }
    }
    let (sad, _, dy, dx) = best.unwrap();
    (dx, dy, sad)
}
