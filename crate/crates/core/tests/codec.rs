mod common;

use common::brute_force;
use cpga::codec::vcpf::{self, container_len};
use cpga::codec::{
    block_motion_search, encode, encode_sequence, encode_sequence_with_threads, pad_to_block_grid, BlockSize, CodecConfig,
    LumaSequence, Plane, Qp,
};
use cpga::synth::moving_sequence;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn noise_plane(w: usize, h: usize, rng: &mut ChaCha8Rng) -> Plane<u8> {
    let data = (0..w * h).map(|_| rng.random::<u8>()).collect();
    Plane::new(w, h, data).unwrap()
}

#[test]
fn motion_search_matches_brute_force_on_random_frames() {
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let reference = noise_plane(64, 64, &mut rng);
        // mostly a displaced copy with a sprinkle of noise so the optimum is
        // not always unique
        let (sx, sy) = (rng.random_range(-6..=6), rng.random_range(-6..=6));
        let cur = Plane::from_fn(64, 64, |x, y| {
            let rx = (x as i32 + sx).clamp(0, 63) as usize;
            let ry = (y as i32 + sy).clamp(0, 63) as usize;
            reference.get(rx, ry) / 4 * 4
        });
        let b = if seed % 2 == 0 { 16 } else { 8 };
        for by in (0..64).step_by(b) {
            for bx in (0..64).step_by(b) {
                let m = block_motion_search(&cur, &reference, bx, by, b, 8);
                assert_eq!((m.dx, m.dy, m.sad), brute_force(&cur, &reference, bx, by, b, 8), "seed {seed} block ({bx},{by})");
            }
        }
    }
}

#[test]
fn motion_search_recovers_a_known_shift() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let reference = noise_plane(64, 64, &mut rng);
    let cur = Plane::from_fn(64, 64, |x, y| reference.get((x + 3).min(63), (y as i32 - 2).max(0) as usize));
    for (bx, by) in [(16, 16), (32, 16), (16, 32), (32, 32)] {
        let m = block_motion_search(&cur, &reference, bx, by, 16, 8);
        assert_eq!((m.dx, m.dy, m.sad), (3, -2, 0));
    }
}

#[test]
fn static_scene_gives_zero_motion() {
    let seq = moving_sequence(64, 48, 1, 3);
    let frames = vec![seq.frame(0).clone(); 3];
    let (_, priors) = encode_sequence(&LumaSequence::new(frames).unwrap(), &CodecConfig::default()).unwrap();
    assert!(priors.frames.iter().all(|f| f.mv.is_zero()));
}

#[test]
fn decoder_identity_and_half_step_bound() {
    for (seed, qp) in (0..4).zip(Qp::ALL) {
        let raw = moving_sequence(60, 50, 5, seed);
        let cfg = CodecConfig { block: BlockSize::B16, search_range: 8, qp };
        let enc = encode(&raw, &cfg).unwrap();
        let (padded, _) = pad_to_block_grid(&raw, cfg.block).unwrap();
        let half = (qp.step() + 1) / 2;
        for (t, fp) in enc.priors.frames.iter().enumerate() {
            assert_eq!(&fp.reconstruct(), enc.lq.frame(t), "frame {t}");
            for ((&x, &p), &rh) in padded.frame(t).data().iter().zip(fp.predictive.data()).zip(fp.residual.data()) {
                let r = x as i32 - p as i32;
                assert!((r - rh as i32).abs() <= half, "r={r} r^={rh} step {}", qp.step());
                assert!(rh as i32 % qp.step() == 0 || rh.abs() == 255, "r^={rh} not a multiple of {}", qp.step());
            }
        }
    }
}

#[test]
fn quantizer_step_table_matches_power_law() {
    for qp in Qp::ALL {
        let expected = 2f64.powf((qp.value() as f64 - 4.0) / 6.0).round() as i32;
        assert_eq!(qp.step(), expected, "qp {}", qp.value());
    }
}

#[test]
fn encoding_is_deterministic_and_thread_invariant() {
    let raw = moving_sequence(64, 64, 4, 11);
    let cfg = CodecConfig::new(8, 8, 27).unwrap();
    let a = vcpf::to_bytes(&encode(&raw, &cfg).unwrap()).unwrap();
    let b = vcpf::to_bytes(&encode(&raw, &cfg).unwrap()).unwrap();
    assert_eq!(a, b);
    let serial = encode_sequence(&raw, &cfg).unwrap();
    for threads in [1, 2, 4] {
        assert_eq!(encode_sequence_with_threads(&raw, &cfg, threads).unwrap(), serial);
    }
}

fn mean_psnr(a: &LumaSequence, b: &LumaSequence) -> f64 {
    let total: f64 = a
        .frames()
        .iter()
        .zip(b.frames())
        .map(|(x, y)| {
            let mse = x.data().iter().zip(y.data()).map(|(&p, &q)| (p as f64 - q as f64).powi(2)).sum::<f64>()
                / x.data().len() as f64;
            10.0 * (255.0f64 * 255.0 / mse.max(1e-12)).log10()
        })
        .sum();
    total / a.len() as f64
}

#[test]
fn quality_degrades_monotonically_with_qp() {
    for seed in [1, 2, 3] {
        let raw = moving_sequence(64, 64, 6, seed);
        let psnr: Vec<f64> = Qp::ALL
            .iter()
            .map(|&qp| {
                let enc = encode(&raw, &CodecConfig { block: BlockSize::B16, search_range: 8, qp }).unwrap();
                mean_psnr(&enc.lq, &raw)
            })
            .collect();
        assert!(psnr.windows(2).all(|w| w[0] >= w[1]), "seed {seed}: {psnr:?}");
    }
}

#[test]
fn container_size_follows_layout() {
    let raw = moving_sequence(64, 64, 7, 0);
    let enc = encode(&raw, &CodecConfig::default()).unwrap();
    let bytes = vcpf::to_bytes(&enc).unwrap();
    let per_frame = 1 + 16 * 2 * 2 + 4096 + 8192 + 4096;
    assert_eq!(bytes.len(), 19 + 7 * per_frame);
    assert_eq!(bytes.len(), container_len(64, 64, 7, 16));
}

#[test]
fn file_round_trip_keeps_original_dims() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("clip.vcpf");
    let raw = moving_sequence(60, 50, 3, 4);
    let enc = encode(&raw, &CodecConfig::new(16, 4, 32).unwrap()).unwrap();
    vcpf::write_vcpf(&enc, &path).unwrap();
    let back = vcpf::read_vcpf(&path).unwrap();
    assert_eq!(back, enc);
    assert_eq!((back.orig.width, back.orig.height), (60, 50));
    assert_eq!((back.lq.width(), back.lq.height()), (64, 64));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn decoder_identity_holds_for_arbitrary_content(
        seed in any::<u64>(),
        qp in prop::sample::select(Qp::ALL.to_vec()),
        block in prop::sample::select(vec![8u32, 16]),
        range in 1u32..=12,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames = (0..3).map(|_| noise_plane(32, 32, &mut rng)).collect();
        let seq = LumaSequence::new(frames).unwrap();
        let cfg = CodecConfig::new(block, range, qp.value() as u32).unwrap();
        let (lq, priors) = encode_sequence(&seq, &cfg).unwrap();
        for (t, fp) in priors.frames.iter().enumerate() {
            prop_assert_eq!(&fp.reconstruct(), lq.frame(t));
            for v in fp.mv.vectors() {
                prop_assert!(v.dx.unsigned_abs() as u32 <= range && v.dy.unsigned_abs() as u32 <= range);
            }
        }
        let enc = cpga::codec::Encoded {
            config: cfg,
            orig: cpga::codec::OrigDims { width: 32, height: 32 },
            lq,
            priors,
        };
        prop_assert_eq!(vcpf::from_bytes(&vcpf::to_bytes(&enc).unwrap()).unwrap(), enc);
    }

    #[test]
    fn padding_replicates_edges(w in 1usize..40, h in 1usize..40, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let seq = LumaSequence::new(vec![noise_plane(w, h, &mut rng)]).unwrap();
        let (padded, orig) = pad_to_block_grid(&seq, BlockSize::B8).unwrap();
        prop_assert_eq!((orig.width, orig.height), (w, h));
        prop_assert_eq!(padded.width(), w.div_ceil(8) * 8);
        prop_assert_eq!(padded.height(), h.div_ceil(8) * 8);
        let (src, dst) = (seq.frame(0), padded.frame(0));
        for y in 0..dst.height() {
            for x in 0..dst.width() {
                prop_assert_eq!(dst.get(x, y), src.get(x.min(w - 1), y.min(h - 1)));
            }
        }
    }
}
