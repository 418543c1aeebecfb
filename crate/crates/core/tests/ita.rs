mod common;

use common::{grad_error, params_with_prefix, random_clip, randn, small_config, uniform};
use cpga::data::flip;
use cpga::model::ita::{FrameFeatures, FrameSource};
use cpga::model::{Cpga, GateAxis, ModelConfig, ModelError};
use cpga_tensor::{Bound, ConvSpec, Graph, Padding, Tensor, Var};
use proptest::prelude::*;

fn ramp(h: usize, w: usize) -> Tensor<f64> {
    Tensor::from_vec(vec![1, 1, h, w], (0..h * w).map(|i| (i % w) as f64).collect())
}

fn constant_flow(h: usize, w: usize, dx: f64, dy: f64) -> Tensor<f64> {
    let mut data = vec![dx; h * w];
    data.extend(std::iter::repeat_n(dy, h * w));
    Tensor::from_vec(vec![1, 2, h, w], data)
}

fn warp(feat: &Tensor<f64>, flow: &Tensor<f64>) -> Tensor<f64> {
    let g = Graph::inference();
    g.warp(&g.constant(feat.clone()), &g.constant(flow.clone())).value().clone()
}

#[test]
fn zero_motion_warp_is_identity() {
    let f = randn(&[2, 3, 9, 7], 1);
    let out = warp(&f, &Tensor::zeros(vec![2, 2, 9, 7]));
    assert_eq!(out.data(), f.data());
}

#[test]
fn integer_motion_matches_index_oracle() {
    let (h, w) = (5, 8);
    let out = warp(&ramp(h, w), &constant_flow(h, w, 1.0, 0.0));
    for y in 0..h {
        for x in 0..w {
            assert_eq!(out.at4(0, 0, y, x), (x + 1).min(w - 1) as f64);
        }
    }
}

#[test]
fn half_pixel_motion_interpolates_bilinearly() {
    let (h, w) = (5, 8);
    let out = warp(&ramp(h, w), &constant_flow(h, w, 0.5, 0.0));
    for y in 0..h {
        for x in 0..w - 1 {
            assert!((out.at4(0, 0, y, x) - (x as f64 + 0.5)).abs() < 1e-6);
        }
    }
}

#[test]
fn warp_commutes_with_horizontal_flip_of_features_and_motion() {
    let (h, w) = (6, 10);
    let f = randn(&[1, 2, h, w], 3);
    let flow = uniform(&[1, 2, h, w], -2.5, 2.5, 4);
    let flip_t = |t: &Tensor<f64>, negate_x: bool| {
        let (n, c, h, w) = t.dims4();
        let mut out = t.clone();
        for b in 0..n {
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        let v = t.at4(b, ch, y, w - 1 - x);
                        out.data_mut()[((b * c + ch) * h + y) * w + x] = if negate_x && ch == 0 { -v } else { v };
                    }
                }
            }
        }
        out
    };
    let direct = flip_t(&warp(&f, &flow), false);
    let flipped = warp(&flip_t(&f, false), &flip_t(&flow, true));
    assert!(direct.max_abs_diff(&flipped) < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn warp_is_linear_in_the_feature(seed in 0u64..1000, a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let f = randn(&[1, 2, 7, 9], seed);
        let g2 = randn(&[1, 2, 7, 9], seed + 1);
        let flow = uniform(&[1, 2, 7, 9], -3.0, 3.0, seed + 2);
        let mix = Tensor::from_vec(f.shape().to_vec(), f.data().iter().zip(g2.data()).map(|(x, y)| a * x + b * y).collect());
        let lhs = warp(&mix, &flow);
        let (wf, wg) = (warp(&f, &flow), warp(&g2, &flow));
        for i in 0..lhs.numel() {
            prop_assert!((lhs.data()[i] - (a * wf.data()[i] + b * wg.data()[i])).abs() < 1e-6);
        }
    }

    #[test]
    fn gates_sum_to_one_per_pixel(seed in 0u64..1000, temporal in any::<bool>()) {
        let gate_axis = if temporal { GateAxis::Temporal } else { GateAxis::Channel };
        let cfg = ModelConfig { gate_axis, init_seed: seed, ..small_config(4) };
        let model = Cpga::<f64>::new(cfg.clone()).unwrap();
        let clip = random_clip(&cfg, 1, 8, 8, seed);
        let g = Graph::inference();
        let p = Bound::new(&g, &model.params);
        let lq = model.ita.extract_features(&p, &g.constant(clip.lq.clone()), FrameSource::Lq).unwrap();
        let pred = model.ita.extract_features(&p, &g.constant(clip.pred.clone()), FrameSource::Pred).unwrap();
        let aligned = model.ita.build_aligned(&p, &lq.frames, &g.constant(clip.mv.clone()), 8.0);
        let gates = model.ita.gates(&p, &lq.frames, &pred.frames, &aligned);
        let [_, t, c, h, w] = *gates.shape() else { panic!("gate rank") };
        let d = gates.value().data();
        let (outer, inner, plane) = if temporal { (c, t, h * w) } else { (t, c, h * w) };
        for o in 0..outer {
            for px in 0..plane {
                let s: f64 = (0..inner)
                    .map(|i| {
                        let (fi, ci) = if temporal { (i, o) } else { (o, i) };
                        d[(fi * c + ci) * plane + px]
                    })
                    .sum();
                prop_assert!((s - 1.0).abs() < 1e-5);
            }
        }
    }
}

fn features_from(frames: &[Tensor<f64>], g: &Graph<f64>) -> FrameFeatures<f64> {
    let vars: Vec<Var<f64>> = frames.iter().map(|t| g.constant(t.clone())).collect();
    let refs: Vec<&Var<f64>> = vars.iter().collect();
    FrameFeatures { stack: g.concat_channels(&refs), frames: vars }
}

#[test]
fn zero_features_annihilate_the_compensated_stack() {
    let cfg = small_config(4);
    let model = Cpga::<f64>::new(cfg.clone()).unwrap();
    let g = Graph::inference();
    let p = Bound::new(&g, &model.params);
    let zeros: Vec<_> = (0..7).map(|_| Tensor::zeros(vec![1, 4, 4, 4])).collect();
    let others: Vec<Var<f64>> = (0..7).map(|i| g.constant(randn(&[1, 4, 4, 4], 10 + i))).collect();
    let out = model.ita.correlate_and_gate(&p, &features_from(&zeros, &g), &others, &others);
    assert!(out.value().data().iter().all(|&v| v == 0.0));
}

#[test]
fn equal_logits_split_evenly_over_two_channels() {
    let cfg = ModelConfig { channels: 2, shift_ratio: 0.0, ca_reduction: 1, nlau_reduction: 1, ..ModelConfig::default() };
    let model = Cpga::<f64>::new(cfg).unwrap();
    let g = Graph::inference();
    let p = Bound::new(&g, &model.params);
    // A zero centre feature makes every correlation logit zero.
    let frames: Vec<Tensor<f64>> = (0..7).map(|i| if i == 3 { Tensor::zeros(vec![1, 2, 3, 3]) } else { randn(&[1, 2, 3, 3], 20 + i) }).collect();
    let others: Vec<Var<f64>> = (0..7).map(|i| g.constant(randn(&[1, 2, 3, 3], 40 + i))).collect();
    let lq = features_from(&frames, &g);
    let gates = model.ita.gates(&p, &lq.frames, &others, &others);
    assert!(gates.value().data().iter().all(|&v| (v - 0.5).abs() < 1e-12));
    let out = model.ita.correlate_and_gate(&p, &lq, &others, &others);
    for (i, f) in frames.iter().enumerate() {
        let got = out.value().narrow_channels(2 * i, 2);
        assert!(got.max_abs_diff(&f.map(|v| v / 2.0)) < 1e-12);
    }
}

#[test]
fn feature_extraction_shares_weights_across_frames() {
    let cfg = small_config(4);
    let model = Cpga::<f64>::new(cfg.clone()).unwrap();
    let g = Graph::inference();
    let p = Bound::new(&g, &model.params);
    let frame = uniform(&[1, 1, 8, 8], 0.0, 1.0, 5);
    let parts: Vec<&Tensor<f64>> = (0..7).map(|_| &frame).collect();
    let planes = Tensor::cat_channels(&parts);
    let feats = model.ita.extract_features(&p, &g.constant(planes.clone()), FrameSource::Lq).unwrap();
    assert_eq!(feats.frames.len(), 7);
    assert_eq!(feats.frames[0].shape(), &[1, 4, 8, 8]);
    for f in &feats.frames[1..] {
        assert_eq!(f.value().data(), feats.frames[0].value().data());
    }
    let too_few = planes.narrow_channels(0, 5);
    assert!(matches!(model.ita.extract_features(&p, &g.constant(too_few), FrameSource::Lq), Err(ModelError::Shape(_))));
}

#[test]
fn aligned_features_reuse_the_first_frame_and_track_static_scenes() {
    let cfg = small_config(4);
    let model = Cpga::<f64>::new(cfg.clone()).unwrap();
    let g = Graph::inference();
    let p = Bound::new(&g, &model.params);
    let frames: Vec<Tensor<f64>> = (0..7).map(|i| randn(&[1, 4, 6, 6], 60 + i)).collect();
    let lq = features_from(&frames, &g);
    let aligned = model.ita.build_aligned(&p, &lq.frames, &g.constant(uniform(&[1, 14, 6, 6], -1.0, 1.0, 1)), 8.0);
    assert_eq!(aligned.len(), 7);
    assert_eq!(aligned[0].value().data(), frames[0].data());

    let same: Vec<Tensor<f64>> = (0..7).map(|_| frames[0].clone()).collect();
    let lq = features_from(&same, &g);
    let aligned = model.ita.build_aligned(&p, &lq.frames, &g.constant(Tensor::zeros(vec![1, 14, 6, 6])), 8.0);
    for a in &aligned {
        assert_eq!(a.value().data(), frames[0].data());
    }
}

#[test]
fn fusion_output_shape_and_divisibility() {
    let cfg = small_config(4);
    let model = Cpga::<f64>::new(cfg).unwrap();
    let g = Graph::inference();
    let p = Bound::new(&g, &model.params);
    let out = model.ita.fuse(&p, &g.constant(randn(&[1, 28, 16, 12], 1))).unwrap();
    assert_eq!(out.shape(), &[1, 4, 16, 12]);
    assert!(matches!(model.ita.fuse(&p, &g.constant(randn(&[1, 28, 10, 12], 1))), Err(ModelError::Shape(_))));
}

#[test]
fn fusion_gradients_match_finite_differences() {
    let model = Cpga::<f64>::new(small_config(4)).unwrap();
    let params = params_with_prefix(&model.params, "ita.fuse.");
    let err = grad_error(&model.params, &params, &[randn(&[1, 28, 8, 8], 2)], 48, |p, x| model.ita.fuse(p, &x[0]).unwrap());
    assert!(err < 1e-3, "relative error {err}");
}

/// Offsets kept away from integer positions so central differences never
/// straddle a bilinear kink.
fn smooth_offsets(shape: &[usize], seed: u64) -> Tensor<f64> {
    uniform(shape, -1.5, 1.5, seed).map(|v| {
        let f = v - v.floor();
        if (0.2..0.8).contains(&f) { v } else { v.floor() + 0.5 }
    })
}

#[test]
fn deformable_gradients_match_finite_differences() {
    let model = Cpga::<f64>::new(small_config(4)).unwrap();
    let (w, b) = model.ita.dcn_params();
    let inputs = [randn(&[1, 4, 8, 8], 3), smooth_offsets(&[1, 18, 8, 8], 4)];
    let err = grad_error(&model.params, &[w, b], &inputs, 64, |p, x| model.ita.deform_with_offsets(p, &x[0], &x[1]));
    assert!(err < 1e-3, "relative error {err}");
}

#[test]
fn zero_offsets_reduce_to_replicate_padded_convolution() {
    let model = Cpga::<f64>::new(small_config(4)).unwrap();
    let g = Graph::inference();
    let p = Bound::new(&g, &model.params);
    let x = g.constant(randn(&[2, 4, 7, 9], 5));
    let deform = model.ita.deform_with_offsets(&p, &x, &g.constant(Tensor::zeros(vec![2, 18, 7, 9])));
    let (w, b) = model.ita.dcn_params();
    let conv = g.conv2d(&x, &p.p(w), Some(&p.p(b)), ConvSpec { stride: 1, pad: 1, padding: Padding::Replicate });
    assert!(deform.value().max_abs_diff(conv.value()) < 1e-12);
}

#[test]
fn constant_input_gives_constant_aggregation() {
    let model = Cpga::<f64>::new(small_config(4)).unwrap();
    let g = Graph::inference();
    let p = Bound::new(&g, &model.params);
    let x = g.constant(Tensor::full(vec![1, 4, 8, 8], 0.3));
    let offsets = g.constant(Tensor::full(vec![1, 18, 8, 8], 0.37));
    let out = model.ita.deform_with_offsets(&p, &x, &offsets);
    for c in 0..4 {
        let plane = out.value().narrow_channels(c, 1);
        let v0 = plane.data()[0];
        assert!(plane.data().iter().all(|v| (v - v0).abs() < 1e-12));
    }
}

#[test]
fn every_parameter_and_input_receives_gradient() {
    let cfg = small_config(4);
    let model = Cpga::<f64>::new(cfg.clone()).unwrap();
    let clip = random_clip(&cfg, 1, 8, 8, 9);
    let g = Graph::new();
    let p = Bound::new(&g, &model.params);
    let (lq, pred, mv) = (g.leaf(clip.lq.clone()), g.leaf(clip.pred.clone()), g.leaf(clip.mv.clone()));
    let ids = params_with_prefix(&model.params, "ita.");
    let vars: Vec<_> = ids.iter().map(|&id| p.p(id)).collect();
    let out = model.ita.forward(&p, &lq, &pred, &mv, 8.0).unwrap();
    let loss = g.sum_all(&g.mul(&out, &g.constant(randn(out.shape(), 11))));
    let grads = g.backward(&loss);
    for (id, v) in ids.iter().zip(&vars) {
        let gr = grads.get(v).unwrap_or_else(|| panic!("{} has no gradient", model.params.name(*id)));
        assert!(gr.data().iter().any(|&x| x != 0.0), "{} gradient is zero", model.params.name(*id));
    }
    for (name, v, t) in [("lq", &lq, 7), ("pred", &pred, 7), ("mv", &mv, 14)] {
        let gr = grads.get(v).unwrap();
        for c in 0..t {
            // The first frame's motion field is never used.
            if name == "mv" && c < 2 {
                continue;
            }
            assert!(gr.narrow_channels(c, 1).data().iter().any(|&x| x != 0.0), "{name} plane {c} gets no gradient");
        }
    }
}

#[test]
fn horizontal_flip_keeps_motion_consistent_with_content() {
    // A flipped clip's motion must point at the mirrored source pixel.
    let cfg = small_config(4);
    let clip = random_clip(&cfg, 1, 8, 8, 12).cast::<f32>();
    let twice = flip(&flip(&clip, true), true);
    assert_eq!(twice, clip);
    let once = flip(&clip, true);
    let (_, _, _, w) = clip.mv.dims4();
    assert_eq!(once.mv.at4(0, 2, 1, 0), -clip.mv.at4(0, 2, 1, w - 1));
    assert_eq!(once.mv.at4(0, 3, 1, 0), clip.mv.at4(0, 3, 1, w - 1));
}
