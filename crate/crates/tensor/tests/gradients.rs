//! Finite-difference checks of every recorded op, in double precision.

use cpga_tensor::{ConvSpec, Graph, Padding, ShiftAxis, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Relative L2 error between analytic and central-difference gradients of
/// `sum(f(inputs) * probe)` with respect to every input.
fn grad_error(inputs: &[Tensor<f64>], f: impl Fn(&Graph<f64>, &[Var<f64>]) -> Var<f64>) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let probe = {
        let g = Graph::inference();
        let vars: Vec<_> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&g, &vars);
        Tensor::<f64>::randn(out.shape().to_vec(), 1.0, &mut rng)
    };
    let objective = |ins: &[Tensor<f64>]| -> f64 {
        let g = Graph::inference();
        let vars: Vec<_> = ins.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&g, &vars);
        out.value().data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
    };
    let g = Graph::new();
    let vars: Vec<_> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&g, &vars);
    let p = g.constant(probe.clone());
    let loss = g.sum_all(&g.mul(&out, &p));
    let grads = g.backward(&loss);

    let h = 1e-6;
    let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.get(var).cloned().unwrap_or_else(|| Tensor::zeros(inputs[i].shape().to_vec()));
        for j in 0..inputs[i].numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += h;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= h;
            let numeric = (objective(&plus) - objective(&minus)) / (2.0 * h);
            let a = analytic.data()[j];
            diff2 += (a - numeric).powi(2);
            a2 += a * a;
            n2 += numeric * numeric;
        }
    }
    assert!(n2 > 0.0, "degenerate probe: zero numeric gradient");
    diff2.sqrt() / a2.sqrt().max(n2.sqrt())
}

fn rnd(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::randn(shape.to_vec(), 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Offsets kept away from integers so finite differences never straddle a
/// bilinear kink.
fn offsets(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = Tensor::<f64>::uniform(shape.to_vec(), -1.5, 1.5, &mut rng);
    t.map(|v| {
        let f = v - v.floor();
        if f < 0.05 || f > 0.95 {
            v.floor() + 0.5
        } else {
            v
        }
    })
}

#[test]
fn conv2d_zero_and_replicate_padding() {
    for padding in [Padding::Zeros, Padding::Replicate] {
        for stride in [1, 2] {
            let spec = ConvSpec { stride, pad: 1, padding };
            let err = grad_error(&[rnd(&[2, 3, 6, 6], 1), rnd(&[4, 3, 3, 3], 2), rnd(&[4], 3)], |g, v| {
                g.conv2d(&v[0], &v[1], Some(&v[2]), spec)
            });
            assert!(err < 1e-6, "{padding:?} stride {stride}: {err}");
        }
    }
}

#[test]
fn pointwise_conv() {
    let err = grad_error(&[rnd(&[2, 5, 4, 3], 4), rnd(&[3, 5, 1, 1], 5)], |g, v| {
        g.conv2d(&v[0], &v[1], None, ConvSpec { stride: 1, pad: 0, padding: Padding::Zeros })
    });
    assert!(err < 1e-6, "{err}");
}

#[test]
fn transposed_conv_doubles_resolution() {
    let g = Graph::<f64>::inference();
    let y = g.conv_transpose2d(&g.constant(rnd(&[1, 2, 4, 5], 0)), &g.constant(rnd(&[2, 3, 3, 3], 1)), None, 2, 1, 1);
    assert_eq!(y.shape(), &[1, 3, 8, 10]);
    let err = grad_error(&[rnd(&[2, 3, 4, 4], 6), rnd(&[3, 2, 3, 3], 7), rnd(&[2], 8)], |g, v| {
        g.conv_transpose2d(&v[0], &v[1], Some(&v[2]), 2, 1, 1)
    });
    assert!(err < 1e-6, "{err}");
}

#[test]
fn transposed_conv_is_adjoint_of_strided_conv() {
    // <conv(x), y> == <x, conv_t(y)> for matching weights
    let x = rnd(&[1, 2, 8, 8], 10);
    let y = rnd(&[1, 3, 4, 4], 11);
    let w = rnd(&[3, 2, 3, 3], 12);
    let g = Graph::<f64>::inference();
    let cx = g.conv2d(&g.constant(x.clone()), &g.constant(w.clone()), None, ConvSpec::strided(3, 2));
    let ty = g.conv_transpose2d(&g.constant(y.clone()), &g.constant(w), None, 2, 1, 1);
    let lhs: f64 = cx.value().data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
    let rhs: f64 = x.data().iter().zip(ty.value().data()).map(|(a, b)| a * b).sum();
    assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
}

#[test]
fn warp_feature_and_flow() {
    let err = grad_error(&[rnd(&[1, 3, 6, 7], 13), offsets(&[1, 2, 6, 7], 14)], |g, v| g.warp(&v[0], &v[1]));
    assert!(err < 1e-6, "{err}");
}

#[test]
fn deformable_conv_all_inputs() {
    let err = grad_error(
        &[rnd(&[2, 2, 5, 5], 15), offsets(&[2, 18, 5, 5], 16), rnd(&[3, 2, 3, 3], 17), rnd(&[3], 18)],
        |g, v| g.deform_conv2d(&v[0], &v[1], &v[2], Some(&v[3])),
    );
    assert!(err < 1e-6, "{err}");
}

#[test]
fn attention_global_and_windowed() {
    for window in [None, Some(3)] {
        let err = grad_error(&[rnd(&[2, 2, 4, 5], 19), rnd(&[2, 2, 4, 5], 20), rnd(&[2, 3, 4, 5], 21)], |g, v| {
            g.spatial_attention(&v[0], &v[1], &v[2], 0.7, window)
        });
        assert!(err < 1e-6, "{window:?}: {err}");
    }
}

#[test]
fn inference_attention_matches_recorded_path() {
    let (q, k, v) = (rnd(&[1, 4, 9, 9], 1).cast::<f32>(), rnd(&[1, 4, 9, 9], 2).cast::<f32>(), rnd(&[1, 5, 9, 9], 3).cast::<f32>());
    let g = Graph::<f32>::new();
    let a = g.spatial_attention(&g.leaf(q.clone()), &g.leaf(k.clone()), &g.leaf(v.clone()), 0.5, None);
    let gi = Graph::<f32>::inference();
    let b = gi.spatial_attention(&gi.constant(q), &gi.constant(k), &gi.constant(v), 0.5, None);
    assert!(a.value().max_abs_diff(b.value()) < 1e-6);
}

#[test]
fn chunked_inference_attention_matches_recorded_path() {
    for window in [None, Some(24)] {
        let (q, k, v) = (rnd(&[2, 3, 64, 64], 4).cast::<f32>(), rnd(&[2, 3, 64, 64], 5).cast::<f32>(), rnd(&[2, 4, 64, 64], 6).cast::<f32>());
        let g = Graph::<f32>::new();
        let a = g.spatial_attention(&g.leaf(q.clone()), &g.leaf(k.clone()), &g.leaf(v.clone()), 0.6, window);
        let gi = Graph::<f32>::inference();
        let b = gi.spatial_attention(&gi.constant(q), &gi.constant(k), &gi.constant(v), 0.6, window);
        assert!(a.value().max_abs_diff(b.value()) < 1e-5, "{window:?}");
    }
}

#[test]
fn elementwise_and_reductions() {
    let err = grad_error(&[rnd(&[2, 3, 4, 4], 22), rnd(&[2, 3, 4, 4], 23)], |g, v| {
        let a = g.mul(&v[0], &v[1]);
        let b = g.sub(&a, &g.scale(&v[1], 0.3));
        let c = g.leaky_relu(&b, 0.1);
        let s = g.sigmoid(&g.mean_spatial(&c));
        g.add(&g.mul_channel(&c, &s), &v[0])
    });
    assert!(err < 1e-6, "{err}");
}

#[test]
fn softmax_concat_narrow_reshape() {
    let err = grad_error(&[rnd(&[2, 3, 3, 3], 24), rnd(&[2, 2, 3, 3], 25)], |g, v| {
        let cat = g.concat_channels(&[&v[0], &v[1]]);
        let sm = g.softmax(&cat, 1);
        let t = g.reshape(&g.narrow_channels(&sm, 1, 4), &[2, 2, 2, 3, 3]);
        let st = g.softmax(&t, 1);
        g.reshape(&st, &[2, 4, 3, 3])
    });
    assert!(err < 1e-6, "{err}");
}

#[test]
fn channel_shift_adjoint() {
    for axis in [ShiftAxis::Horizontal, ShiftAxis::Vertical] {
        let err = grad_error(&[rnd(&[1, 8, 6, 6], 26)], |g, v| g.channel_shift(&v[0], axis, 2, 4, 2));
        assert!(err < 1e-6, "{axis:?}: {err}");
    }
}

#[test]
fn charbonnier_loss() {
    let err = grad_error(&[rnd(&[1, 1, 5, 5], 27), rnd(&[1, 1, 5, 5], 28)], |g, v| g.charbonnier(&v[0], &v[1], 1e-3));
    assert!(err < 1e-6, "{err}");
}

