mod common;

use common::{grad_error, nlau_oracle, params_with_prefix, randn, small_config, uniform};
use cpga::model::{Cpga, ModelError};
use cpga_tensor::{Bound, Graph, Tensor};
use proptest::prelude::*;

#[test]
fn nlau_matches_quadratic_loop_oracle() {
    let model = Cpga::<f64>::new(small_config(8)).unwrap();
    let g = Graph::inference();
    let p = Bound::new(&g, &model.params);
    for (side, scale) in [(4, 0), (8, 1), (6, 2)] {
        let f = randn(&[1, 8, side, side], side as u64);
        let r = randn(&[1, 8, side, side], 100 + side as u64);
        let got = model.mna.unit(scale).spatial(&p, &g.constant(f.clone()), &g.constant(r.clone()), None);
        let want = nlau_oracle(&model.params, &format!("mna.nlau{scale}"), &f, &r);
        assert!(got.value().max_abs_diff(&want) < 1e-6, "{side}x{side}: {}", got.value().max_abs_diff(&want));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn attention_rows_sum_to_one_at_every_scale(seed in 0u64..1000) {
        let cfg = cpga::model::ModelConfig { init_seed: seed, ..small_config(8) };
        let model = Cpga::<f64>::new(cfg).unwrap();
        let g = Graph::inference();
        let p = Bound::new(&g, &model.params);
        let pyr = model.mna.build_pyramid(&p, &g.constant(randn(&[1, 8, 16, 16], seed)), &g.constant(uniform(&[1, 1, 16, 16], -0.2, 0.2, seed + 1))).unwrap();
        for s in 0..3 {
            for map in model.mna.unit(s).attention(&p, &pyr.features[s], &pyr.residuals[s], None) {
                let l = map.shape()[0];
                for row in map.data().chunks(l) {
                    prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-5);
                }
            }
        }
    }
}

#[test]
fn constant_inputs_give_uniform_attention() {
    let model = Cpga::<f64>::new(small_config(8)).unwrap();
    let g = Graph::inference();
    let p = Bound::new(&g, &model.params);
    let f = g.constant(Tensor::full(vec![1, 8, 4, 6], 0.7));
    let r = g.constant(Tensor::full(vec![1, 8, 4, 6], -0.2));
    let maps = model.mna.unit(0).attention(&p, &f, &r, None);
    assert!(maps[0].data().iter().all(|&a| (a - 1.0 / 24.0).abs() < 1e-12));
    let s = model.mna.unit(0).spatial(&p, &f, &r, None);
    for c in 0..8 {
        let plane = s.value().narrow_channels(c, 1);
        assert!(plane.data().iter().all(|v| (v - plane.data()[0]).abs() < 1e-12));
    }
}

#[test]
fn pyramid_halves_per_level_and_rejects_indivisible_input() {
    let model = Cpga::<f64>::new(small_config(4)).unwrap();
    let g = Graph::inference();
    let p = Bound::new(&g, &model.params);
    let pyr = model.mna.build_pyramid(&p, &g.constant(randn(&[1, 4, 64, 64], 1)), &g.constant(Tensor::zeros(vec![1, 1, 64, 64]))).unwrap();
    let sides: Vec<_> = pyr.features.iter().map(|f| f.shape()[2]).collect();
    assert_eq!(sides, [64, 32, 16]);
    assert_eq!(pyr.residuals.iter().map(|r| r.shape().to_vec()).collect::<Vec<_>>(), [vec![1, 4, 64, 64], vec![1, 4, 32, 32], vec![1, 4, 16, 16]]);
    let out = model.mna.aggregate(&p, &pyr);
    assert_eq!(out.shape(), &[1, 4, 64, 64]);
    let odd = model.mna.build_pyramid(&p, &g.constant(randn(&[1, 4, 62, 64], 1)), &g.constant(Tensor::zeros(vec![1, 1, 62, 64])));
    assert!(matches!(odd, Err(ModelError::Shape(_))));
}

#[test]
fn single_window_matches_global_attention() {
    let model = Cpga::<f64>::new(small_config(4)).unwrap();
    let g = Graph::inference();
    let p = Bound::new(&g, &model.params);
    let pyr = model.mna.build_pyramid(&p, &g.constant(randn(&[1, 4, 16, 16], 2)), &g.constant(randn(&[1, 1, 16, 16], 3))).unwrap();
    let global = model.mna.aggregate_windowed(&p, &pyr, None);
    let windowed = model.mna.aggregate_windowed(&p, &pyr, Some(32));
    assert_eq!(global.value().data(), windowed.value().data());
    assert_eq!(model.mna.window_for(96, 96), None);
    assert_eq!(model.mna.window_for(240, 416), Some(32));
}

#[test]
fn module_gradients_match_finite_differences() {
    let model = Cpga::<f64>::new(small_config(4)).unwrap();
    let params = params_with_prefix(&model.params, "mna.");
    let inputs = [randn(&[1, 4, 16, 16], 4), uniform(&[1, 1, 16, 16], -0.3, 0.3, 5)];
    let err = grad_error(&model.params, &params, &inputs, 24, |p, x| model.mna.forward(p, &x[0], &x[1]).unwrap());
    assert!(err < 1e-3, "relative error {err}");
}

#[test]
fn residual_input_gradient_matches_finite_differences() {
    let model = Cpga::<f64>::new(small_config(4)).unwrap();
    let fta = randn(&[1, 4, 8, 8], 6);
    let err = grad_error(&model.params, &[], &[uniform(&[1, 1, 8, 8], -0.3, 0.3, 7)], 64, |p, x| {
        let f = p.graph().constant(fta.clone());
        model.mna.forward(p, &f, &x[0]).unwrap()
    });
    assert!(err < 1e-3, "relative error {err}");
}

#[test]
fn residual_guidance_is_live() {
    let model = Cpga::<f64>::new(small_config(8)).unwrap();
    let g = Graph::inference();
    let p = Bound::new(&g, &model.params);
    let f = g.constant(randn(&[1, 8, 16, 16], 8));
    let with = model.mna.forward(&p, &f, &g.constant(uniform(&[1, 1, 16, 16], -0.3, 0.3, 9))).unwrap();
    let without = model.mna.forward(&p, &f, &g.constant(Tensor::zeros(vec![1, 1, 16, 16]))).unwrap();
    assert!(with.value().max_abs_diff(without.value()) > 1e-4);
}

#[test]
fn coarsest_level_reaches_the_output() {
    let model = Cpga::<f64>::new(small_config(4)).unwrap();
    let g = Graph::new();
    let p = Bound::new(&g, &model.params);
    let mut pyr = model.mna.build_pyramid(&p, &g.constant(randn(&[1, 4, 16, 16], 10)), &g.constant(randn(&[1, 1, 16, 16], 11))).unwrap();
    let coarse = g.leaf(pyr.features[2].value().clone());
    pyr.features[2] = coarse.clone();
    let out = model.mna.aggregate(&p, &pyr);
    let loss = g.sum_all(&g.mul(&out, &g.constant(randn(out.shape(), 12))));
    let grads = g.backward(&loss);
    assert!(grads.get(&coarse).unwrap().data().iter().any(|&v| v != 0.0));
}
