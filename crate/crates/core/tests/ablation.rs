mod common;

use common::toy_sequences;
use cpga::ablation::{mean_delta, run_ablation, summary, to_csv, variants};
use cpga::model::{ModelConfig, PriorFlags};
use cpga::train::{TrainConfig, TrainSet};

#[test]
fn variant_subsets_follow_the_allowed_priors() {
    let names = |f: PriorFlags| variants(f).into_iter().map(|(n, _)| n).collect::<Vec<_>>();
    assert_eq!(names(PriorFlags::ALL).len(), 7);
    assert_eq!(names(PriorFlags::NONE), ["Model-1"]);
    assert_eq!(names(PriorFlags { mv: true, pred: true, resid: false }), ["Model-1", "Model-2", "Model-3", "Model-5"]);
    assert_eq!(names(PriorFlags { mv: false, pred: true, resid: true }), ["Model-1", "Model-3", "Model-4", "Model-6"]);
}

#[test]
fn sweep_reports_one_row_per_variant_and_seed() {
    let seqs = toy_sequences(2, 16, 16, 3, 70);
    let train = TrainSet::new(seqs);
    let model = ModelConfig { channels: 8, shift_ratio: 0.25, ..ModelConfig::default() };
    let config = TrainConfig { batch: 1, crop: 16, max_iters: 2, lr: 1e-3, ..TrainConfig::desk() };
    let grid = variants(PriorFlags { mv: false, pred: false, resid: true });
    let mut seen = 0;
    let rows = run_ablation(&model, &config, &train, &[(0, 1), (1, 1)], &grid, &[0, 1], |_| seen += 1).unwrap();
    assert_eq!((rows.len(), seen), (4, 4));
    assert_eq!(rows.iter().map(|r| (r.variant.as_str(), r.seed)).collect::<Vec<_>>(), [("Model-1", 0), ("Model-1", 1), ("Model-4", 0), ("Model-4", 1)]);
    assert!(rows.iter().all(|r| r.final_loss.is_finite() && r.delta_psnr.is_finite() && r.params == rows[0].params));
    let m = mean_delta(&rows, "Model-4").unwrap();
    assert!((m - (rows[2].delta_psnr + rows[3].delta_psnr) / 2.0).abs() < 1e-12);
    assert_eq!(mean_delta(&rows, "Model-7"), None);
    let csv = to_csv(&rows);
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.lines().nth(3).unwrap().starts_with("Model-4,resid,0,"));
    assert_eq!(summary(&rows).lines().count(), 2);
}
