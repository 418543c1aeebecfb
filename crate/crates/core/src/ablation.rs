//! Prior ablation: train one model per prior combination and seed under an
//! equal budget, then compare quality gains.

use std::fmt::Write as _;

use crate::metrics::{evaluate_clips, MetricError};
use crate::model::{ModelConfig, PriorFlags};
use crate::train::{TrainConfig, TrainError, TrainSet, Trainer};

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: String,
    pub flags: PriorFlags,
    pub seed: u64,
    pub params: usize,
    pub final_loss: f64,
    pub delta_psnr: f64,
    pub delta_ssim: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum AblationError {
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Table variants whose enabled priors are all in `allowed`.
pub fn variants(allowed: PriorFlags) -> Vec<(&'static str, PriorFlags)> {
    PriorFlags::ablation_grid()
        .into_iter()
        .filter(|(_, f)| (!f.mv || allowed.mv) && (!f.pred || allowed.pred) && (!f.resid || allowed.resid))
        .collect()
}

/// Train every `(variant, seed)` pair from scratch on `train` and score the
/// enhanced centre frames of `eval`, given as `(sequence, frame)` indices
/// into `train.sequences`. `seed` drives both initialization and
/// sampling.
pub fn run_ablation(
    model: &ModelConfig,
    config: &TrainConfig,
    train: &TrainSet,
    eval: &[(usize, usize)],
    grid: &[(&'static str, PriorFlags)],
    seeds: &[u64],
    mut on_row: impl FnMut(&AblationRow),
) -> Result<Vec<AblationRow>, AblationError> {
    let mut rows = Vec::new();
    for &(variant, flags) in grid {
        for &seed in seeds {
            let mcfg = ModelConfig { priors: flags, init_seed: seed, ..model.clone() };
            let tcfg = TrainConfig { seed, ..config.clone() };
            let mut trainer = Trainer::new(mcfg, tcfg)?;
            trainer.run(train, None, |_, _| {})?;
            let tail = trainer.losses.len().min(10).max(1);
            let final_loss = trainer.losses.iter().rev().take(tail).map(|(_, l)| l).sum::<f64>() / tail as f64;
            let (delta_psnr, delta_ssim) = evaluate_clips(&trainer.model, &train.sequences, eval)?;
            let row = AblationRow { variant: variant.to_string(), flags, seed, params: trainer.model.num_params(), final_loss, delta_psnr, delta_ssim };
            on_row(&row);
            rows.push(row);
        }
    }
    Ok(rows)
}

pub fn mean_delta(rows: &[AblationRow], variant: &str) -> Option<f64> {
    let xs: Vec<f64> = rows.iter().filter(|r| r.variant == variant).map(|r| r.delta_psnr).collect();
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

pub fn to_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("variant,priors,seed,params,final_loss,delta_psnr,delta_ssim\n");
    for r in rows {
        writeln!(s, "{},{},{},{},{},{},{}", r.variant, r.flags.label(), r.seed, r.params, r.final_loss, r.delta_psnr, r.delta_ssim).expect("string write");
    }
    s
}

/// One line per variant: mean and spread of ΔPSNR over seeds.
pub fn summary(rows: &[AblationRow]) -> String {
    let mut s = String::new();
    let mut seen: Vec<&str> = Vec::new();
    for r in rows {
        if seen.contains(&r.variant.as_str()) {
            continue;
        }
        seen.push(&r.variant);
        let xs: Vec<f64> = rows.iter().filter(|x| x.variant == r.variant).map(|x| x.delta_psnr).collect();
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let (lo, hi) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        writeln!(s, "{:<8} {:<14} dPSNR {:+.4} dB  (min {:+.4}, max {:+.4}, {} seeds)", r.variant, r.flags.label(), m, lo, hi, xs.len()).expect("string write");
    }
    s
}
