//! Seeded, resumable training with the Charbonnier loss and Adam, plus
//! single-file checkpoints.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use cpga_tensor::{Adam, AdamConfig, Bound, Graph, ParamStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use safetensors::tensor::{Dtype, SafeTensors, TensorView};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{all_centres, collate, crop_and_augment, DataError, PairedSequence};
use crate::model::{ClipBatch, ConfigError, Cpga, ModelConfig, ModelError, ModelInputs};

pub const CHECKPOINT_VERSION: &str = "cpga-checkpoint-1";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("non-finite loss {loss} at iteration {iteration}; batch (sequence, frame): {samples:?}")]
    NonFinite { iteration: u64, loss: f64, samples: Vec<(usize, usize)> },
    #[error("empty training set")]
    EmptyDataset,
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("checkpoint: missing field {0}")]
    Missing(String),
    #[error("checkpoint: invalid {field}: {reason}")]
    Invalid { field: String, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io { path: path.to_path_buf(), source }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    #[default]
    Constant,
    Cosine,
}

impl std::str::FromStr for Schedule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "constant" => Ok(Schedule::Constant),
            "cosine" => Ok(Schedule::Cosine),
            other => Err(format!("unknown schedule {other:?}; expected constant or cosine")),
        }
    }
}

/// Optimization and sampling settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch: usize,
    pub crop: usize,
    pub charbonnier_eps: f64,
    pub max_iters: u64,
    pub seed: u64,
    /// Threads that assemble batches. Batches do not depend on it.
    pub workers: usize,
    pub schedule: Schedule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::paper()
    }
}

/// Named presets of batch size and crop.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Paper,
    Desk,
}

impl std::str::FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "paper" => Ok(Profile::Paper),
            "desk" => Ok(Profile::Desk),
            other => Err(format!("unknown profile {other:?}; expected paper or desk")),
        }
    }
}

impl TrainConfig {
    /// Batch 32 of 128×128 crops.
    pub fn paper() -> Self {
        TrainConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch: 32,
            crop: 128,
            charbonnier_eps: 1e-3,
            max_iters: 1000,
            seed: 0,
            workers: 1,
            schedule: Schedule::Constant,
        }
    }

    /// Batch 8 of 64×64 crops.
    pub fn desk() -> Self {
        TrainConfig { batch: 8, crop: 64, ..TrainConfig::paper() }
    }

    pub fn profile(p: Profile) -> Self {
        match p {
            Profile::Paper => TrainConfig::paper(),
            Profile::Desk => TrainConfig::desk(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |field, reason: &str| Err(ConfigError::Invalid { field, reason: reason.into() });
        if self.crop == 0 || self.crop % 4 != 0 {
            return bad("crop", "must be a positive multiple of 4");
        }
        if self.batch == 0 {
            return bad("batch", "must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr", "must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas", "must lie in [0, 1)");
        }
        if !(self.eps > 0.0 && self.charbonnier_eps > 0.0) {
            return bad("eps", "must be positive");
        }
        if self.workers == 0 {
            return bad("workers", "must be positive");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, beta1: self.beta1, beta2: self.beta2, eps: self.eps }
    }

    /// Learning rate of 1-based iteration `it`.
    pub fn lr_at(&self, it: u64) -> f64 {
        match self.schedule {
            Schedule::Constant => self.lr,
            Schedule::Cosine => {
                let f = (it.saturating_sub(1)) as f64 / self.max_iters.max(1) as f64;
                0.5 * self.lr * (1.0 + (std::f64::consts::PI * f.min(1.0)).cos())
            }
        }
    }
}

/// Model and training settings as one config file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Invalid { field: "config", reason: e.to_string() })?;
        cfg.model.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}

/// `mean(sqrt((pred − gt)² + eps²))` over all elements.
pub fn charbonnier_loss(pred: &Tensor<f64>, gt: &Tensor<f64>, eps: f64) -> f64 {
    let g = Graph::inference();
    g.charbonnier(&g.constant(pred.clone()), &g.constant(gt.clone()), eps).value().item()
}

/// Training clips: sequences plus the centre frames drawn from.
pub struct TrainSet {
    pub sequences: Vec<PairedSequence>,
    pub centres: Vec<(usize, usize)>,
}

impl TrainSet {
    /// Every frame of every sequence is a centre.
    pub fn new(sequences: Vec<PairedSequence>) -> Self {
        let centres = all_centres(&sequences);
        TrainSet { sequences, centres }
    }

    pub fn with_centres(sequences: Vec<PairedSequence>, centres: Vec<(usize, usize)>) -> Self {
        TrainSet { sequences, centres }
    }
}

/// Saved training state.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub params: ParamStore<f32>,
    pub iteration: u64,
    pub adam_step: u64,
    pub adam_first: Vec<Tensor<f32>>,
    pub adam_second: Vec<Tensor<f32>>,
}

fn to_le(t: &Tensor<f32>) -> Vec<u8> {
    t.data().iter().flat_map(|v| v.to_le_bytes()).collect()
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let names: Vec<String> = self.params.ids().map(|id| self.params.name(id).to_string()).collect();
        let mut owned: Vec<(String, Vec<usize>, Vec<u8>)> = Vec::new();
        for (i, id) in self.params.ids().enumerate() {
            let p = self.params.get(id);
            owned.push((format!("param/{}", names[i]), p.shape().to_vec(), to_le(p)));
            owned.push((format!("adam.m/{}", names[i]), p.shape().to_vec(), to_le(&self.adam_first[i])));
            owned.push((format!("adam.v/{}", names[i]), p.shape().to_vec(), to_le(&self.adam_second[i])));
        }
        let views = owned.iter().map(|(n, s, b)| (n.clone(), TensorView::new(Dtype::F32, s.clone(), b).expect("tensor view")));
        let meta = HashMap::from([
            ("version".to_string(), CHECKPOINT_VERSION.to_string()),
            ("model_config".to_string(), self.model.to_toml()),
            ("train_config".to_string(), toml::to_string(&self.train).expect("train config serializes")),
            ("iteration".to_string(), self.iteration.to_string()),
            ("adam_step".to_string(), self.adam_step.to_string()),
            ("seed".to_string(), self.train.seed.to_string()),
            ("workers".to_string(), self.train.workers.to_string()),
        ]);
        safetensors::serialize(views, Some(meta)).expect("checkpoint serializes")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TrainError> {
        let invalid = |field: &str, reason: String| TrainError::Invalid { field: field.into(), reason };
        let (_, header) = SafeTensors::read_metadata(bytes).map_err(|e| invalid("header", e.to_string()))?;
        let meta = header.metadata().clone().unwrap_or_default();
        let field = |k: &str| meta.get(k).cloned().ok_or_else(|| TrainError::Missing(k.to_string()));
        let version = field("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(invalid("version", format!("{version:?}, expected {CHECKPOINT_VERSION:?}")));
        }
        let model = ModelConfig::from_toml(&field("model_config")?)?;
        let train: TrainConfig = toml::from_str(&field("train_config")?).map_err(|e| invalid("train_config", e.to_string()))?;
        let number = |k: &str| -> Result<u64, TrainError> { field(k)?.parse().map_err(|e| invalid(k, format!("{e}"))) };
        let iteration = number("iteration")?;
        let adam_step = number("adam_step")?;

        let st = SafeTensors::deserialize(bytes).map_err(|e| invalid("tensors", e.to_string()))?;
        let mut params = Cpga::<f32>::new(model.clone())?.params;
        let read = |key: String, shape: &[usize]| -> Result<Tensor<f32>, TrainError> {
            let view = st.tensor(&key).map_err(|_| TrainError::Missing(key.clone()))?;
            if view.dtype() != Dtype::F32 || view.shape() != shape {
                return Err(invalid(&key, format!("{:?} {:?}, expected F32 {shape:?}", view.dtype(), view.shape())));
            }
            let data = view.data().chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
            Ok(Tensor::from_vec(shape.to_vec(), data))
        };
        let ids: Vec<_> = params.ids().collect();
        let (mut first, mut second) = (Vec::new(), Vec::new());
        for id in ids {
            let (name, shape) = (params.name(id).to_string(), params.get(id).shape().to_vec());
            params.set(id, read(format!("param/{name}"), &shape)?);
            first.push(read(format!("adam.m/{name}"), &shape)?);
            second.push(read(format!("adam.v/{name}"), &shape)?);
        }
        Ok(Checkpoint { model, train, params, iteration, adam_step, adam_first: first, adam_second: second })
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        fs::write(path, self.to_bytes()).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        Checkpoint::from_bytes(&fs::read(path).map_err(io_err(path))?)
    }

    /// The network with the saved parameters.
    pub fn to_model(&self) -> Result<Cpga<f32>, TrainError> {
        let mut model = Cpga::new(self.model.clone())?;
        model.params = self.params.clone();
        Ok(model)
    }
}

pub struct Trainer {
    pub model: Cpga<f32>,
    pub adam: Adam<f32>,
    pub config: TrainConfig,
    /// Completed iterations.
    pub iteration: u64,
    /// `(iteration, loss)` of this session's steps.
    pub losses: Vec<(u64, f64)>,
    pool: rayon::ThreadPool,
}

impl Trainer {
    pub fn new(model: ModelConfig, config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let model = Cpga::new(model)?;
        let adam = Adam::new(config.adam(), &model.params);
        Ok(Trainer { model, adam, pool: pool(config.workers), config, iteration: 0, losses: Vec::new() })
    }

    /// Continue from a checkpoint; `max_iters` may be raised by the caller.
    pub fn resume(ckpt: Checkpoint) -> Result<Self, TrainError> {
        let model = ckpt.to_model()?;
        let mut adam = Adam::new(ckpt.train.adam(), &model.params);
        adam.restore(ckpt.adam_step, ckpt.adam_first, ckpt.adam_second);
        Ok(Trainer { model, adam, pool: pool(ckpt.train.workers), config: ckpt.train, iteration: ckpt.iteration, losses: Vec::new() })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let ids: Vec<_> = self.model.params.ids().collect();
        Checkpoint {
            model: self.model.config().clone(),
            train: self.config.clone(),
            params: self.model.params.clone(),
            iteration: self.iteration,
            adam_step: self.adam.steps(),
            adam_first: ids.iter().map(|&id| self.adam.moments(id).0.clone()).collect(),
            adam_second: ids.iter().map(|&id| self.adam.moments(id).1.clone()).collect(),
        }
    }

    /// Batch of 1-based iteration `it`: each slot draws a centre frame, a
    /// crop and flips from its own stream of the run seed.
    pub fn sample_batch(&self, data: &TrainSet, it: u64) -> Result<(ClipBatch<f32>, Vec<(usize, usize)>), TrainError> {
        if data.centres.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        let (batch, radius, crop) = (self.config.batch, self.model.config().radius, self.config.crop);
        let slots: Vec<Result<(ClipBatch<f32>, (usize, usize)), TrainError>> = self.pool.install(|| {
            (0..batch)
                .into_par_iter()
                .map(|slot| {
                    let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
                    rng.set_stream(it * batch as u64 + slot as u64);
                    let pick = data.centres[rand::Rng::random_range(&mut rng, 0..data.centres.len())];
                    let clip = data.sequences[pick.0].window(pick.1, radius)?;
                    Ok((crop_and_augment(&clip, crop, &mut rng)?, pick))
                })
                .collect()
        });
        let (samples, picks): (Vec<_>, Vec<_>) = slots.into_iter().collect::<Result<Vec<_>, _>>()?.into_iter().unzip();
        Ok((collate(&samples)?, picks))
    }

    /// One optimization step on `batch`; returns the loss before the update.
    pub fn step_on(&mut self, batch: &ClipBatch<f32>, picks: &[(usize, usize)]) -> Result<f64, TrainError> {
        let it = self.iteration + 1;
        self.model.check_batch(batch)?;
        let g = Graph::new();
        let p = Bound::new(&g, &self.model.params);
        let inputs = ModelInputs::constants(&g, batch, self.model.config().priors);
        let out = self.model.forward(&p, &inputs)?;
        let loss = g.charbonnier(&out, &g.constant(batch.gt.clone()), self.config.charbonnier_eps as f32);
        let value = loss.value().item() as f64;
        if !value.is_finite() {
            return Err(TrainError::NonFinite { iteration: it, loss: value, samples: picks.to_vec() });
        }
        let mut grads = g.backward(&loss);
        let grads = p.collect(&mut grads);
        self.adam.config.lr = self.config.lr_at(it);
        self.adam.update(&mut self.model.params, &grads);
        self.iteration = it;
        self.losses.push((it, value));
        Ok(value)
    }

    pub fn step(&mut self, data: &TrainSet) -> Result<f64, TrainError> {
        let (batch, picks) = self.sample_batch(data, self.iteration + 1)?;
        self.step_on(&batch, &picks)
    }

    /// Train until `max_iters`, appending `iter,loss` rows to `curve` and
    /// calling `on_step` after every iteration.
    pub fn run(&mut self, data: &TrainSet, curve: Option<&Path>, mut on_step: impl FnMut(&Trainer, f64)) -> Result<(), TrainError> {
        let mut file = match curve {
            Some(path) => {
                let fresh = self.iteration == 0 || !path.exists();
                let mut f = OpenOptions::new().create(true).append(!fresh).write(true).truncate(fresh).open(path).map_err(io_err(path))?;
                if fresh {
                    writeln!(f, "iter,loss").map_err(io_err(path))?;
                }
                Some((f, path))
            }
            None => None,
        };
        while self.iteration < self.config.max_iters {
            let loss = self.step(data)?;
            if let Some((f, path)) = file.as_mut() {
                writeln!(f, "{},{loss}", self.iteration).map_err(io_err(path))?;
            }
            on_step(self, loss);
        }
        Ok(())
    }
}

fn pool(workers: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build().expect("thread pool")
}
