//! Seeded training with best-dev checkpointing and early stopping.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anonymizer::{MaskedInstanceSet, Roster};
use crate::dataset::{append_jsonl, rosters_for, CorpusSplits, DatasetError};
use crate::models::{build_vocab, Architecture, CharacterModel, Decoding, ModelConfig, ModelError};
use crate::nn::{Adam, Attention, EncoderConfig, ParamStore};
use crate::text::mix_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Restrict training and dev data to these shows.
    pub shows: Option<Vec<String>>,
    /// Stop after this many epochs without a dev improvement.
    pub patience: Option<usize>,
    pub candidate_masked_training: bool,
    pub min_token_count: usize,
    pub max_vocab: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            lr: 3e-4,
            epochs: 20,
            batch_size: 8,
            seed: 0,
            shows: None,
            patience: None,
            candidate_masked_training: false,
            min_token_count: 1,
            max_vocab: None,
        }
    }
}

impl TrainConfig {
    /// Sizes used for full-corpus runs with a pretrained-scale encoder.
    pub fn full_scale(architecture: Architecture) -> Self {
        Self {
            model: ModelConfig {
                architecture,
                encoder: EncoderConfig::full_scale(),
                rows: 12,
                row_len: 512,
                ..ModelConfig::default()
            },
            lr: 2e-5,
            epochs: 40,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::InvalidConfig("epochs must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(TrainError::InvalidConfig("lr must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch_size must be at least 1".into()));
        }
        if self.patience == Some(0) {
            return Err(TrainError::InvalidConfig("patience must be at least 1".into()));
        }
        self.model.validate()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TrainError> {
        let raw = std::fs::read_to_string(path).map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
        toml::from_str(&raw).map_err(|e| TrainError::InvalidConfig(e.to_string()))
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("{0} set is empty")]
    EmptySet(&'static str),
    #[error("non-finite loss {loss} at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize, loss: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// One metric-log line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub epoch: usize,
    pub split: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_accuracy: f64,
    pub train_accuracy: Option<f64>,
}

/// Instance accuracy of candidate-restricted predictions.
pub fn model_accuracy(model: &CharacterModel, instances: &[&MaskedInstanceSet]) -> Result<f64, ModelError> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for inst in instances {
        for p in model.predict(inst, Decoding::Independent)? {
            total += 1;
            correct += usize::from(inst.gold.get(&p.speaker_id) == Some(&p.predicted));
        }
    }
    Ok(if total == 0 { 0.0 } else { correct as f64 / total as f64 })
}

/// Stepwise trainer; [`train`] drives it to completion.
pub struct Trainer<'a> {
    pub cfg: TrainConfig,
    pub model: CharacterModel,
    train: Vec<&'a MaskedInstanceSet>,
    dev: Vec<&'a MaskedInstanceSet>,
    adam: Adam,
    rng: ChaCha8Rng,
    epoch: usize,
    best: Option<(usize, f64, ParamStore)>,
    since_best: usize,
    pub log: Vec<MetricRecord>,
}

impl<'a> Trainer<'a> {
    /// Builds the vocabulary from the training set and one classifier per show.
    pub fn new(
        cfg: TrainConfig,
        rosters: Option<&BTreeMap<String, Roster>>,
        train: &'a [MaskedInstanceSet],
        dev: &'a [MaskedInstanceSet],
    ) -> Result<Self, TrainError> {
        cfg.validate()?;
        let keep = |i: &&MaskedInstanceSet| cfg.shows.as_ref().map_or(true, |s| s.contains(&i.show));
        let train: Vec<&MaskedInstanceSet> = train.iter().filter(keep).collect();
        let dev: Vec<&MaskedInstanceSet> = dev.iter().filter(keep).collect();
        if train.is_empty() {
            return Err(TrainError::EmptySet("train"));
        }
        if dev.is_empty() {
            return Err(TrainError::EmptySet("dev"));
        }
        let all: Vec<MaskedInstanceSet> = train.iter().chain(&dev).map(|i| (*i).clone()).collect();
        let rosters = rosters_for(&all, rosters);
        let vocab = build_vocab(train.iter().copied(), cfg.min_token_count, cfg.max_vocab);
        let mut model_cfg = cfg.model.clone();
        model_cfg.encoder.seed = mix_seed(cfg.seed, 0x1);
        let model = CharacterModel::new(model_cfg, vocab, &rosters)?;
        let adam = Adam::new(&model.store, cfg.lr);
        let rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0x2));
        Ok(Self { cfg, model, train, dev, adam, rng, epoch: 0, best: None, since_best: 0, log: Vec::new() })
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    pub fn best_dev(&self) -> Option<(usize, f64)> {
        self.best.as_ref().map(|(e, a, _)| (*e, *a))
    }

    /// Whether the epoch budget or patience is exhausted.
    pub fn finished(&self) -> bool {
        self.epoch >= self.cfg.epochs || self.cfg.patience.is_some_and(|p| self.since_best >= p)
    }

    pub fn train_accuracy(&self) -> Result<f64, ModelError> {
        model_accuracy(&self.model, &self.train)
    }

    /// Runs one epoch; `with_train_accuracy` also scores the training set.
    pub fn epoch(&mut self, with_train_accuracy: bool) -> Result<EpochStats, TrainError> {
        self.epoch += 1;
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut self.rng);
        let mut losses = Vec::new();
        for (step, chunk) in order.chunks(self.cfg.batch_size).enumerate() {
            let batch: Vec<&MaskedInstanceSet> = chunk.iter().map(|&i| self.train[i]).collect();
            let (loss, grads) = self.model.loss_and_grads(&batch, self.cfg.candidate_masked_training, Some(&mut self.rng))?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch: self.epoch, step, loss });
            }
            self.adam.step(&mut self.model.store, &grads);
            losses.push(loss);
        }
        let train_loss = losses.iter().sum::<f64>() / losses.len() as f64;
        let dev_accuracy = model_accuracy(&self.model, &self.dev)?;
        let train_accuracy = if with_train_accuracy { Some(self.train_accuracy()?) } else { None };

        let mut record = |split: &str, metric: &str, value: f64| {
            self.log.push(MetricRecord { epoch: self.epoch, split: split.into(), metric: metric.into(), value });
        };
        record("train", "loss", train_loss);
        if let Some(a) = train_accuracy {
            record("train", "accuracy", a);
        }
        record("dev", "accuracy", dev_accuracy);

        if self.best.as_ref().map_or(true, |(_, best, _)| dev_accuracy > *best) {
            self.best = Some((self.epoch, dev_accuracy, self.model.store.clone()));
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        Ok(EpochStats { epoch: self.epoch, train_loss, dev_accuracy, train_accuracy })
    }

    /// Restores the best-dev parameters and returns the outcome.
    pub fn finish(mut self) -> TrainOutcome {
        let (best_epoch, best_dev) = self.best_dev().unwrap_or((0, 0.0));
        if let Some((_, _, store)) = self.best.take() {
            self.model.store = store;
        }
        TrainOutcome { model: self.model, log: self.log, best_epoch, best_dev }
    }
}

pub struct TrainOutcome {
    /// Parameters from the epoch with the highest dev accuracy.
    pub model: CharacterModel,
    pub log: Vec<MetricRecord>,
    pub best_epoch: usize,
    pub best_dev: f64,
}

pub fn train(cfg: TrainConfig, train: &[MaskedInstanceSet], dev: &[MaskedInstanceSet]) -> Result<TrainOutcome, TrainError> {
    train_with_rosters(cfg, None, train, dev)
}

pub fn train_with_rosters(
    cfg: TrainConfig,
    rosters: Option<&BTreeMap<String, Roster>>,
    train: &[MaskedInstanceSet],
    dev: &[MaskedInstanceSet],
) -> Result<TrainOutcome, TrainError> {
    let mut t = Trainer::new(cfg, rosters, train, dev)?;
    while !t.finished() {
        let stats = t.epoch(false)?;
        log::info!("epoch {} loss {:.4} dev {:.4}", stats.epoch, stats.train_loss, stats.dev_accuracy);
    }
    Ok(t.finish())
}

pub fn append_log(log: &[MetricRecord], path: impl AsRef<Path>) -> Result<(), DatasetError> {
    for r in log {
        append_jsonl(r, path.as_ref())?;
    }
    Ok(())
}

/// Dev accuracy on `target` when training on it plus the first i donors,
/// for i = 0..=donors.len().
pub fn learning_curve(cfg: &TrainConfig, splits: &CorpusSplits, target: &str, donors: &[String]) -> Result<Vec<f64>, TrainError> {
    let dev: Vec<MaskedInstanceSet> = splits.dev.iter().filter(|i| i.show == target).cloned().collect();
    if dev.is_empty() {
        return Err(TrainError::EmptySet("target dev"));
    }
    let mut curve = Vec::with_capacity(donors.len() + 1);
    for i in 0..=donors.len() {
        let shows: Vec<&str> = std::iter::once(target).chain(donors[..i].iter().map(String::as_str)).collect();
        let train: Vec<MaskedInstanceSet> = splits.train.iter().filter(|x| shows.contains(&x.show.as_str())).cloned().collect();
        let run_cfg = TrainConfig { shows: None, ..cfg.clone() };
        let outcome = train_with_rosters(run_cfg, None, &train, &dev)?;
        curve.push(outcome.best_dev);
    }
    Ok(curve)
}

/// Small configuration suited to synthetic corpora.
pub fn toy_config(architecture: Architecture, seed: u64) -> TrainConfig {
    TrainConfig {
        model: ModelConfig {
            architecture,
            encoder: EncoderConfig { dim: 16, layers: 1, heads: 2, max_len: 128, attention: Attention::Full, dropout: 0.0, seed },
            rows: 6,
            row_len: 32,
            ..ModelConfig::default()
        },
        lr: 3e-3,
        epochs: 30,
        batch_size: 8,
        seed,
        ..TrainConfig::default()
    }
}
