//! Student fine-tuning on distillation examples.
//!
//! [`ModelAdapter`] hides the model runtime. [`fine_tune`] owns the epoch
//! loop: a seeded batch order per epoch, optional dev QWK after each epoch,
//! and checkpoints under `{run_dir}/epoch-{k}` with the log at
//! `{run_dir}/log.json`.

mod process;
mod seq2seq;
mod stub;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use process::{ProcessAdapter, ProcessConfig};
pub use seq2seq::{Seq2SeqAdapter, Seq2SeqConfig};
pub use stub::StubAdapter;

use crate::distillset::DistillExample;
use crate::metrics::{qwk, RatingPair, RUBRIC_CATEGORIES};
use crate::rubrics::ScoreGrid;
use crate::scorer::{parse_score, FallbackPolicy};
use crate::shuffle;

#[derive(Debug, thiserror::Error)]
pub enum AdapterError {
    #[error("model runtime error: {0}")]
    Runtime(String),
    #[error("batch {batch}: {message}")]
    Batch { batch: usize, message: String },
    #[error("checkpoint io on {path}: {message}")]
    Checkpoint { path: String, message: String },
    #[error("external adapter protocol error: {0}")]
    Protocol(String),
}

impl From<candle_core::Error> for AdapterError {
    fn from(e: candle_core::Error) -> Self {
        AdapterError::Runtime(e.to_string())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("epoch {epoch}: {source}")]
    Adapter {
        epoch: usize,
        #[source]
        source: AdapterError,
    },
    #[error("failed to write {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeParams {
    pub max_new_tokens: usize,
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self {
            max_new_tokens: 512,
        }
    }
}

/// A trainable text-to-text model.
pub trait ModelAdapter: Send + Sync {
    fn name(&self) -> &str;

    /// Receive run hyperparameters before the first epoch.
    fn configure(&mut self, _config: &TrainConfig) -> Result<(), AdapterError> {
        Ok(())
    }

    /// One pass over `batches`; returns mean token-level cross-entropy.
    fn fit_epoch(&mut self, batches: &[Vec<&DistillExample>]) -> Result<f64, AdapterError>;

    /// Greedy decode.
    fn generate(&self, input: &str, params: &DecodeParams) -> Result<String, AdapterError>;

    fn save(&self, dir: &Path) -> Result<(), AdapterError>;

    fn load(&mut self, dir: &Path) -> Result<(), AdapterError>;

    /// Whether `generate` may be called from several threads at once.
    fn concurrent_generation(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointPolicy {
    Final,
    #[default]
    BestDev,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// AdamW step size.
    pub learning_rate: f64,
    /// AdamW decoupled weight decay.
    pub weight_decay: f64,
    pub max_input_tokens: usize,
    pub max_target_tokens: usize,
    pub shuffle_seed: u64,
    pub checkpoint_policy: CheckpointPolicy,
    /// Compute dev QWK after each epoch when a dev set is given.
    pub evaluate_dev: bool,
    pub decode: DecodeParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 15,
            batch_size: 8,
            learning_rate: 1e-4,
            weight_decay: 0.01,
            max_input_tokens: 2048,
            max_target_tokens: 512,
            shuffle_seed: 22,
            checkpoint_policy: CheckpointPolicy::BestDev,
            evaluate_dev: true,
            decode: DecodeParams::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if self.epochs < 1 {
            return bad("epochs must be >= 1");
        }
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1");
        }
        if self.max_input_tokens < 1 || self.max_target_tokens < 1 {
            return bad("token limits must be >= 1");
        }
        let positive = |x: f64| x > 0.0;
        if !positive(self.learning_rate) || self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return bad("learning_rate must be > 0 and weight_decay >= 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub dev_qwk: Option<BTreeMap<String, f64>>,
    pub dev_mean_qwk: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub adapter: String,
    pub config: TrainConfig,
    pub train_examples: usize,
    pub dev_examples: usize,
    pub epochs: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
    pub final_epoch: usize,
    /// Checkpoint directory chosen by the checkpoint policy, relative to the run dir.
    pub selected_checkpoint: Option<String>,
}

impl TrainingLog {
    /// Copy with wall-clock fields zeroed, for reproducibility comparisons.
    pub fn without_timing(&self) -> Self {
        let mut log = self.clone();
        for e in &mut log.epochs {
            e.seconds = 0.0;
        }
        log
    }
}

/// Batches for one epoch: a permutation seeded by (shuffle_seed, epoch).
pub fn epoch_batches(
    examples: &[DistillExample],
    batch_size: usize,
    shuffle_seed: u64,
    epoch: usize,
) -> Vec<Vec<&DistillExample>> {
    let order = shuffle::permutation(
        examples.len(),
        shuffle::derive_seed(shuffle_seed, epoch as u64),
    );
    order
        .chunks(batch_size.max(1))
        .map(|chunk| chunk.iter().map(|&i| &examples[i]).collect())
        .collect()
}

/// Per-rubric QWK of greedy generations against example gold scores.
pub fn dev_qwk(
    adapter: &dyn ModelAdapter,
    dev: &[DistillExample],
    decode: &DecodeParams,
) -> Result<BTreeMap<String, f64>, AdapterError> {
    let grid = ScoreGrid::default();
    let policy = FallbackPolicy::default();
    let mut by_rubric: BTreeMap<String, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for ex in dev {
        let raw = adapter.generate(&ex.input_text, decode)?;
        let parsed = parse_score(&raw, &grid, &policy);
        let entry = by_rubric.entry(ex.rubric_id.clone()).or_default();
        entry.0.push(ex.gold_score.index());
        entry.1.push(parsed.score.index());
    }
    Ok(by_rubric
        .into_iter()
        .map(|(rubric, (gold, pred))| {
            let pair =
                RatingPair::new(gold, pred, RUBRIC_CATEGORIES).expect("grid indices are valid");
            (rubric, qwk(&pair).value)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub log: TrainingLog,
    pub final_checkpoint: Option<PathBuf>,
    pub best_checkpoint: Option<PathBuf>,
}

impl TrainOutcome {
    pub fn selected_checkpoint(&self) -> Option<&Path> {
        match self.log.config.checkpoint_policy {
            CheckpointPolicy::BestDev => self
                .best_checkpoint
                .as_deref()
                .or(self.final_checkpoint.as_deref()),
            CheckpointPolicy::Final => self.final_checkpoint.as_deref(),
        }
    }
}

fn save_checkpoint(
    adapter: &dyn ModelAdapter,
    run_dir: &Path,
    epoch: usize,
) -> Result<PathBuf, TrainError> {
    let dir = run_dir.join(format!("epoch-{epoch}"));
    let io = |e: &dyn std::fmt::Display| TrainError::Io {
        path: dir.display().to_string(),
        message: e.to_string(),
    };
    if dir.exists() {
        std::fs::remove_dir_all(&dir).map_err(|e| io(&e))?;
    }
    std::fs::create_dir_all(&dir).map_err(|e| io(&e))?;
    adapter
        .save(&dir)
        .map_err(|source| TrainError::Adapter { epoch, source })?;
    Ok(dir)
}

/// Train for `config.epochs` epochs. With a `run_dir`, the final epoch and
/// (under `best_dev`) the best dev epoch are checkpointed and the log is
/// written to `log.json`. The adapter is left in its final-epoch state.
pub fn fine_tune(
    adapter: &mut dyn ModelAdapter,
    train: &[DistillExample],
    dev: &[DistillExample],
    config: &TrainConfig,
    run_dir: Option<&Path>,
) -> Result<TrainOutcome, TrainError> {
    if train.is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }
    config.validate()?;
    adapter
        .configure(config)
        .map_err(|source| TrainError::Adapter { epoch: 0, source })?;

    let mut epochs = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64)> = None;
    let mut best_checkpoint: Option<PathBuf> = None;
    let mut final_checkpoint = None;
    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let batches = epoch_batches(train, config.batch_size, config.shuffle_seed, epoch);
        let mean_loss = adapter
            .fit_epoch(&batches)
            .map_err(|source| TrainError::Adapter { epoch, source })?;
        let dev_scores = if config.evaluate_dev && !dev.is_empty() {
            Some(
                dev_qwk(adapter, dev, &config.decode)
                    .map_err(|source| TrainError::Adapter { epoch, source })?,
            )
        } else {
            None
        };
        let dev_mean = dev_scores
            .as_ref()
            .filter(|m| !m.is_empty())
            .map(|m| m.values().sum::<f64>() / m.len() as f64);
        log::info!(
            "epoch {epoch}/{}: loss {mean_loss:.4} dev {dev_mean:?}",
            config.epochs
        );

        if let Some(score) = dev_mean {
            if best.is_none_or(|(_, b)| score > b) {
                best = Some((epoch, score));
                if let (Some(dir), CheckpointPolicy::BestDev) = (run_dir, config.checkpoint_policy)
                {
                    if let Some(old) = best_checkpoint.take() {
                        std::fs::remove_dir_all(&old).ok();
                    }
                    best_checkpoint = Some(save_checkpoint(adapter, dir, epoch)?);
                }
            }
        }
        if epoch == config.epochs {
            if let Some(dir) = run_dir {
                final_checkpoint = Some(save_checkpoint(adapter, dir, epoch)?);
            }
        }
        epochs.push(EpochLog {
            epoch,
            mean_loss,
            dev_qwk: dev_scores,
            dev_mean_qwk: dev_mean,
            seconds: started.elapsed().as_secs_f64(),
        });
    }

    let best_epoch = best.map(|(e, _)| e);
    let selected_epoch = match config.checkpoint_policy {
        CheckpointPolicy::BestDev => best_epoch.unwrap_or(config.epochs),
        CheckpointPolicy::Final => config.epochs,
    };
    let mut outcome = TrainOutcome {
        log: TrainingLog {
            adapter: adapter.name().to_string(),
            config: config.clone(),
            train_examples: train.len(),
            dev_examples: dev.len(),
            epochs,
            best_epoch,
            final_epoch: config.epochs,
            selected_checkpoint: run_dir.map(|_| format!("epoch-{selected_epoch}")),
        },
        final_checkpoint,
        best_checkpoint,
    };
    if let Some(dir) = run_dir {
        if outcome.best_checkpoint.is_none()
            && config.checkpoint_policy == CheckpointPolicy::BestDev
        {
            outcome.best_checkpoint = outcome.final_checkpoint.clone();
        }
        let path = dir.join("log.json");
        let bytes = serde_json::to_vec_pretty(&outcome.log).map_err(|e| TrainError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        crate::jsonl::write_atomic(&path, &bytes).map_err(|e| TrainError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
    }
    Ok(outcome)
}

/// Fit on a small set, then report the fraction of byte-exact regenerations.
pub fn overfit_probe(
    adapter: &mut dyn ModelAdapter,
    examples: &[DistillExample],
    config: &TrainConfig,
) -> Result<f64, TrainError> {
    if examples.len() > 16 {
        return Err(TrainError::InvalidConfig(format!(
            "overfit probe takes at most 16 examples, got {}",
            examples.len()
        )));
    }
    let probe_config = TrainConfig {
        evaluate_dev: false,
        ..config.clone()
    };
    fine_tune(adapter, examples, &[], &probe_config, None)?;
    exact_match_rate(adapter, examples, &config.decode).map_err(|source| TrainError::Adapter {
        epoch: config.epochs,
        source,
    })
}

pub fn exact_match_rate(
    adapter: &dyn ModelAdapter,
    examples: &[DistillExample],
    decode: &DecodeParams,
) -> Result<f64, AdapterError> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0;
    for ex in examples {
        if adapter.generate(&ex.input_text, decode)? == ex.target_text {
            hits += 1;
        }
    }
    Ok(hits as f64 / examples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rubrics::Score;
    use std::collections::HashSet;

    pub(crate) fn example(i: usize, rubric: &str, score: f64) -> DistillExample {
        DistillExample {
            example_id: format!("{i}:{rubric}"),
            record_id: i.to_string(),
            rubric_id: rubric.into(),
            input_text: format!("[Scoring Rubric]\n{rubric}\n\n[Subject]\nS{i}\n\n[Essay]\nE{i}"),
            target_text: format!("Reason {i}. ---> {score:.1}"),
            gold_score: Score::new(score).unwrap(),
        }
    }

    #[test]
    fn defaults_match_reported_settings() {
        let c = TrainConfig::default();
        assert_eq!((c.epochs, c.batch_size), (15, 8));
        assert_eq!(c.checkpoint_policy, CheckpointPolicy::BestDev);
        assert!(c.validate().is_ok());
        assert!(TrainConfig {
            epochs: 0,
            ..c.clone()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            batch_size: 0,
            ..c.clone()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            max_target_tokens: 0,
            ..c
        }
        .validate()
        .is_err());
    }

    #[test]
    fn batch_order_depends_only_on_seed_and_epoch() {
        let examples: Vec<_> = (0..20).map(|i| example(i, "content", 3.0)).collect();
        let ids = |b: &[Vec<&DistillExample>]| {
            b.iter()
                .flatten()
                .map(|e| e.example_id.clone())
                .collect::<Vec<_>>()
        };
        let a = ids(&epoch_batches(&examples, 8, 1, 1));
        assert_eq!(a, ids(&epoch_batches(&examples, 8, 1, 1)));
        assert_ne!(a, ids(&epoch_batches(&examples, 8, 1, 2)));
        let other_seed = ids(&epoch_batches(&examples, 8, 2, 1));
        assert_ne!(a, other_seed);
        let set = |v: &[String]| v.iter().cloned().collect::<HashSet<_>>();
        assert_eq!(set(&a), set(&other_seed));
        let sizes: Vec<_> = epoch_batches(&examples, 8, 1, 1)
            .iter()
            .map(Vec::len)
            .collect();
        assert_eq!(sizes, [8, 8, 4]);
    }

    #[test]
    fn empty_train_set_fails_before_adapter_use() {
        struct Panicky;
        impl ModelAdapter for Panicky {
            fn name(&self) -> &str {
                "panicky"
            }
            fn configure(&mut self, _: &TrainConfig) -> Result<(), AdapterError> {
                panic!("adapter must not be touched")
            }
            fn fit_epoch(&mut self, _: &[Vec<&DistillExample>]) -> Result<f64, AdapterError> {
                panic!("adapter must not be touched")
            }
            fn generate(&self, _: &str, _: &DecodeParams) -> Result<String, AdapterError> {
                panic!("adapter must not be touched")
            }
            fn save(&self, _: &Path) -> Result<(), AdapterError> {
                panic!("adapter must not be touched")
            }
            fn load(&mut self, _: &Path) -> Result<(), AdapterError> {
                panic!("adapter must not be touched")
            }
        }
        let err = fine_tune(&mut Panicky, &[], &[], &TrainConfig::default(), None).unwrap_err();
        assert!(matches!(err, TrainError::EmptyTrainSet));
    }

    #[test]
    fn stub_training_is_reproducible_and_logged() {
        let train: Vec<_> = (0..4)
            .map(|i| example(i, "content", 2.0 + i as f64 * 0.5))
            .collect();
        let config = TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        };
        let run = || {
            let mut stub = StubAdapter::default();
            let out = fine_tune(&mut stub, &train, &train, &config, None).unwrap();
            (stub, out)
        };
        let (stub, a) = run();
        let (_, b) = run();
        assert_eq!(a.log.without_timing(), b.log.without_timing());
        assert_eq!(a.log.epochs.len(), 2);
        assert_eq!(a.log.config.batch_size, 8);
        for ex in &train {
            assert_eq!(
                stub.generate(&ex.input_text, &config.decode).unwrap(),
                ex.target_text
            );
        }
        let dev = a.log.epochs[1].dev_qwk.as_ref().unwrap();
        assert_eq!(dev["content"], 1.0);
    }

    #[test]
    fn checkpoints_and_log_on_disk() {
        let train: Vec<_> = (0..4)
            .map(|i| example(i, "content", 1.0 + i as f64))
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let config = TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        };
        let mut stub = StubAdapter::default();
        let out = fine_tune(&mut stub, &train, &train, &config, Some(dir.path())).unwrap();
        assert_eq!(out.log.best_epoch, Some(1));
        assert!(dir.path().join("epoch-1").is_dir());
        assert!(dir.path().join("epoch-3").is_dir());
        assert!(!dir.path().join("epoch-2").exists());
        assert_eq!(out.log.selected_checkpoint.as_deref(), Some("epoch-1"));
        let log: TrainingLog =
            serde_json::from_slice(&std::fs::read(dir.path().join("log.json")).unwrap()).unwrap();
        assert_eq!(log, out.log);

        let mut reloaded = StubAdapter::default();
        reloaded.load(out.selected_checkpoint().unwrap()).unwrap();
        assert_eq!(
            reloaded
                .generate(&train[2].input_text, &config.decode)
                .unwrap(),
            train[2].target_text
        );
    }

    #[test]
    fn probe_with_stub_is_perfect() {
        let examples: Vec<_> = (0..6).map(|i| example(i, "language", 3.5)).collect();
        let mut stub = StubAdapter::default();
        let rate = overfit_probe(&mut stub, &examples, &TrainConfig::default()).unwrap();
        assert_eq!(rate, 1.0);
        let unseen: Vec<_> = (10..12).map(|i| example(i, "language", 3.5)).collect();
        let unseen_rate = exact_match_rate(&stub, &unseen, &DecodeParams::default()).unwrap();
        assert!(unseen_rate < 1.0);

        let too_many: Vec<_> = (0..17).map(|i| example(i, "language", 3.5)).collect();
        assert!(overfit_probe(&mut stub, &too_many, &TrainConfig::default()).is_err());
    }
}
