use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context as _};
use chrono::{DateTime, Utc};
use rdbe_core::corpus::{
    apply_manifest, clean_corpus, load_corpus, split_corpus, CorpusSplit, EssayRecord,
    SplitAssignment, SplitName,
};
use rdbe_core::distillset::{
    build_dataset, build_score_only_dataset, read_dataset, write_dataset, DistillExample,
};
use rdbe_core::metrics::{evaluate_run, EvalReport};
use rdbe_core::rubrics::{default_registry, load_registry, RubricRegistry, ScoreGrid};
use rdbe_core::scorer::{
    parse_score, score_corpus, zero_shot_corpus, ParseFlag, ScorePrediction, ScoringOutcome,
    ScoringSummary,
};
use rdbe_core::synthesis::{
    synthesize_corpus, AnnotationCache, Clock, HttpClient, LlmClient, MockTeacher,
    ReasoningAnnotation, SynthesisError, SynthesisOptions, TeacherProfile,
};
use rdbe_core::trainer::{
    fine_tune, ModelAdapter, ProcessAdapter, Seq2SeqAdapter, StubAdapter, TrainError, TrainingLog,
};
use serde::Serialize;

use crate::artifacts::Stamp;
use crate::config::{AdapterKind, RunConfig};
use crate::Category;

pub const MOCK_MODEL_ID: &str = "mock-teacher";
pub const DEFAULT_RUN: &str = "rdbe";
pub const SCORE_ONLY_RUN: &str = "score_only";
pub const ZERO_SHOT_RUN: &str = "zero_shot";

/// Well-known files under the work directory.
pub mod files {
    pub const CORPUS: &str = "corpus.jsonl";
    pub const REJECTIONS: &str = "rejections.jsonl";
    pub const SPLIT: &str = "split.jsonl";
    pub const ANNOTATIONS: &str = "annotations.jsonl";
    pub const SYNTHESIS_FAILURES: &str = "synthesis_failures.jsonl";
    pub const DATASET_DIR: &str = "dataset";
    pub const SCORE_ONLY_DATASET_DIR: &str = "dataset_score_only";
    pub const PREDICTIONS_DIR: &str = "predictions";
    pub const REPORTS_DIR: &str = "reports";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    ZeroShot,
    ScoreOnly,
}

pub struct Session {
    pub config: RunConfig,
    started_at: DateTime<Utc>,
}

fn categorize<T, E>(result: Result<T, E>, category: Category) -> anyhow::Result<T>
where
    E: std::error::Error + Send + Sync + 'static,
{
    result.map_err(anyhow::Error::from).context(category)
}

impl Session {
    pub fn new(config: RunConfig) -> anyhow::Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            started_at: Utc::now(),
        })
    }

    fn stamp(&self, command: &str) -> Stamp {
        Stamp {
            command: command.to_string(),
            config_hash: self.config.hash(),
            seed: self.config.split.seed,
            ratios: self.config.split.ratios,
            started_at: self.started_at,
        }
    }

    pub fn work_path(&self, name: &str) -> PathBuf {
        self.config.paths.work_dir.join(name)
    }

    pub fn predictions_path(&self, run_id: &str) -> PathBuf {
        self.work_path(files::PREDICTIONS_DIR)
            .join(format!("{run_id}.jsonl"))
    }

    pub fn run_dir(&self, run_id: &str) -> PathBuf {
        self.config.runs_dir().join(run_id)
    }

    pub fn registry(&self) -> anyhow::Result<RubricRegistry> {
        match &self.config.paths.rubrics {
            Some(path) => categorize(load_registry(path), Category::Config)
                .with_context(|| format!("rubric config {}", path.display())),
            None => Ok(default_registry()),
        }
    }

    fn read_jsonl<T: serde::de::DeserializeOwned>(
        &self,
        path: &Path,
        hint: &str,
    ) -> anyhow::Result<Vec<T>> {
        if !path.exists() {
            return Err(anyhow!(
                "{} not found; run `rdbe {hint}` first",
                path.display()
            ))
            .context(Category::Input);
        }
        categorize(rdbe_core::jsonl::read(path), Category::Input)
    }

    pub fn load_split(&self) -> anyhow::Result<CorpusSplit> {
        let records: Vec<EssayRecord> =
            self.read_jsonl(&self.work_path(files::CORPUS), "ingest")?;
        let manifest: Vec<SplitAssignment> =
            self.read_jsonl(&self.work_path(files::SPLIT), "ingest")?;
        let split = &self.config.split;
        categorize(
            apply_manifest(&records, &manifest, split.ratios, split.seed),
            Category::Input,
        )
    }

    fn teacher_profile(&self) -> TeacherProfile {
        let model_id = if self.config.mock_endpoint {
            MOCK_MODEL_ID.to_string()
        } else {
            self.config.endpoint.model_id.clone()
        };
        TeacherProfile {
            model_id,
            ..TeacherProfile::default()
        }
    }

    /// Mock teacher in mock mode; otherwise an HTTP client, which fails
    /// before any network traffic when the API key variable is unset.
    pub fn client(&self) -> anyhow::Result<Box<dyn LlmClient>> {
        if self.config.mock_endpoint {
            return Ok(Box::new(MockTeacher));
        }
        let client = categorize(
            HttpClient::from_env(&self.config.endpoint),
            Category::Config,
        )?;
        Ok(Box::new(client))
    }

    pub fn adapter(&self) -> anyhow::Result<Box<dyn ModelAdapter>> {
        let student = &self.config.student;
        Ok(match student.adapter {
            AdapterKind::Stub => Box::new(StubAdapter::default()),
            AdapterKind::Seq2seq => Box::new(categorize(
                Seq2SeqAdapter::new(student.seq2seq.clone()),
                Category::Config,
            )?),
            AdapterKind::Process => {
                let cfg = student
                    .process
                    .clone()
                    .ok_or_else(|| {
                        anyhow!("student.adapter = \"process\" needs a [student.process] table")
                    })
                    .context(Category::Config)?;
                Box::new(categorize(ProcessAdapter::spawn(cfg), Category::Training)?)
            }
        })
    }

    pub fn ingest(&self) -> anyhow::Result<IngestSummary> {
        let stamp = self.stamp("ingest");
        let path = self
            .config
            .paths
            .corpus
            .clone()
            .ok_or_else(|| anyhow!("no corpus path: set paths.corpus or pass --corpus"))
            .context(Category::Config)?;
        let delimiter = self.config.corpus.delimiter as u8;
        let raw = categorize(
            load_corpus(&path, &self.config.corpus.columns, delimiter),
            Category::Input,
        )?;
        let (records, report) = clean_corpus(&raw);
        let split = &self.config.split;
        let partition = categorize(
            split_corpus(&records, split.ratios, split.seed),
            Category::Input,
        )?;

        stamp.write_jsonl(&self.work_path(files::CORPUS), &records)?;
        stamp.write_jsonl(&self.work_path(files::REJECTIONS), &report.rejected)?;
        stamp.write_jsonl(&self.work_path(files::SPLIT), &partition.manifest())?;

        let (train, dev, test) = partition.sizes();
        Ok(IngestSummary {
            rows: raw.len(),
            kept: records.len(),
            rejected: report.rejected.len(),
            train,
            dev,
            test,
            seed: split.seed,
        })
    }

    pub fn synthesize(&self, splits: Option<&[SplitName]>) -> anyhow::Result<SynthesisSummary> {
        let stamp = self.stamp("synthesize");
        let split = self.load_split()?;
        let registry = self.registry()?;
        let splits = splits.unwrap_or(&self.config.synthesis.splits);
        let records: Vec<EssayRecord> = splits
            .iter()
            .flat_map(|s| split.partition(*s).iter().cloned())
            .collect();
        let client = self.client()?;
        let cache = categorize(AnnotationCache::open(self.config.cache_dir()), Category::Io)?;
        let settings = &self.config.synthesis;
        let options = SynthesisOptions {
            profile: self.teacher_profile(),
            retry: settings.retry.clone(),
            parallelism: self.config.endpoint.parallelism.max(1),
            clock: if self.config.mock_endpoint {
                Clock::Fixed(DateTime::<Utc>::UNIX_EPOCH)
            } else {
                Clock::System
            },
            score_source: settings.score_source,
            zero_shot_template: settings.zero_shot_template.clone(),
        };
        let outcome =
            synthesize_corpus(&*client, &records, &registry, &cache, &options).map_err(|e| {
                let category = match &e {
                    SynthesisError::Client(_) => Category::Endpoint,
                    SynthesisError::Cache(_) => Category::Io,
                    _ => Category::Input,
                };
                anyhow::Error::from(e).context(category)
            })?;

        stamp.write_jsonl(&self.work_path(files::ANNOTATIONS), &outcome.annotations)?;
        stamp.write_jsonl(
            &self.work_path(files::SYNTHESIS_FAILURES),
            &outcome.failures,
        )?;
        Ok(SynthesisSummary {
            splits: splits.to_vec(),
            requested: records.len() * registry.len(),
            annotations: outcome.annotations.len(),
            failures: outcome.failures.len(),
            cache_entries: cache.len(),
        })
    }

    pub fn build_dataset(&self) -> anyhow::Result<DatasetSummary> {
        let stamp = self.stamp("build-dataset");
        let split = self.load_split()?;
        let registry = self.registry()?;
        let annotations: Vec<ReasoningAnnotation> =
            self.read_jsonl(&self.work_path(files::ANNOTATIONS), "synthesize")?;
        let all: Vec<EssayRecord> = [SplitName::Train, SplitName::Dev, SplitName::Test]
            .iter()
            .flat_map(|s| split.partition(*s).iter().cloned())
            .collect();
        let examples = categorize(
            build_dataset(&annotations, &all, &registry),
            Category::Input,
        )?;
        round_trip_check(&examples, &self.config)?;
        let counts = self.write_split_datasets(&stamp, &split, examples, files::DATASET_DIR)?;
        Ok(DatasetSummary {
            annotations: annotations.len(),
            counts,
            round_trip: true,
        })
    }

    fn write_split_datasets(
        &self,
        stamp: &Stamp,
        split: &CorpusSplit,
        examples: Vec<DistillExample>,
        dir: &str,
    ) -> anyhow::Result<Vec<(SplitName, usize)>> {
        let membership: HashMap<String, SplitName> = split
            .manifest()
            .into_iter()
            .map(|a| (a.id, a.split))
            .collect();
        let mut by_split: Vec<(SplitName, Vec<DistillExample>)> =
            [SplitName::Train, SplitName::Dev, SplitName::Test]
                .into_iter()
                .map(|s| (s, Vec::new()))
                .collect();
        for ex in examples {
            let name = membership[&ex.record_id];
            by_split
                .iter_mut()
                .find(|(s, _)| *s == name)
                .expect("known split")
                .1
                .push(ex);
        }
        let mut counts = Vec::new();
        for (name, items) in by_split {
            if items.is_empty() && name == SplitName::Test {
                continue;
            }
            let path = self.work_path(dir).join(format!("{name}.jsonl"));
            categorize(write_dataset(&path, &items), Category::Io)?;
            let bytes = std::fs::read(&path).context(Category::Io)?;
            stamp.write_meta(&path, &bytes)?;
            counts.push((name, items.len()));
        }
        Ok(counts)
    }

    fn load_examples(
        &self,
        dir: &Path,
        split: SplitName,
        required: bool,
    ) -> anyhow::Result<Vec<DistillExample>> {
        let path = dir.join(format!("{split}.jsonl"));
        if !path.exists() {
            if required {
                return Err(anyhow!(
                    "{} not found; run `rdbe build-dataset` first",
                    path.display()
                ))
                .context(Category::Input);
            }
            return Ok(Vec::new());
        }
        categorize(read_dataset(&path), Category::Input)
    }

    pub fn train(&self, run_id: &str, dataset_dir: Option<&Path>) -> anyhow::Result<TrainSummary> {
        let stamp = self.stamp("train");
        let dataset_dir = dataset_dir
            .map(Path::to_path_buf)
            .unwrap_or_else(|| self.work_path(files::DATASET_DIR));
        let mut train = Vec::new();
        for s in &self.config.student.fit_splits {
            train.extend(self.load_examples(&dataset_dir, *s, *s == SplitName::Train)?);
        }
        if self.config.student.fit_splits.contains(&SplitName::Test) {
            log::warn!(
                "student.fit_splits includes the test split; evaluation scores are not held out"
            );
        }
        let dev = self.load_examples(&dataset_dir, SplitName::Dev, false)?;
        let mut adapter = self.adapter()?;
        let run_dir = self.run_dir(run_id);
        let outcome = fine_tune(
            &mut *adapter,
            &train,
            &dev,
            &self.config.train,
            Some(&run_dir),
        )
        .map_err(|e| {
            let category = match e {
                TrainError::EmptyTrainSet => Category::Input,
                TrainError::InvalidConfig(_) => Category::Config,
                TrainError::Io { .. } => Category::Io,
                TrainError::Adapter { .. } => Category::Training,
            };
            anyhow::Error::from(e).context(category)
        })?;
        let log_path = run_dir.join("log.json");
        stamp.write_meta(
            &log_path,
            &serde_json::to_vec(&outcome.log.without_timing())?,
        )?;
        Ok(TrainSummary {
            run_id: run_id.to_string(),
            adapter: outcome.log.adapter.clone(),
            epochs: outcome.log.config.epochs,
            batch_size: outcome.log.config.batch_size,
            train_examples: outcome.log.train_examples,
            dev_examples: outcome.log.dev_examples,
            final_loss: outcome.log.epochs.last().map(|e| e.mean_loss),
            checkpoint: outcome.selected_checkpoint().map(Path::to_path_buf),
        })
    }

    pub fn selected_checkpoint(&self, run_id: &str) -> anyhow::Result<PathBuf> {
        let run_dir = self.run_dir(run_id);
        let log_path = run_dir.join("log.json");
        let bytes = std::fs::read(&log_path)
            .with_context(|| format!("{} not found; run `rdbe train` first", log_path.display()))
            .context(Category::Input)?;
        let log: TrainingLog = serde_json::from_slice(&bytes).context(Category::Input)?;
        let rel = log
            .selected_checkpoint
            .ok_or_else(|| anyhow!("run {run_id} has no selected checkpoint"))
            .context(Category::Input)?;
        Ok(run_dir.join(rel))
    }

    pub fn predict(
        &self,
        run_id: &str,
        checkpoint: Option<&Path>,
        output: Option<&Path>,
    ) -> anyhow::Result<PredictSummary> {
        let stamp = self.stamp("predict");
        let checkpoint = match checkpoint {
            Some(p) => p.to_path_buf(),
            None => self.selected_checkpoint(run_id)?,
        };
        let split = self.load_split()?;
        let registry = self.registry()?;
        let mut adapter = self.adapter()?;
        categorize(adapter.load(&checkpoint), Category::Training)
            .with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
        let outcome = score_corpus(
            &*adapter,
            &split.test,
            &registry,
            &self.config.train.decode,
            &self.config.eval.fallback,
        );
        let path = output
            .map(Path::to_path_buf)
            .unwrap_or_else(|| self.predictions_path(run_id));
        self.write_predictions(&stamp, &path, &outcome)
    }

    fn write_predictions(
        &self,
        stamp: &Stamp,
        path: &Path,
        outcome: &ScoringOutcome,
    ) -> anyhow::Result<PredictSummary> {
        stamp.write_jsonl(path, &outcome.predictions)?;
        let failures = path.with_extension("failures.jsonl");
        if outcome.failures.is_empty() {
            let _ = std::fs::remove_file(&failures);
        } else {
            stamp.write_jsonl(&failures, &outcome.failures)?;
        }
        Ok(PredictSummary {
            path: path.to_path_buf(),
            summary: outcome.summary.clone(),
        })
    }

    pub fn evaluate(
        &self,
        predictions: Option<&Path>,
        output: Option<&Path>,
    ) -> anyhow::Result<EvalReport> {
        let stamp = self.stamp("evaluate");
        let path = predictions
            .map(Path::to_path_buf)
            .unwrap_or_else(|| self.predictions_path(DEFAULT_RUN));
        let preds: Vec<ScorePrediction> = self.read_jsonl(&path, "predict")?;
        let split = self.load_split()?;
        let registry = self.registry()?;
        let mut report = categorize(
            evaluate_run(&preds, &split.test, &registry),
            Category::Evaluation,
        )?;
        report.metadata = serde_json::json!({
            "predictions": path.file_name().map(|n| n.to_string_lossy().into_owned()),
            "config_hash": self.config.hash(),
            "seed": self.config.split.seed,
            "ratios": self.config.split.ratios,
        });
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "report".into());
        let out = output.map(Path::to_path_buf).unwrap_or_else(|| {
            self.work_path(files::REPORTS_DIR)
                .join(format!("{stem}.json"))
        });
        stamp.write_json(&out, &report)?;
        stamp.write(
            &out.with_extension("txt"),
            format!("{report}\n").as_bytes(),
            None,
        )?;
        Ok(report)
    }

    pub fn baseline(&self, which: Baseline) -> anyhow::Result<PredictSummary> {
        match which {
            Baseline::ZeroShot => {
                let stamp = self.stamp("baseline");
                let split = self.load_split()?;
                let registry = self.registry()?;
                let client = self.client()?;
                let outcome = categorize(
                    zero_shot_corpus(
                        &*client,
                        &split.test,
                        &registry,
                        &self.config.synthesis.zero_shot_template,
                        &self.teacher_profile(),
                        &self.config.synthesis.retry,
                    ),
                    Category::Endpoint,
                )?;
                self.write_predictions(&stamp, &self.predictions_path(ZERO_SHOT_RUN), &outcome)
            }
            Baseline::ScoreOnly => {
                let stamp = self.stamp("baseline");
                let split = self.load_split()?;
                let registry = self.registry()?;
                let mut examples = Vec::new();
                for s in [SplitName::Train, SplitName::Dev, SplitName::Test] {
                    if s == SplitName::Dev || self.config.student.fit_splits.contains(&s) {
                        examples.extend(build_score_only_dataset(split.partition(s), &registry));
                    }
                }
                self.write_split_datasets(&stamp, &split, examples, files::SCORE_ONLY_DATASET_DIR)?;
                let dir = self.work_path(files::SCORE_ONLY_DATASET_DIR);
                self.train(SCORE_ONLY_RUN, Some(&dir))?;
                self.predict(SCORE_ONLY_RUN, None, None)
            }
        }
    }
}

/// Every target must parse back to its gold score with flag `exact`.
fn round_trip_check(examples: &[DistillExample], config: &RunConfig) -> anyhow::Result<()> {
    let grid = ScoreGrid::default();
    for ex in examples {
        let parsed = parse_score(&ex.target_text, &grid, &config.eval.fallback);
        if parsed.flag != ParseFlag::Exact || parsed.score != ex.gold_score {
            return Err(anyhow!(
                "round-trip check failed for {}: parsed {} ({:?}), gold {}",
                ex.example_id,
                parsed.score,
                parsed.flag,
                ex.gold_score
            ))
            .context(Category::Input);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IngestSummary {
    pub rows: usize,
    pub kept: usize,
    pub rejected: usize,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub seed: u64,
}

impl fmt::Display for IngestSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "read {} rows: kept {}, rejected {}",
            self.rows, self.kept, self.rejected
        )?;
        write!(
            f,
            "split train/dev/test = {}/{}/{} (seed {})",
            self.train, self.dev, self.test, self.seed
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthesisSummary {
    pub splits: Vec<SplitName>,
    pub requested: usize,
    pub annotations: usize,
    pub failures: usize,
    pub cache_entries: usize,
}

impl fmt::Display for SynthesisSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let splits: Vec<String> = self.splits.iter().map(ToString::to_string).collect();
        write!(
            f,
            "synthesized {} of {} annotations over {} ({} failures, {} cached prompts)",
            self.annotations,
            self.requested,
            splits.join("+"),
            self.failures,
            self.cache_entries
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub annotations: usize,
    pub counts: Vec<(SplitName, usize)>,
    pub round_trip: bool,
}

impl fmt::Display for DatasetSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .counts
            .iter()
            .map(|(s, n)| format!("{s} {n}"))
            .collect();
        write!(
            f,
            "built {} examples from {} annotations ({}); round-trip ok",
            self.counts.iter().map(|(_, n)| n).sum::<usize>(),
            self.annotations,
            parts.join(", ")
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub run_id: String,
    pub adapter: String,
    pub epochs: usize,
    pub batch_size: usize,
    pub train_examples: usize,
    pub dev_examples: usize,
    pub final_loss: Option<f64>,
    pub checkpoint: Option<PathBuf>,
}

impl fmt::Display for TrainSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "run {}: {} adapter, {} epochs, batch size {}, {} train / {} dev examples",
            self.run_id,
            self.adapter,
            self.epochs,
            self.batch_size,
            self.train_examples,
            self.dev_examples
        )?;
        match self.final_loss {
            Some(l) => write!(f, "final loss {l:.4}")?,
            None => write!(f, "no epochs run")?,
        }
        if let Some(c) = &self.checkpoint {
            write!(f, "; checkpoint {}", c.display())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictSummary {
    pub path: PathBuf,
    pub summary: ScoringSummary,
}

impl fmt::Display for PredictSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = &self.summary;
        write!(
            f,
            "wrote {} predictions to {} (exact {}, snapped {}, fallback {}, failed {}); fallback rate {:.4}",
            s.predictions,
            self.path.display(),
            s.exact,
            s.snapped,
            s.fallback,
            s.failures,
            s.fallback_rate
        )
    }
}
