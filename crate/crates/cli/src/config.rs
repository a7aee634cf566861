use std::path::{Path, PathBuf};

use anyhow::Context as _;
use rdbe_core::corpus::{ColumnMap, SplitName, SplitRatios};
use rdbe_core::scorer::{FallbackPolicy, PromptTemplate};
use rdbe_core::synthesis::{EndpointConfig, RetryPolicy, ScoreSource};
use rdbe_core::trainer::{ProcessConfig, Seq2SeqConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Category;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub work_dir: PathBuf,
    /// Defaults to `<work_dir>/cache`.
    pub cache_dir: Option<PathBuf>,
    /// Defaults to `<work_dir>/runs`.
    pub runs_dir: Option<PathBuf>,
    /// Rubric registry override file; the packaged defaults are used when unset.
    pub rubrics: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            corpus: None,
            work_dir: PathBuf::from("work"),
            cache_dir: None,
            runs_dir: None,
            rubrics: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSettings {
    pub delimiter: char,
    pub columns: ColumnMap,
}

impl Default for CorpusSettings {
    fn default() -> Self {
        Self {
            delimiter: ',',
            columns: ColumnMap::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSettings {
    pub ratios: SplitRatios,
    pub seed: u64,
}

impl Default for SplitSettings {
    fn default() -> Self {
        Self {
            ratios: SplitRatios::default(),
            seed: 22,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisSettings {
    pub splits: Vec<SplitName>,
    pub retry: RetryPolicy,
    pub score_source: ScoreSource,
    pub zero_shot_template: PromptTemplate,
}

impl Default for SynthesisSettings {
    fn default() -> Self {
        Self {
            splits: vec![SplitName::Train, SplitName::Dev],
            retry: RetryPolicy::default(),
            score_source: ScoreSource::Gold,
            zero_shot_template: PromptTemplate::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdapterKind {
    #[default]
    Seq2seq,
    Process,
    Stub,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudentSettings {
    pub adapter: AdapterKind,
    /// Dataset splits the student is fitted on.
    pub fit_splits: Vec<SplitName>,
    pub seq2seq: Seq2SeqConfig,
    pub process: Option<ProcessConfig>,
}

impl Default for StudentSettings {
    fn default() -> Self {
        Self {
            adapter: AdapterKind::default(),
            fit_splits: vec![SplitName::Train],
            seq2seq: Seq2SeqConfig::default(),
            process: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    pub fallback: FallbackPolicy,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Use the built-in deterministic teacher instead of the HTTP endpoint.
    pub mock_endpoint: bool,
    pub paths: Paths,
    pub corpus: CorpusSettings,
    pub split: SplitSettings,
    pub endpoint: EndpointConfig,
    pub synthesis: SynthesisSettings,
    pub train: TrainConfig,
    pub student: StudentSettings,
    pub eval: EvalSettings,
}

impl RunConfig {
    /// Parse a TOML config. Relative paths are resolved against the file's directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))
            .context(Category::Config)?;
        let mut config: RunConfig = toml::from_str(&text)
            .with_context(|| format!("invalid config {}", path.display()))
            .context(Category::Config)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_relative(base);
        Ok(config)
    }

    pub fn resolve_relative(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let paths = &mut self.paths;
        fix(&mut paths.work_dir);
        for p in [
            &mut paths.corpus,
            &mut paths.cache_dir,
            &mut paths.runs_dir,
            &mut paths.rubrics,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.paths
            .cache_dir
            .clone()
            .unwrap_or_else(|| self.paths.work_dir.join("cache"))
    }

    pub fn runs_dir(&self) -> PathBuf {
        self.paths
            .runs_dir
            .clone()
            .unwrap_or_else(|| self.paths.work_dir.join("runs"))
    }

    /// sha256 over the canonical JSON form of the effective config.
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        hex::encode(Sha256::digest(value.to_string().as_bytes()))
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.split
            .ratios
            .validate()
            .map_err(anyhow::Error::from)
            .context(Category::Config)?;
        self.train
            .validate()
            .map_err(anyhow::Error::from)
            .context(Category::Config)?;
        if !self.corpus.delimiter.is_ascii() {
            return Err(anyhow::anyhow!(
                "delimiter must be a single ASCII character"
            ))
            .context(Category::Config);
        }
        if self.student.fit_splits.is_empty() {
            return Err(anyhow::anyhow!("student.fit_splits is empty")).context(Category::Config);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_setup() {
        let c = RunConfig::default();
        assert_eq!(c.train.epochs, 15);
        assert_eq!(c.train.batch_size, 8);
        assert_eq!(c.split.seed, 22);
        assert_eq!(c.synthesis.splits, vec![SplitName::Train, SplitName::Dev]);
        assert_eq!(c.endpoint.api_key_env, "RDBE_API_KEY");
        c.validate().unwrap();
    }

    #[test]
    fn partial_toml_fills_defaults_and_resolves_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            "[paths]\ncorpus = \"data.csv\"\n[train]\nepochs = 2\n[split]\nseed = 5\n",
        )
        .unwrap();
        let c = RunConfig::load(&path).unwrap();
        assert_eq!(c.paths.corpus.unwrap(), dir.path().join("data.csv"));
        assert_eq!(c.paths.work_dir, dir.path().join("work"));
        assert_eq!(c.train.epochs, 2);
        assert_eq!(c.train.batch_size, 8);
        assert_eq!(c.split.seed, 5);
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.split.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn bad_toml_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.toml");
        std::fs::write(&path, "[train\n").unwrap();
        let err = RunConfig::load(&path).unwrap_err();
        assert_eq!(err.downcast_ref::<Category>(), Some(&Category::Config));
    }

    #[test]
    fn shipped_configs_parse() {
        let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        let full = RunConfig::load(&root.join("full_scale.toml")).unwrap();
        full.validate().unwrap();
        assert_eq!(full.student.adapter, AdapterKind::Process);
        assert_eq!(full.corpus.delimiter, '\t');
        assert_eq!((full.train.epochs, full.train.batch_size), (15, 8));
        let smoke = RunConfig::load(&root.join("smoke.toml")).unwrap();
        assert!(smoke.mock_endpoint);
        assert!(smoke.paths.corpus.unwrap().exists());
    }
}
