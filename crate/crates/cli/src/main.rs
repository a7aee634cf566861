use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context as _;
use clap::{Parser, Subcommand, ValueEnum};
use rdbe_cli::config::AdapterKind;
use rdbe_cli::pipeline::DEFAULT_RUN;
use rdbe_cli::{category_of, Baseline, Category, RunConfig, Session};
use rdbe_core::corpus::SplitName;

#[derive(Parser)]
#[command(
    name = "rdbe",
    version,
    about = "Rationale-distilled analytic essay scoring pipeline"
)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Use the deterministic built-in teacher instead of the HTTP endpoint.
    #[arg(long, global = true)]
    mock_endpoint: bool,
    /// Use the memorizing stub student instead of the configured adapter.
    #[arg(long, global = true)]
    stub_adapter: bool,
    /// Overrides both the split seed and the batch shuffle seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides paths.work_dir.
    #[arg(long, global = true)]
    work_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load, validate and split the corpus.
    Ingest {
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Generate teacher reasoning for the configured splits.
    Synthesize {
        /// Comma-separated splits, e.g. train,dev.
        #[arg(long, value_delimiter = ',')]
        splits: Option<Vec<SplitArg>>,
    },
    /// Turn annotations into input/target datasets per split.
    BuildDataset,
    /// Fine-tune the student on the distillation dataset.
    Train {
        #[arg(long, default_value = DEFAULT_RUN)]
        run_id: String,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Score the test split with a trained checkpoint.
    Predict {
        #[arg(long, default_value = DEFAULT_RUN)]
        run_id: String,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Compute per-rubric and total QWK for a predictions file.
    Evaluate {
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Produce predictions for a comparison baseline.
    Baseline {
        #[arg(value_enum)]
        which: BaselineArg,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Dev,
    Test,
}

impl From<SplitArg> for SplitName {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => SplitName::Train,
            SplitArg::Dev => SplitName::Dev,
            SplitArg::Test => SplitName::Test,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineArg {
    #[value(name = "zero_shot", alias = "zero-shot")]
    ZeroShot,
    #[value(name = "score_only", alias = "score-only")]
    ScoreOnly,
}

fn build_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => {
            let mut c = RunConfig::default();
            let cwd = std::env::current_dir().context(Category::Io)?;
            c.resolve_relative(&cwd);
            c
        }
    };
    if cli.mock_endpoint {
        config.mock_endpoint = true;
    }
    if cli.stub_adapter {
        config.student.adapter = AdapterKind::Stub;
    }
    if let Some(seed) = cli.seed {
        config.split.seed = seed;
        config.train.shuffle_seed = seed;
    }
    if let Some(dir) = &cli.work_dir {
        config.paths.work_dir = dir.clone();
    }
    if let Command::Ingest { corpus: Some(path) } = &cli.command {
        config.paths.corpus = Some(path.clone());
    }
    Ok(config)
}

fn run(cli: Cli) -> anyhow::Result<String> {
    let session = Session::new(build_config(&cli)?)?;
    Ok(match cli.command {
        Command::Ingest { .. } => session.ingest()?.to_string(),
        Command::Synthesize { splits } => {
            let splits: Option<Vec<SplitName>> =
                splits.map(|v| v.into_iter().map(Into::into).collect());
            session.synthesize(splits.as_deref())?.to_string()
        }
        Command::BuildDataset => session.build_dataset()?.to_string(),
        Command::Train { run_id, dataset } => {
            session.train(&run_id, dataset.as_deref())?.to_string()
        }
        Command::Predict {
            run_id,
            checkpoint,
            output,
        } => session
            .predict(&run_id, checkpoint.as_deref(), output.as_deref())?
            .to_string(),
        Command::Evaluate {
            predictions,
            output,
        } => {
            let report = session.evaluate(predictions.as_deref(), output.as_deref())?;
            format!("{report}")
        }
        Command::Baseline { which } => {
            let which = match which {
                BaselineArg::ZeroShot => Baseline::ZeroShot,
                BaselineArg::ScoreOnly => Baseline::ScoreOnly,
            };
            session.baseline(which)?.to_string()
        }
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = category_of(&err).map(Category::exit_code).unwrap_or(1);
            ExitCode::from(code as u8)
        }
    }
}
