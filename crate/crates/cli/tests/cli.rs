use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rdbe_cli::config::AdapterKind;
use rdbe_cli::pipeline::{files, DEFAULT_RUN, SCORE_ONLY_RUN, ZERO_SHOT_RUN};
use rdbe_cli::{category_of, Baseline, Category, RunConfig, Session};
use rdbe_core::corpus::{EssayRecord, SplitName};
use rdbe_core::rubrics::CANONICAL_RUBRICS;
use rdbe_core::scorer::{ParseFlag, ScorePrediction};
use rdbe_core::synthesis::ReasoningAnnotation;
use rdbe_core::trainer::TrainingLog;

fn grid(i: usize) -> f64 {
    1.0 + 0.5 * (i % 9) as f64
}

fn write_csv(path: &Path, n: usize) {
    let mut out = String::from("prompt,essay,content,organization,language,total\n");
    for i in 0..n {
        let (c, o, l) = (grid(i), grid(i * 5 + 2), grid(i * 2 + 1));
        out.push_str(&format!(
            "Topic {},Essay {i} text.,{c},{o},{l},{}\n",
            i % 3,
            c + o + l
        ));
    }
    std::fs::write(path, out).unwrap();
}

fn session(root: &Path, n: usize) -> Session {
    write_csv(&root.join("corpus.csv"), n);
    let mut config = RunConfig {
        mock_endpoint: true,
        ..RunConfig::default()
    };
    config.paths.corpus = Some(root.join("corpus.csv"));
    config.paths.work_dir = root.join("work");
    config.student.adapter = AdapterKind::Stub;
    config.train.epochs = 2;
    Session::new(config).unwrap()
}

fn rdbe(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rdbe"))
        .args(args)
        .current_dir(cwd)
        .env_remove("RDBE_API_KEY")
        .output()
        .unwrap()
}

fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_file() && !path.to_string_lossy().ends_with(".meta.json") {
            out.push((path.clone(), std::fs::read(&path).unwrap()));
        }
    }
    out.sort();
    out
}

#[test]
fn ingest_reports_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let s = session(dir.path(), 20);
    let summary = s.ingest().unwrap();
    assert_eq!(
        (summary.kept, summary.train, summary.dev, summary.test),
        (20, 12, 4, 4)
    );
    let first = snapshot(&s.work_path(""));
    s.ingest().unwrap();
    assert_eq!(first, snapshot(&s.work_path("")));

    let meta = rdbe_cli::artifacts::read_meta(&s.work_path(files::SPLIT)).unwrap();
    assert_eq!(meta.seed, 22);
    assert_eq!(meta.command, "ingest");
    assert_eq!(meta.config_hash, s.config.hash());
}

#[test]
fn missing_corpus_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = rdbe(&["ingest", "--corpus", "nowhere/data.csv"], dir.path());
    assert!(!out.status.success());
    assert_eq!(out.status.code(), Some(Category::Input.exit_code()));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere/data.csv"));
}

#[test]
fn missing_api_key_fails_before_any_request() {
    let dir = tempfile::tempdir().unwrap();
    write_csv(&dir.path().join("c.csv"), 10);
    assert!(rdbe(&["ingest", "--corpus", "c.csv"], dir.path())
        .status
        .success());
    // The configured URL is unroutable; reaching it would surface as an endpoint error.
    std::fs::write(
        dir.path().join("real.toml"),
        "[endpoint]\nurl = \"http://127.0.0.1:9/v1/chat/completions\"\n",
    )
    .unwrap();
    let out = rdbe(&["--config", "real.toml", "synthesize"], dir.path());
    assert_eq!(out.status.code(), Some(Category::Config.exit_code()));
    assert!(String::from_utf8_lossy(&out.stderr).contains("RDBE_API_KEY"));
}

#[test]
fn unknown_baseline_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = rdbe(&["baseline", "few_shot"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn synthesis_is_deterministic_and_resumable() {
    let dir = tempfile::tempdir().unwrap();
    let s = session(dir.path(), 15);
    s.ingest().unwrap();
    let summary = s.synthesize(None).unwrap();
    assert_eq!(summary.splits, vec![SplitName::Train, SplitName::Dev]);
    assert_eq!(summary.annotations, (9 + 3) * 3);
    let first = std::fs::read(s.work_path(files::ANNOTATIONS)).unwrap();

    // Drop half of the cache, as if the run was interrupted.
    let cache = s.config.cache_dir();
    let mut entries: Vec<_> = std::fs::read_dir(&cache)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "index.json")
        .collect();
    entries.sort();
    for p in entries.iter().take(entries.len() / 2) {
        std::fs::remove_file(p).unwrap();
    }
    s.synthesize(None).unwrap();
    assert_eq!(
        std::fs::read(s.work_path(files::ANNOTATIONS)).unwrap(),
        first
    );

    let anns: Vec<ReasoningAnnotation> =
        rdbe_core::jsonl::read(&s.work_path(files::ANNOTATIONS)).unwrap();
    let split = s.load_split().unwrap();
    let test_ids: Vec<&str> = split.test.iter().map(|r| r.id.as_str()).collect();
    assert!(anns
        .iter()
        .all(|a| !test_ids.contains(&a.record_id.as_str())));
}

#[test]
fn dataset_covers_annotations_and_flags_dangling_ids() {
    let dir = tempfile::tempdir().unwrap();
    let s = session(dir.path(), 15);
    s.ingest().unwrap();
    s.synthesize(None).unwrap();
    let summary = s.build_dataset().unwrap();
    assert_eq!(
        summary.counts,
        vec![(SplitName::Train, 27), (SplitName::Dev, 9)]
    );

    let path = s.work_path(files::ANNOTATIONS);
    let mut anns: Vec<ReasoningAnnotation> = rdbe_core::jsonl::read(&path).unwrap();
    anns[0].record_id = "ghost".into();
    rdbe_core::jsonl::write(&path, &anns).unwrap();
    let err = s.build_dataset().unwrap_err();
    assert_eq!(category_of(&err), Some(Category::Input));
    assert!(format!("{err:#}").contains("ghost"));
}

#[test]
fn train_logs_defaults_and_rejects_empty_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = session(dir.path(), 15);
    s.config.train.epochs = 15;
    s.ingest().unwrap();
    s.synthesize(None).unwrap();
    s.build_dataset().unwrap();
    let summary = s.train(DEFAULT_RUN, None).unwrap();
    assert_eq!((summary.epochs, summary.batch_size), (15, 8));
    let log: TrainingLog =
        serde_json::from_slice(&std::fs::read(s.run_dir(DEFAULT_RUN).join("log.json")).unwrap())
            .unwrap();
    assert_eq!((log.config.epochs, log.config.batch_size), (15, 8));
    assert_eq!(log.epochs.len(), 15);

    let empty = dir.path().join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    std::fs::write(empty.join("train.jsonl"), "").unwrap();
    let err = s.train("empty", Some(&empty)).unwrap_err();
    assert_eq!(category_of(&err), Some(Category::Input));
}

#[test]
fn predict_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let s = session(dir.path(), 20);
    s.ingest().unwrap();
    s.synthesize(None).unwrap();
    s.build_dataset().unwrap();
    s.train(DEFAULT_RUN, None).unwrap();
    let first = s.predict(DEFAULT_RUN, None, None).unwrap();
    let split = s.load_split().unwrap();
    assert_eq!(first.summary.predictions, split.test.len() * 3);
    // Test essays were never fitted, so the stub falls back on all of them.
    assert_eq!(first.summary.fallback_rate, 1.0);
    let bytes = std::fs::read(&first.path).unwrap();
    s.predict(DEFAULT_RUN, None, None).unwrap();
    assert_eq!(std::fs::read(&first.path).unwrap(), bytes);

    // Gold scores as predictions give perfect agreement.
    let gold: Vec<ScorePrediction> = gold_predictions(&split.test);
    let gold_path = dir.path().join("gold.jsonl");
    rdbe_core::jsonl::write(&gold_path, &gold).unwrap();
    let report = s.evaluate(Some(&gold_path), None).unwrap();
    let cells = report.cells();
    assert_eq!(cells.len(), 4);
    assert!(cells.iter().all(|(_, v)| *v == 1.0), "{cells:?}");
    assert!(s.work_path(files::REPORTS_DIR).join("gold.txt").exists());

    let partial = &gold[..gold.len() - 1];
    rdbe_core::jsonl::write(&gold_path, partial).unwrap();
    let err = s.evaluate(Some(&gold_path), None).unwrap_err();
    assert_eq!(category_of(&err), Some(Category::Evaluation));
}

fn gold_predictions(records: &[EssayRecord]) -> Vec<ScorePrediction> {
    records
        .iter()
        .flat_map(|r| {
            CANONICAL_RUBRICS.iter().map(move |rubric| {
                let score = r.score_for(rubric).unwrap();
                ScorePrediction {
                    record_id: r.id.clone(),
                    rubric_id: rubric.to_string(),
                    raw_output: format!("gold ---> {score}"),
                    reasoning: "gold".into(),
                    score,
                    parse_flag: ParseFlag::Exact,
                }
            })
        })
        .collect()
}

#[test]
fn baselines() {
    let dir = tempfile::tempdir().unwrap();
    let s = session(dir.path(), 15);
    s.ingest().unwrap();
    let a = s.baseline(Baseline::ZeroShot).unwrap();
    assert_eq!(a.path, s.predictions_path(ZERO_SHOT_RUN));
    let bytes = std::fs::read(&a.path).unwrap();
    s.baseline(Baseline::ZeroShot).unwrap();
    assert_eq!(std::fs::read(&a.path).unwrap(), bytes);
    assert_eq!(a.summary.fallback, 0);

    let b = s.baseline(Baseline::ScoreOnly).unwrap();
    assert_eq!(b.path, s.predictions_path(SCORE_ONLY_RUN));
    let train = rdbe_core::distillset::read_dataset(
        &s.work_path(files::SCORE_ONLY_DATASET_DIR)
            .join("train.jsonl"),
    )
    .unwrap();
    assert_eq!(train.len(), 9 * 3);
    assert!(train
        .iter()
        .all(|ex| ex.target_text == format!("{}{}", rdbe_core::SCORE_MARKER, ex.gold_score)));
}
