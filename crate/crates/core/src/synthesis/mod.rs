//! Teacher reasoning synthesis.
//!
//! Each (record, rubric, score) triple becomes one chat prompt: the fixed
//! evaluator system message plus a user message with `[Subject]`, `[Essay]`,
//! `[Scoring Rubric]` and `[Score]` blocks in that order. Responses are cached
//! by prompt hash so interrupted runs resume without repeating requests.

mod cache;
mod client;

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, Ordering};

use chrono::{DateTime, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use cache::AnnotationCache;
pub use client::{
    complete_with_retry, ClientError, CountingClient, EndpointConfig, HttpClient, LlmClient,
    MockTeacher, RetryPolicy, ScriptedClient,
};

use crate::corpus::EssayRecord;
use crate::jsonl::JsonlError;
use crate::rubrics::{RubricRegistry, RubricSpec, Score};
use crate::scorer::{self, PromptTemplate};

/// Evaluator system message sent with every reasoning request.
pub const SYSTEM_MESSAGE: &str = include_str!("../../config/system_message.txt");

pub const SUBJECT_TAG: &str = "[Subject]";
pub const ESSAY_TAG: &str = "[Essay]";
pub const RUBRIC_TAG: &str = "[Scoring Rubric]";
pub const SCORE_TAG: &str = "[Score]";

#[derive(Debug, thiserror::Error)]
pub enum SynthesisError {
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("teacher returned empty reasoning twice for prompt {0}")]
    EmptyReasoning(String),
    #[error("annotation cache error: {0}")]
    Cache(#[from] JsonlError),
    #[error("record `{record_id}` has no gold score for rubric `{rubric_id}`")]
    MissingGold {
        record_id: String,
        rubric_id: String,
    },
    #[error("thread pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationParams {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_tokens: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatPrompt {
    pub system: String,
    pub user: String,
    pub model_id: String,
    pub params: GenerationParams,
}

impl ChatPrompt {
    /// SHA-256 over a canonical JSON encoding of model, messages and params.
    pub fn prompt_hash(&self) -> String {
        #[derive(Serialize)]
        struct Canonical<'a> {
            model_id: &'a str,
            system: &'a str,
            user: &'a str,
            temperature: f64,
            max_tokens: u32,
        }
        let canonical = Canonical {
            model_id: &self.model_id,
            system: &self.system,
            user: &self.user,
            temperature: self.params.temperature,
            max_tokens: self.params.max_tokens,
        };
        let bytes = serde_json::to_vec(&canonical).expect("plain struct serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

/// Model, system message and decoding parameters for teacher requests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherProfile {
    pub model_id: String,
    pub system: String,
    pub params: GenerationParams,
}

impl Default for TeacherProfile {
    fn default() -> Self {
        Self {
            model_id: EndpointConfig::default().model_id,
            system: SYSTEM_MESSAGE.to_string(),
            params: GenerationParams::default(),
        }
    }
}

fn tagged_blocks(blocks: &[(&str, &str)]) -> String {
    let mut out = String::new();
    for (tag, payload) in blocks {
        out.push_str(tag);
        out.push('\n');
        out.push_str(payload);
        out.push_str("\n\n");
    }
    out
}

pub fn build_reasoning_prompt(
    profile: &TeacherProfile,
    record: &EssayRecord,
    rubric: &RubricSpec,
    score: Score,
) -> ChatPrompt {
    let score = score.to_string();
    let user = tagged_blocks(&[
        (SUBJECT_TAG, &record.subject),
        (ESSAY_TAG, &record.essay),
        (RUBRIC_TAG, &rubric.description),
        (SCORE_TAG, &score),
    ]);
    ChatPrompt {
        system: profile.system.clone(),
        user,
        model_id: profile.model_id.clone(),
        params: profile.params.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningAnnotation {
    pub record_id: String,
    pub rubric_id: String,
    pub gold_score: Score,
    pub reasoning: String,
    pub model_id: String,
    pub prompt_hash: String,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Clock {
    System,
    Fixed(DateTime<Utc>),
}

impl Clock {
    pub fn now(&self) -> DateTime<Utc> {
        match self {
            Clock::System => Utc::now(),
            Clock::Fixed(t) => *t,
        }
    }
}

/// Where the `[Score]` given to the teacher comes from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreSource {
    /// The corpus gold score.
    #[default]
    Gold,
    /// A score the teacher assigns first through the zero-shot template.
    Teacher,
}

#[derive(Debug, Clone)]
pub struct SynthesisOptions {
    pub profile: TeacherProfile,
    pub retry: RetryPolicy,
    pub parallelism: usize,
    pub clock: Clock,
    pub score_source: ScoreSource,
    pub zero_shot_template: PromptTemplate,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self {
            profile: TeacherProfile::default(),
            retry: RetryPolicy::default(),
            parallelism: 4,
            clock: Clock::System,
            score_source: ScoreSource::Gold,
            zero_shot_template: PromptTemplate::default(),
        }
    }
}

/// One unit of synthesis work.
#[derive(Debug, Clone)]
pub struct AnnotationRequest {
    pub record_id: String,
    pub rubric_id: String,
    pub score: Score,
    pub prompt: ChatPrompt,
}

/// Serve from cache, or call the teacher (with retries) and store the result.
/// An empty generation is requested once more before failing.
pub fn generate_reasoning(
    client: &dyn LlmClient,
    request: &AnnotationRequest,
    cache: &AnnotationCache,
    options: &SynthesisOptions,
) -> Result<ReasoningAnnotation, SynthesisError> {
    let hash = request.prompt.prompt_hash();
    if let Some(hit) = cache.get(&hash) {
        return Ok(ReasoningAnnotation {
            record_id: request.record_id.clone(),
            rubric_id: request.rubric_id.clone(),
            gold_score: request.score,
            ..hit
        });
    }
    let mut reasoning = String::new();
    for _ in 0..2 {
        reasoning = complete_with_retry(client, &request.prompt, &options.retry)?
            .trim()
            .to_string();
        if !reasoning.is_empty() {
            break;
        }
    }
    if reasoning.is_empty() {
        return Err(SynthesisError::EmptyReasoning(hash));
    }
    let annotation = ReasoningAnnotation {
        record_id: request.record_id.clone(),
        rubric_id: request.rubric_id.clone(),
        gold_score: request.score,
        reasoning,
        model_id: request.prompt.model_id.clone(),
        prompt_hash: hash,
        created_at: options.clock.now(),
    };
    cache.put(&annotation)?;
    Ok(annotation)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemFailure {
    pub record_id: String,
    pub rubric_id: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SynthesisOutcome {
    /// Successful annotations in record × rubric order.
    pub annotations: Vec<ReasoningAnnotation>,
    pub failures: Vec<ItemFailure>,
}

struct WorkItem<'a> {
    record: &'a EssayRecord,
    rubric: &'a RubricSpec,
}

/// Annotate every record against every rubric.
///
/// Item-level failures are collected and the run continues; authentication
/// and configuration errors stop the run. Identical prompts are requested
/// once, and at most `parallelism` requests are in flight.
pub fn synthesize_corpus(
    client: &dyn LlmClient,
    records: &[EssayRecord],
    registry: &RubricRegistry,
    cache: &AnnotationCache,
    options: &SynthesisOptions,
) -> Result<SynthesisOutcome, SynthesisError> {
    let items: Vec<WorkItem> = records
        .iter()
        .flat_map(|record| {
            registry
                .iter()
                .map(move |rubric| WorkItem { record, rubric })
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.parallelism.max(1))
        .build()
        .map_err(|e| SynthesisError::Pool(e.to_string()))?;
    let abort = AtomicBool::new(false);

    // Resolve the score each item is annotated against.
    let scored: Vec<Result<AnnotationRequest, SynthesisError>> = pool.install(|| {
        items
            .par_iter()
            .map(|item| {
                if abort.load(Ordering::SeqCst) {
                    return Err(SynthesisError::Pool("run aborted".into()));
                }
                let result = resolve_request(client, item, options);
                if let Err(SynthesisError::Client(e)) = &result {
                    if e.aborts_run() {
                        abort.store(true, Ordering::SeqCst);
                    }
                }
                result
            })
            .collect()
    });
    if let Some(fatal) = first_abort(&scored) {
        return Err(fatal);
    }

    let mut unique: Vec<&AnnotationRequest> = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    let hashes: Vec<Option<String>> = scored
        .iter()
        .map(|r| {
            r.as_ref().ok().map(|req| {
                let h = req.prompt.prompt_hash();
                if !seen.contains_key(&h) {
                    seen.insert(h.clone(), unique.len());
                    unique.push(req);
                }
                h
            })
        })
        .collect();

    let generated: Vec<Result<ReasoningAnnotation, SynthesisError>> = pool.install(|| {
        unique
            .par_iter()
            .map(|req| {
                if abort.load(Ordering::SeqCst) {
                    return Err(SynthesisError::Pool("run aborted".into()));
                }
                let result = generate_reasoning(client, req, cache, options);
                if let Err(SynthesisError::Client(e)) = &result {
                    if e.aborts_run() {
                        abort.store(true, Ordering::SeqCst);
                    }
                }
                result
            })
            .collect()
    });
    if let Some(fatal) = first_abort(&generated) {
        return Err(fatal);
    }

    let mut outcome = SynthesisOutcome::default();
    for ((item, request), hash) in items.iter().zip(&scored).zip(&hashes) {
        let result = match (request, hash) {
            (Ok(req), Some(h)) => match &generated[seen[h]] {
                Ok(a) => Ok(ReasoningAnnotation {
                    record_id: req.record_id.clone(),
                    rubric_id: req.rubric_id.clone(),
                    gold_score: req.score,
                    ..a.clone()
                }),
                Err(e) => Err(e.to_string()),
            },
            (Err(e), _) => Err(e.to_string()),
            (Ok(_), None) => unreachable!("every resolved request has a hash"),
        };
        match result {
            Ok(a) => outcome.annotations.push(a),
            Err(error) => outcome.failures.push(ItemFailure {
                record_id: item.record.id.clone(),
                rubric_id: item.rubric.rubric_id.clone(),
                error,
            }),
        }
    }
    Ok(outcome)
}

fn resolve_request(
    client: &dyn LlmClient,
    item: &WorkItem,
    options: &SynthesisOptions,
) -> Result<AnnotationRequest, SynthesisError> {
    let score = match options.score_source {
        ScoreSource::Gold => item
            .record
            .score_for(&item.rubric.rubric_id)
            .ok_or_else(|| SynthesisError::MissingGold {
                record_id: item.record.id.clone(),
                rubric_id: item.rubric.rubric_id.clone(),
            })?,
        ScoreSource::Teacher => {
            scorer::zero_shot_score(
                client,
                item.record,
                item.rubric,
                &options.zero_shot_template,
                &options.profile,
                &options.retry,
            )?
            .score
        }
    };
    Ok(AnnotationRequest {
        record_id: item.record.id.clone(),
        rubric_id: item.rubric.rubric_id.clone(),
        score,
        prompt: build_reasoning_prompt(&options.profile, item.record, item.rubric, score),
    })
}

fn first_abort<T>(results: &[Result<T, SynthesisError>]) -> Option<SynthesisError> {
    results.iter().find_map(|r| match r {
        Err(SynthesisError::Client(e)) if e.aborts_run() => Some(SynthesisError::Client(e.clone())),
        _ => None,
    })
}
