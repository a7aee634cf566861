//! Inference-time scoring: parse `reasoning ---> score` generations, score
//! records with a trained student, and run the zero-shot teacher baseline.

use std::sync::OnceLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::EssayRecord;
use crate::distillset::{build_input_text, SCORE_MARKER};
use crate::rubrics::{RubricRegistry, RubricSpec, Score, ScoreGrid, CANONICAL_RUBRICS};
use crate::synthesis::{
    complete_with_retry, ChatPrompt, ClientError, LlmClient, RetryPolicy, TeacherProfile,
};
use crate::trainer::{AdapterError, DecodeParams, ModelAdapter};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseFlag {
    Exact,
    Snapped,
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FallbackPolicy {
    pub default_score: Score,
}

impl Default for FallbackPolicy {
    fn default() -> Self {
        Self {
            default_score: Score::MIDPOINT,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedOutput {
    pub reasoning: String,
    pub score: Score,
    pub flag: ParseFlag,
}

fn decimal_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[+-]?(?:\d+(?:\.\d*)?|\.\d+)$").expect("valid regex"))
}

fn first_number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\d+(?:\.\d+)?").expect("valid regex"))
}

fn classify(value: f64, grid: &ScoreGrid) -> Option<(Score, ParseFlag)> {
    if !value.is_finite() {
        return None;
    }
    if grid.contains(value) {
        Score::new(value).ok().map(|s| (s, ParseFlag::Exact))
    } else {
        grid.nearest(value).ok().map(|s| (s, ParseFlag::Snapped))
    }
}

/// Split at the last marker and read the suffix as a decimal number.
///
/// A grid value is `exact`, any other finite decimal is snapped to the
/// nearest grid value, and a missing marker or unparseable suffix falls back
/// to the policy score with the whole output kept as reasoning.
pub fn parse_score(raw_output: &str, grid: &ScoreGrid, policy: &FallbackPolicy) -> ParsedOutput {
    let fallback = || ParsedOutput {
        reasoning: raw_output.to_string(),
        score: policy.default_score,
        flag: ParseFlag::Fallback,
    };
    let Some(at) = raw_output.rfind(SCORE_MARKER) else {
        return fallback();
    };
    let suffix = raw_output[at + SCORE_MARKER.len()..].trim();
    if !decimal_re().is_match(suffix) {
        return fallback();
    }
    match suffix.parse::<f64>().ok().and_then(|v| classify(v, grid)) {
        Some((score, flag)) => ParsedOutput {
            reasoning: raw_output[..at].trim_end().to_string(),
            score,
            flag,
        },
        None => fallback(),
    }
}

/// First number in free text, snapped to the grid when needed.
pub fn extract_first_score(text: &str, grid: &ScoreGrid, policy: &FallbackPolicy) -> ParsedOutput {
    let found = first_number_re()
        .find(text)
        .and_then(|m| m.as_str().parse::<f64>().ok())
        .and_then(|v| classify(v, grid));
    match found {
        Some((score, flag)) => ParsedOutput {
            reasoning: text.to_string(),
            score,
            flag,
        },
        None => ParsedOutput {
            reasoning: text.to_string(),
            score: policy.default_score,
            flag: ParseFlag::Fallback,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorePrediction {
    pub record_id: String,
    pub rubric_id: String,
    pub raw_output: String,
    #[serde(default, skip_serializing)]
    pub reasoning: String,
    pub score: Score,
    pub parse_flag: ParseFlag,
}

impl ScorePrediction {
    fn from_parsed(
        record_id: &str,
        rubric_id: &str,
        raw_output: String,
        parsed: ParsedOutput,
    ) -> Self {
        Self {
            record_id: record_id.to_string(),
            rubric_id: rubric_id.to_string(),
            raw_output,
            reasoning: parsed.reasoning,
            score: parsed.score,
            parse_flag: parsed.flag,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScoreError {
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("record `{record_id}` has no prediction for rubric `{rubric_id}`")]
    MissingRubric {
        record_id: String,
        rubric_id: String,
    },
    #[error("record `{record_id}` has more than one prediction for rubric `{rubric_id}`")]
    DuplicateRubric {
        record_id: String,
        rubric_id: String,
    },
}

/// Greedy-generate and parse one (record, rubric) score.
pub fn score_essay(
    model: &dyn ModelAdapter,
    record: &EssayRecord,
    rubric: &RubricSpec,
    decode: &DecodeParams,
    policy: &FallbackPolicy,
) -> Result<ScorePrediction, ScoreError> {
    let input = build_input_text(rubric, record);
    let raw = model.generate(&input, decode)?;
    let parsed = parse_score(&raw, &ScoreGrid::default(), policy);
    Ok(ScorePrediction::from_parsed(
        &record.id,
        &rubric.rubric_id,
        raw,
        parsed,
    ))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoringSummary {
    pub predictions: usize,
    pub exact: usize,
    pub snapped: usize,
    pub fallback: usize,
    pub failures: usize,
    pub fallback_rate: f64,
}

impl ScoringSummary {
    pub fn from_predictions(predictions: &[ScorePrediction], failures: usize) -> Self {
        let count = |flag| predictions.iter().filter(|p| p.parse_flag == flag).count();
        let fallback = count(ParseFlag::Fallback);
        Self {
            predictions: predictions.len(),
            exact: count(ParseFlag::Exact),
            snapped: count(ParseFlag::Snapped),
            fallback,
            failures,
            fallback_rate: if predictions.is_empty() {
                0.0
            } else {
                fallback as f64 / predictions.len() as f64
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringFailure {
    pub record_id: String,
    pub rubric_id: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoringOutcome {
    pub predictions: Vec<ScorePrediction>,
    pub failures: Vec<ScoringFailure>,
    pub summary: ScoringSummary,
}

fn collect_outcome(
    results: Vec<(String, String, Result<ScorePrediction, ScoreError>)>,
) -> ScoringOutcome {
    let mut outcome = ScoringOutcome::default();
    for (record_id, rubric_id, result) in results {
        match result {
            Ok(p) => outcome.predictions.push(p),
            Err(e) => outcome.failures.push(ScoringFailure {
                record_id,
                rubric_id,
                error: e.to_string(),
            }),
        }
    }
    outcome.summary =
        ScoringSummary::from_predictions(&outcome.predictions, outcome.failures.len());
    outcome
}

/// Predict every (record, rubric) pair in record × rubric order.
pub fn score_corpus(
    model: &dyn ModelAdapter,
    records: &[EssayRecord],
    registry: &RubricRegistry,
    decode: &DecodeParams,
    policy: &FallbackPolicy,
) -> ScoringOutcome {
    let pairs: Vec<(&EssayRecord, &RubricSpec)> = records
        .iter()
        .flat_map(|r| registry.iter().map(move |s| (r, s)))
        .collect();
    let run = |(record, rubric): &(&EssayRecord, &RubricSpec)| {
        (
            record.id.clone(),
            rubric.rubric_id.clone(),
            score_essay(model, record, rubric, decode, policy),
        )
    };
    let results = if model.concurrent_generation() {
        pairs.par_iter().map(run).collect()
    } else {
        pairs.iter().map(run).collect()
    };
    collect_outcome(results)
}

/// Zero-shot scoring prompt with `{rubric}`, `{subject}` and `{essay}` slots.
///
/// The default is a stand-in; supply the dataset's original template through
/// config for faithful baseline numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub system: String,
    pub user: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            system: "You are an expert English composition teacher who scores student essays."
                .into(),
            user: "Score the essay below on the following rubric only.\n\n\
                   Rubric:\n{rubric}\n\n\
                   Essay prompt:\n{subject}\n\n\
                   Essay:\n{essay}\n\n\
                   Answer with a single score from [1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0]."
                .into(),
        }
    }
}

impl PromptTemplate {
    /// Fill slots in one pass, so payload text is never re-expanded.
    pub fn render(&self, rubric: &RubricSpec, record: &EssayRecord) -> String {
        static SLOT: OnceLock<Regex> = OnceLock::new();
        let slot =
            SLOT.get_or_init(|| Regex::new(r"\{(rubric|subject|essay)\}").expect("valid regex"));
        slot.replace_all(&self.user, |caps: &regex::Captures| match &caps[1] {
            "rubric" => rubric.description.clone(),
            "subject" => record.subject.clone(),
            _ => record.essay.clone(),
        })
        .into_owned()
    }
}

/// Ask the teacher for a score directly, at temperature 0.
pub fn zero_shot_score(
    client: &dyn LlmClient,
    record: &EssayRecord,
    rubric: &RubricSpec,
    template: &PromptTemplate,
    profile: &TeacherProfile,
    retry: &RetryPolicy,
) -> Result<ScorePrediction, ClientError> {
    let mut params = profile.params.clone();
    params.temperature = 0.0;
    let prompt = ChatPrompt {
        system: template.system.clone(),
        user: template.render(rubric, record),
        model_id: profile.model_id.clone(),
        params,
    };
    let raw = complete_with_retry(client, &prompt, retry)?;
    let parsed = extract_first_score(&raw, &ScoreGrid::default(), &FallbackPolicy::default());
    Ok(ScorePrediction::from_parsed(
        &record.id,
        &rubric.rubric_id,
        raw,
        parsed,
    ))
}

pub fn zero_shot_corpus(
    client: &dyn LlmClient,
    records: &[EssayRecord],
    registry: &RubricRegistry,
    template: &PromptTemplate,
    profile: &TeacherProfile,
    retry: &RetryPolicy,
) -> Result<ScoringOutcome, ClientError> {
    let mut results = Vec::new();
    for record in records {
        for rubric in registry {
            let result = zero_shot_score(client, record, rubric, template, profile, retry);
            if let Err(e) = &result {
                if e.aborts_run() {
                    return Err(e.clone());
                }
            }
            results.push((
                record.id.clone(),
                rubric.rubric_id.clone(),
                result.map_err(ScoreError::from),
            ));
        }
    }
    Ok(collect_outcome(results))
}

/// Sum of the content, organization and language predictions for one record.
pub fn total_score(predictions: &[ScorePrediction]) -> Result<f64, ScoreError> {
    let record_id = predictions
        .first()
        .map(|p| p.record_id.clone())
        .unwrap_or_default();
    let mut total = 0.0;
    for rubric_id in CANONICAL_RUBRICS {
        let mut matching = predictions.iter().filter(|p| p.rubric_id == rubric_id);
        let first = matching.next().ok_or_else(|| ScoreError::MissingRubric {
            record_id: record_id.clone(),
            rubric_id: rubric_id.to_string(),
        })?;
        if matching.next().is_some() {
            return Err(ScoreError::DuplicateRubric {
                record_id: record_id.clone(),
                rubric_id: rubric_id.to_string(),
            });
        }
        total += first.score.value();
    }
    Ok(total)
}
