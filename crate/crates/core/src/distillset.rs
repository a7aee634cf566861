//! Fine-tuning pairs for the student model.
//!
//! Inputs are `[Scoring Rubric]`, `[Subject]`, `[Essay]` blocks; targets are
//! the teacher reasoning, the marker ` ---> `, and the one-decimal score.
//! Payloads are not escaped: inputs go to a tokenizer and are never parsed.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::EssayRecord;
use crate::jsonl::{self, JsonlError};
use crate::rubrics::{RubricRegistry, RubricSpec, Score};
use crate::synthesis::{ReasoningAnnotation, ESSAY_TAG, RUBRIC_TAG, SUBJECT_TAG};

/// Separates reasoning from the concluding score.
pub const SCORE_MARKER: &str = " ---> ";

#[derive(Debug, thiserror::Error)]
pub enum DistillError {
    #[error("annotation for record `{record_id}` / rubric `{rubric_id}` has empty reasoning")]
    EmptyReasoning {
        record_id: String,
        rubric_id: String,
    },
    #[error("annotation references unknown record `{0}`")]
    DanglingRecord(String),
    #[error("annotation references unknown rubric `{0}`")]
    DanglingRubric(String),
    #[error(transparent)]
    Io(#[from] JsonlError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistillExample {
    pub example_id: String,
    pub record_id: String,
    pub rubric_id: String,
    #[serde(rename = "input")]
    pub input_text: String,
    #[serde(rename = "target")]
    pub target_text: String,
    pub gold_score: Score,
}

pub fn build_input_text(rubric: &RubricSpec, record: &EssayRecord) -> String {
    format!(
        "{RUBRIC_TAG}\n{}\n\n{SUBJECT_TAG}\n{}\n\n{ESSAY_TAG}\n{}",
        rubric.description, record.subject, record.essay
    )
}

pub fn format_target(reasoning: &str, score: Score) -> String {
    format!("{}{SCORE_MARKER}{score}", reasoning.trim_end())
}

pub fn build_target_text(annotation: &ReasoningAnnotation) -> Result<String, DistillError> {
    if annotation.reasoning.trim().is_empty() {
        return Err(DistillError::EmptyReasoning {
            record_id: annotation.record_id.clone(),
            rubric_id: annotation.rubric_id.clone(),
        });
    }
    Ok(format_target(&annotation.reasoning, annotation.gold_score))
}

/// Target for the no-reasoning control: the marker and score only.
pub fn build_score_only_target(score: Score) -> String {
    format!("{SCORE_MARKER}{score}")
}

pub fn example_id(record_id: &str, rubric_id: &str) -> String {
    format!("{record_id}:{rubric_id}")
}

/// One example per annotation, in annotation order.
pub fn build_dataset(
    annotations: &[ReasoningAnnotation],
    corpus: &[EssayRecord],
    registry: &RubricRegistry,
) -> Result<Vec<DistillExample>, DistillError> {
    let by_id: HashMap<&str, &EssayRecord> = corpus.iter().map(|r| (r.id.as_str(), r)).collect();
    annotations
        .iter()
        .map(|a| {
            let record = by_id
                .get(a.record_id.as_str())
                .ok_or_else(|| DistillError::DanglingRecord(a.record_id.clone()))?;
            let rubric = registry
                .get(&a.rubric_id)
                .ok_or_else(|| DistillError::DanglingRubric(a.rubric_id.clone()))?;
            Ok(DistillExample {
                example_id: example_id(&a.record_id, &a.rubric_id),
                record_id: a.record_id.clone(),
                rubric_id: a.rubric_id.clone(),
                input_text: build_input_text(rubric, record),
                target_text: build_target_text(a)?,
                gold_score: a.gold_score,
            })
        })
        .collect()
}

/// Score-only examples for every (record, rubric) pair with a gold score.
pub fn build_score_only_dataset(
    corpus: &[EssayRecord],
    registry: &RubricRegistry,
) -> Vec<DistillExample> {
    corpus
        .iter()
        .flat_map(|record| {
            registry.iter().filter_map(move |rubric| {
                let score = record.score_for(&rubric.rubric_id)?;
                Some(DistillExample {
                    example_id: example_id(&record.id, &rubric.rubric_id),
                    record_id: record.id.clone(),
                    rubric_id: rubric.rubric_id.clone(),
                    input_text: build_input_text(rubric, record),
                    target_text: build_score_only_target(score),
                    gold_score: score,
                })
            })
        })
        .collect()
}

pub fn write_dataset(path: &Path, examples: &[DistillExample]) -> Result<(), DistillError> {
    Ok(jsonl::write(path, examples)?)
}

pub fn read_dataset(path: &Path) -> Result<Vec<DistillExample>, DistillError> {
    Ok(jsonl::read(path)?)
}
