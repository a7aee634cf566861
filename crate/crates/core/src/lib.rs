//! Rationale-based distillation pipeline for analytic essay scoring.
//!
//! A teacher model writes a rationale for each (essay, rubric, gold score)
//! triple, a student is fine-tuned to emit `rationale ---> score`, and the
//! student is evaluated with quadratic weighted kappa per rubric and on the
//! summed total.

pub mod corpus;
pub mod distillset;
pub mod jsonl;
pub mod metrics;
pub mod rubrics;
pub mod scorer;
pub mod shuffle;
pub mod synthesis;
pub mod trainer;

pub use corpus::{CorpusSplit, EssayRecord, SplitName, SplitRatios};
pub use distillset::{DistillExample, SCORE_MARKER};
pub use metrics::{qwk, EvalReport, Kappa, RatingPair};
pub use rubrics::{RubricRegistry, RubricSpec, Score, ScoreGrid};
pub use scorer::{parse_score, ParseFlag, ScorePrediction};
pub use synthesis::{ChatPrompt, LlmClient, ReasoningAnnotation, SYSTEM_MESSAGE};
pub use trainer::{DecodeParams, ModelAdapter, TrainConfig};
