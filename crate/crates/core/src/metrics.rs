//! Quadratic weighted kappa and the per-rubric evaluation report.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::EssayRecord;
use crate::rubrics::{RubricRegistry, CANONICAL_RUBRICS};
use crate::scorer::{ParseFlag, ScorePrediction};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("rating sequences differ in length ({gold} vs {pred})")]
    LengthMismatch { gold: usize, pred: usize },
    #[error("rating sequences are empty")]
    Empty,
    #[error("category index {index} out of range for k = {k}")]
    OutOfRange { index: usize, k: usize },
    #[error("need at least two categories, got {0}")]
    TooFewCategories(usize),
    #[error("value {value} is not on the lattice {lo}..={hi} step {step}")]
    OffLattice {
        value: f64,
        lo: f64,
        hi: f64,
        step: f64,
    },
    #[error("missing prediction for record `{record_id}` rubric `{rubric_id}`")]
    Coverage {
        record_id: String,
        rubric_id: String,
    },
    #[error("rubric `{0}` has no gold scores in the corpus")]
    NoGold(String),
}

/// Two aligned rating sequences over categories `0..k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RatingPair {
    gold: Vec<usize>,
    pred: Vec<usize>,
    k: usize,
}

impl RatingPair {
    pub fn new(gold: Vec<usize>, pred: Vec<usize>, k: usize) -> Result<Self, MetricsError> {
        if k < 2 {
            return Err(MetricsError::TooFewCategories(k));
        }
        if gold.len() != pred.len() {
            return Err(MetricsError::LengthMismatch {
                gold: gold.len(),
                pred: pred.len(),
            });
        }
        if gold.is_empty() {
            return Err(MetricsError::Empty);
        }
        if let Some(&index) = gold.iter().chain(&pred).find(|&&i| i >= k) {
            return Err(MetricsError::OutOfRange { index, k });
        }
        Ok(Self { gold, pred, k })
    }

    pub fn gold(&self) -> &[usize] {
        &self.gold
    }

    pub fn pred(&self) -> &[usize] {
        &self.pred
    }

    pub fn k(&self) -> usize {
        self.k
    }
}

/// Category index `round((v - lo) / step)` for each value.
pub fn bin_scores(values: &[f64], lo: f64, hi: f64, step: f64) -> Result<Vec<usize>, MetricsError> {
    values
        .iter()
        .map(|&value| {
            let off = || MetricsError::OffLattice {
                value,
                lo,
                hi,
                step,
            };
            if !value.is_finite() || value < lo - 1e-9 || value > hi + 1e-9 {
                return Err(off());
            }
            let pos = (value - lo) / step;
            let idx = pos.round();
            if (pos - idx).abs() > 1e-9 {
                return Err(off());
            }
            Ok(idx as usize)
        })
        .collect()
}

pub fn bin_rubric_scores(values: &[f64]) -> Result<Vec<usize>, MetricsError> {
    bin_scores(values, 1.0, 5.0, 0.5)
}

pub fn bin_total_scores(values: &[f64]) -> Result<Vec<usize>, MetricsError> {
    bin_scores(values, 3.0, 15.0, 0.5)
}

pub const RUBRIC_CATEGORIES: usize = 9;
pub const TOTAL_CATEGORIES: usize = 25;

/// `w[i][j] = (i - j)^2 / (k - 1)^2`.
pub fn quadratic_weights(k: usize) -> Result<Vec<Vec<f64>>, MetricsError> {
    if k < 2 {
        return Err(MetricsError::TooFewCategories(k));
    }
    let denom = ((k - 1) * (k - 1)) as f64;
    Ok((0..k)
        .map(|i| {
            (0..k)
                .map(|j| {
                    let d = i.abs_diff(j);
                    (d * d) as f64 / denom
                })
                .collect()
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kappa {
    pub value: f64,
    /// Both sequences were constant, so agreement is decided by convention.
    pub degenerate: bool,
}

/// Quadratic weighted kappa, `1 - sum(w * O) / sum(w * E)`.
///
/// `O` is the normalized joint histogram and `E` the outer product of the
/// normalized marginals. When both sequences are constant the result is 1.0
/// for equal constants and 0.0 otherwise, flagged as degenerate.
pub fn qwk(pair: &RatingPair) -> Kappa {
    let k = pair.k;
    let n = pair.gold.len() as f64;
    let weights = quadratic_weights(k).expect("RatingPair guarantees k >= 2");

    let mut observed = vec![vec![0.0; k]; k];
    let mut gold_hist = vec![0.0; k];
    let mut pred_hist = vec![0.0; k];
    for (&g, &p) in pair.gold.iter().zip(&pair.pred) {
        observed[g][p] += 1.0 / n;
        gold_hist[g] += 1.0 / n;
        pred_hist[p] += 1.0 / n;
    }

    let constant = |s: &[usize]| s.iter().all(|&x| x == s[0]);
    if constant(&pair.gold) && constant(&pair.pred) {
        let value = if pair.gold[0] == pair.pred[0] {
            1.0
        } else {
            0.0
        };
        return Kappa {
            value,
            degenerate: true,
        };
    }

    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..k {
        for j in 0..k {
            num += weights[i][j] * observed[i][j];
            den += weights[i][j] * gold_hist[i] * pred_hist[j];
        }
    }
    Kappa {
        value: 1.0 - num / den,
        degenerate: false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RubricKappa {
    pub rubric_id: String,
    pub qwk: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rubrics: Vec<RubricKappa>,
    pub total: RubricKappa,
    pub fallback_rate: f64,
    pub n_test: usize,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

impl EvalReport {
    pub fn rubric_qwk(&self, rubric_id: &str) -> Option<f64> {
        self.rubrics
            .iter()
            .find(|r| r.rubric_id == rubric_id)
            .map(|r| r.qwk)
    }

    /// Every QWK cell: rubric columns then total.
    pub fn cells(&self) -> Vec<(&str, f64)> {
        self.rubrics
            .iter()
            .map(|r| (r.rubric_id.as_str(), r.qwk))
            .chain(std::iter::once(("total", self.total.qwk)))
            .collect()
    }
}

fn title_case(id: &str) -> String {
    let mut chars = id.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Plain-text grid with one column per rubric plus Total.
impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let headers: Vec<String> = self
            .rubrics
            .iter()
            .map(|r| title_case(&r.rubric_id))
            .chain(std::iter::once("Total".to_string()))
            .collect();
        let values: Vec<String> = self
            .cells()
            .iter()
            .map(|(_, v)| format!("{v:.3}"))
            .collect();
        let widths: Vec<usize> = headers
            .iter()
            .zip(&values)
            .map(|(h, v)| h.len().max(v.len()))
            .collect();
        let row = |cells: &[String]| {
            cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:>w$}"))
                .collect::<Vec<_>>()
                .join(" | ")
        };
        writeln!(f, "{}", row(&headers))?;
        writeln!(
            f,
            "{}",
            widths
                .iter()
                .map(|w| "-".repeat(*w))
                .collect::<Vec<_>>()
                .join("-+-")
        )?;
        writeln!(f, "{}", row(&values))?;
        write!(
            f,
            "n_test = {}, fallback rate = {:.4}",
            self.n_test, self.fallback_rate
        )
    }
}

/// QWK per rubric on the 9-category grid and for summed totals on the
/// 25-category lattice, over every record in `test`.
pub fn evaluate_run(
    predictions: &[ScorePrediction],
    test: &[EssayRecord],
    registry: &RubricRegistry,
) -> Result<EvalReport, MetricsError> {
    let lookup: HashMap<(&str, &str), &ScorePrediction> = predictions
        .iter()
        .map(|p| ((p.record_id.as_str(), p.rubric_id.as_str()), p))
        .collect();
    let find = |record: &EssayRecord, rubric_id: &str| {
        lookup
            .get(&(record.id.as_str(), rubric_id))
            .copied()
            .ok_or_else(|| MetricsError::Coverage {
                record_id: record.id.clone(),
                rubric_id: rubric_id.to_string(),
            })
    };
    if test.is_empty() {
        return Err(MetricsError::Empty);
    }

    let mut rubrics = Vec::new();
    let mut used = 0usize;
    let mut fallbacks = 0usize;
    for rubric in registry {
        let id = rubric.rubric_id.as_str();
        let mut gold = Vec::with_capacity(test.len());
        let mut pred = Vec::with_capacity(test.len());
        for record in test {
            let g = record
                .score_for(id)
                .ok_or_else(|| MetricsError::NoGold(id.to_string()))?;
            let p = find(record, id)?;
            gold.push(g.index());
            pred.push(p.score.index());
            used += 1;
            fallbacks += usize::from(p.parse_flag == ParseFlag::Fallback);
        }
        let kappa = qwk(&RatingPair::new(gold, pred, RUBRIC_CATEGORIES)?);
        rubrics.push(RubricKappa {
            rubric_id: id.to_string(),
            qwk: kappa.value,
            degenerate: kappa.degenerate,
        });
    }

    let mut gold_totals = Vec::with_capacity(test.len());
    let mut pred_totals = Vec::with_capacity(test.len());
    for record in test {
        gold_totals.push(record.total_score);
        let mut sum = 0.0;
        for id in CANONICAL_RUBRICS {
            sum += find(record, id)?.score.value();
        }
        pred_totals.push(sum);
    }
    let total = qwk(&RatingPair::new(
        bin_total_scores(&gold_totals)?,
        bin_total_scores(&pred_totals)?,
        TOTAL_CATEGORIES,
    )?);

    Ok(EvalReport {
        rubrics,
        total: RubricKappa {
            rubric_id: "total".into(),
            qwk: total.value,
            degenerate: total.degenerate,
        },
        fallback_rate: if used == 0 {
            0.0
        } else {
            fallbacks as f64 / used as f64
        },
        n_test: test.len(),
        metadata: serde_json::Value::Null,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{validate_record, RawRecord};
    use crate::rubrics::{default_registry, Score};
    use crate::shuffle;
    use proptest::prelude::*;

    fn kappa(gold: &[usize], pred: &[usize], k: usize) -> Kappa {
        qwk(&RatingPair::new(gold.to_vec(), pred.to_vec(), k).unwrap())
    }

    #[test]
    fn binning() {
        assert_eq!(bin_rubric_scores(&[1.0, 5.0, 3.5]).unwrap(), [0, 8, 5]);
        assert_eq!(bin_total_scores(&[10.5, 3.0, 15.0]).unwrap(), [15, 0, 24]);
        assert!(bin_rubric_scores(&[3.25]).is_err());
        assert!(bin_rubric_scores(&[5.5]).is_err());
        assert!(bin_rubric_scores(&[f64::NAN]).is_err());
    }

    #[test]
    fn weights() {
        let w = quadratic_weights(9).unwrap();
        assert_eq!(w[0][0], 0.0);
        assert_eq!(w[0][8], 1.0);
        assert_eq!(w[0][1], 1.0 / 64.0);
        assert_eq!(w[3][5], w[5][3]);
        assert!(quadratic_weights(1).is_err());
    }

    #[test]
    fn anchor_values() {
        assert_eq!(kappa(&[0, 2, 4, 6, 8], &[0, 2, 4, 6, 8], 9).value, 1.0);
        assert!((kappa(&[0, 0, 8, 8], &[8, 8, 0, 0], 9).value + 1.0).abs() < 1e-12);
        let d = kappa(&[3, 3, 3], &[5, 5, 5], 9);
        assert_eq!((d.value, d.degenerate), (0.0, true));
        let same = kappa(&[4, 4], &[4, 4], 9);
        assert_eq!((same.value, same.degenerate), (1.0, true));
    }

    #[test]
    fn one_constant_side_gives_zero() {
        let k = kappa(&[2, 2, 2, 2], &[0, 3, 5, 8], 9);
        assert!(k.value.abs() < 1e-12);
        assert!(!k.degenerate);
    }

    #[test]
    fn pair_validation() {
        assert_eq!(
            RatingPair::new(vec![0], vec![0, 1], 3),
            Err(MetricsError::LengthMismatch { gold: 1, pred: 2 })
        );
        assert_eq!(RatingPair::new(vec![], vec![], 3), Err(MetricsError::Empty));
        assert_eq!(
            RatingPair::new(vec![3], vec![0], 3),
            Err(MetricsError::OutOfRange { index: 3, k: 3 })
        );
        assert_eq!(
            RatingPair::new(vec![0], vec![0], 1),
            Err(MetricsError::TooFewCategories(1))
        );
    }

    fn pairs() -> impl Strategy<Value = (Vec<usize>, Vec<usize>, usize)> {
        (2usize..=25, 1usize..=50).prop_flat_map(|(k, n)| {
            (
                proptest::collection::vec(0..k, n),
                proptest::collection::vec(0..k, n),
                Just(k),
            )
        })
    }

    proptest! {
        #[test]
        fn symmetric((g, p, k) in pairs()) {
            let a = kappa(&g, &p, k);
            let b = kappa(&p, &g, k);
            prop_assert!((a.value - b.value).abs() < 1e-12);
        }

        #[test]
        fn bounded((g, p, k) in pairs()) {
            let v = kappa(&g, &p, k).value;
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&v), "{}", v);
        }

        #[test]
        fn self_agreement((g, _p, k) in pairs()) {
            prop_assert!((kappa(&g, &g, k).value - 1.0).abs() < 1e-12);
        }

        #[test]
        fn order_invariant((g, p, k) in pairs(), seed in any::<u64>()) {
            let perm = shuffle::permutation(g.len(), seed);
            let g2: Vec<_> = perm.iter().map(|&i| g[i]).collect();
            let p2: Vec<_> = perm.iter().map(|&i| p[i]).collect();
            prop_assert!((kappa(&g, &p, k).value - kappa(&g2, &p2, k).value).abs() < 1e-12);
        }
    }

    fn record(id: usize, c: f64, o: f64, l: f64) -> EssayRecord {
        validate_record(&RawRecord {
            id: id.to_string(),
            subject: Some("S".into()),
            essay: Some("E".into()),
            content: Some(c.to_string()),
            organization: Some(o.to_string()),
            language: Some(l.to_string()),
            total: None,
        })
        .unwrap()
    }

    fn gold_predictions(records: &[EssayRecord]) -> Vec<ScorePrediction> {
        records
            .iter()
            .flat_map(|r| {
                CANONICAL_RUBRICS.iter().map(move |id| ScorePrediction {
                    record_id: r.id.clone(),
                    rubric_id: id.to_string(),
                    raw_output: String::new(),
                    reasoning: String::new(),
                    score: r.score_for(id).unwrap(),
                    parse_flag: ParseFlag::Exact,
                })
            })
            .collect()
    }

    fn test_records() -> Vec<EssayRecord> {
        (0..20)
            .map(|i| {
                let s = |off: usize| Score::all().nth((i + off) % 9).unwrap().value();
                record(i, s(0), s(3), s(5))
            })
            .collect()
    }

    #[test]
    fn perfect_predictions_score_one() {
        let records = test_records();
        let report =
            evaluate_run(&gold_predictions(&records), &records, &default_registry()).unwrap();
        assert_eq!(report.cells().len(), 4);
        assert!(report.cells().iter().all(|(_, v)| *v == 1.0));
        assert_eq!(report.fallback_rate, 0.0);
        assert_eq!(report.n_test, 20);
        let text = report.to_string();
        assert!(
            text.contains("Content | Organization | Language | Total"),
            "{text}"
        );
    }

    #[test]
    fn shuffled_column_only_affects_its_rubric() {
        let records = test_records();
        let mut preds = gold_predictions(&records);
        let language: Vec<usize> = preds
            .iter()
            .enumerate()
            .filter(|(_, p)| p.rubric_id == "language")
            .map(|(i, _)| i)
            .collect();
        let scores: Vec<Score> = language.iter().map(|&i| preds[i].score).collect();
        let perm = shuffle::permutation(scores.len(), 5);
        for (slot, &src) in language.iter().zip(&perm) {
            preds[*slot].score = scores[src];
        }
        let report = evaluate_run(&preds, &records, &default_registry()).unwrap();
        assert!(report.rubric_qwk("language").unwrap() < 1.0);
        assert_eq!(report.rubric_qwk("content"), Some(1.0));
        assert_eq!(report.rubric_qwk("organization"), Some(1.0));
    }

    #[test]
    fn coverage_gap_is_named() {
        let records = test_records();
        let mut preds = gold_predictions(&records);
        preds.retain(|p| !(p.record_id == "7" && p.rubric_id == "organization"));
        let err = evaluate_run(&preds, &records, &default_registry()).unwrap_err();
        assert_eq!(
            err,
            MetricsError::Coverage {
                record_id: "7".into(),
                rubric_id: "organization".into()
            }
        );
    }
}
