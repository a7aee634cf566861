//! Essay corpus ingestion, validation, cleaning and deterministic splitting.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::rubrics::{Score, CONTENT, LANGUAGE, ORGANIZATION};
use crate::shuffle;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read corpus {path}: {message}")]
    Unreadable { path: String, message: String },
    #[error("corpus is missing mapped column `{column}` (field `{field}`)")]
    MissingColumn { field: &'static str, column: String },
    #[error("cannot split an empty corpus")]
    Empty,
    #[error("split ratios must be non-negative and sum to 1.0, got ({0}, {1}, {2})")]
    BadRatios(f64, f64, f64),
    #[error("split manifest references unknown record `{0}`")]
    UnknownManifestId(String),
    #[error("record `{0}` is missing from the split manifest")]
    UnassignedRecord(String),
}

/// Mapping from logical fields to column headers in the input file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMap {
    /// Identifier column; when unset the 1-based data row number is used.
    pub id: Option<String>,
    pub subject: String,
    pub essay: String,
    pub content: String,
    pub organization: String,
    pub language: String,
    /// Total column; when unset totals are always recomputed.
    pub total: Option<String>,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            id: None,
            subject: "prompt".into(),
            essay: "essay".into(),
            content: CONTENT.into(),
            organization: ORGANIZATION.into(),
            language: LANGUAGE.into(),
            total: Some("total".into()),
        }
    }
}

/// One data row before validation. `None` marks an absent cell.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRecord {
    pub id: String,
    pub subject: Option<String>,
    pub essay: Option<String>,
    pub content: Option<String>,
    pub organization: Option<String>,
    pub language: Option<String>,
    pub total: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EssayRecord {
    pub id: String,
    pub subject: String,
    pub essay: String,
    pub content_score: Score,
    pub organization_score: Score,
    pub language_score: Score,
    pub total_score: f64,
}

impl EssayRecord {
    /// Gold score for one of the canonical rubrics.
    pub fn score_for(&self, rubric_id: &str) -> Option<Score> {
        match rubric_id {
            CONTENT => Some(self.content_score),
            ORGANIZATION => Some(self.organization_score),
            LANGUAGE => Some(self.language_score),
            _ => None,
        }
    }

    pub fn to_raw(&self) -> RawRecord {
        RawRecord {
            id: self.id.clone(),
            subject: Some(self.subject.clone()),
            essay: Some(self.essay.clone()),
            content: Some(self.content_score.to_string()),
            organization: Some(self.organization_score.to_string()),
            language: Some(self.language_score.to_string()),
            total: Some(format!("{:.1}", self.total_score)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    AbsentScore,
    OffGridScore,
    TotalMismatch,
    EmptyText,
    DuplicateId,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RejectReason::AbsentScore => "absent-score",
            RejectReason::OffGridScore => "off-grid-score",
            RejectReason::TotalMismatch => "total-mismatch",
            RejectReason::EmptyText => "empty-text",
            RejectReason::DuplicateId => "duplicate-id",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub id: String,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectionReport {
    pub rejected: Vec<Rejection>,
    pub kept_count: usize,
}

fn is_absent(cell: &str) -> bool {
    let t = cell.trim();
    t.is_empty() || t.eq_ignore_ascii_case("nan")
}

/// Read a delimiter-separated file with a header row.
pub fn load_corpus(
    path: &Path,
    column_map: &ColumnMap,
    delimiter: u8,
) -> Result<Vec<RawRecord>, CorpusError> {
    let unreadable = |message: String| CorpusError::Unreadable {
        path: path.display().to_string(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .from_path(path)
        .map_err(|e| unreadable(e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| unreadable(e.to_string()))?
        .clone();
    let position: HashMap<&str, usize> = headers
        .iter()
        .enumerate()
        .map(|(i, h)| (h.trim(), i))
        .collect();
    let locate = |field: &'static str, column: &str| {
        position
            .get(column.trim())
            .copied()
            .ok_or_else(|| CorpusError::MissingColumn {
                field,
                column: column.to_string(),
            })
    };

    let id_col = column_map
        .id
        .as_deref()
        .map(|c| locate("id", c))
        .transpose()?;
    let subject = locate("subject", &column_map.subject)?;
    let essay = locate("essay", &column_map.essay)?;
    let content = locate("content", &column_map.content)?;
    let organization = locate("organization", &column_map.organization)?;
    let language = locate("language", &column_map.language)?;
    let total = column_map
        .total
        .as_deref()
        .map(|c| locate("total", c))
        .transpose()?;

    let mut out = Vec::new();
    for (row, result) in reader.records().enumerate() {
        let rec = result.map_err(|e| unreadable(e.to_string()))?;
        let cell = |i: usize| rec.get(i).filter(|c| !is_absent(c)).map(str::to_string);
        let id = id_col
            .and_then(cell)
            .map(|s| s.trim().to_string())
            .unwrap_or_else(|| (row + 1).to_string());
        out.push(RawRecord {
            id,
            subject: cell(subject),
            essay: cell(essay),
            content: cell(content),
            organization: cell(organization),
            language: cell(language),
            total: total.and_then(cell),
        });
    }
    Ok(out)
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

/// Type-check one raw row; the first failing check decides the reason.
///
/// Checks run in the order absent score, off-grid score, total mismatch,
/// empty text. An absent total is recomputed from the three scores.
pub fn validate_record(raw: &RawRecord) -> Result<EssayRecord, Rejection> {
    let reject = |reason| Rejection {
        id: raw.id.clone(),
        reason,
    };
    let cells = [&raw.content, &raw.organization, &raw.language];
    if cells.iter().any(|c| c.is_none()) {
        return Err(reject(RejectReason::AbsentScore));
    }
    let mut scores = [Score::MIN; 3];
    for (slot, cell) in scores.iter_mut().zip(cells) {
        let parsed = cell
            .as_deref()
            .and_then(|c| c.trim().parse::<f64>().ok())
            .and_then(|v| Score::new(v).ok());
        *slot = parsed.ok_or_else(|| reject(RejectReason::OffGridScore))?;
    }
    let sum: f64 = scores.iter().map(|s| s.value()).sum();
    if let Some(total) = &raw.total {
        let matches = total
            .trim()
            .parse::<f64>()
            .ok()
            .filter(|t| t.is_finite())
            .is_some_and(|t| round1(t) == round1(sum));
        if !matches {
            return Err(reject(RejectReason::TotalMismatch));
        }
    }
    let text = |cell: &Option<String>| {
        cell.as_deref()
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(str::to_string)
    };
    let (Some(subject), Some(essay)) = (text(&raw.subject), text(&raw.essay)) else {
        return Err(reject(RejectReason::EmptyText));
    };
    Ok(EssayRecord {
        id: raw.id.clone(),
        subject,
        essay,
        content_score: scores[0],
        organization_score: scores[1],
        language_score: scores[2],
        total_score: sum,
    })
}

/// Keep valid records in input order. Later duplicates of an id are rejected.
pub fn clean_corpus(raw: &[RawRecord]) -> (Vec<EssayRecord>, RejectionReport) {
    let mut kept = Vec::new();
    let mut rejected = Vec::new();
    let mut seen = HashSet::new();
    for record in raw {
        if !seen.insert(record.id.as_str()) {
            rejected.push(Rejection {
                id: record.id.clone(),
                reason: RejectReason::DuplicateId,
            });
            continue;
        }
        match validate_record(record) {
            Ok(r) => kept.push(r),
            Err(rej) => rejected.push(rej),
        }
    }
    let report = RejectionReport {
        kept_count: kept.len(),
        rejected,
    };
    (kept, report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub dev: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.6,
            dev: 0.2,
            test: 0.2,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let parts = [self.train, self.dev, self.test];
        let sum: f64 = parts.iter().sum();
        if parts.iter().any(|p| !p.is_finite() || *p < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(CorpusError::BadRatios(self.train, self.dev, self.test));
        }
        Ok(())
    }

    /// (train, dev, test) sizes: floors for dev and test, remainder to train.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        // Slack absorbs products like 0.2 * 1980 landing just under 396.
        let floor = |r: f64| ((r * n as f64) + 1e-9).floor() as usize;
        let dev = floor(self.dev).min(n);
        let test = floor(self.test).min(n - dev);
        (n - dev - test, dev, test)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Dev,
    Test,
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitName::Train => "train",
            SplitName::Dev => "dev",
            SplitName::Test => "test",
        })
    }
}

/// One line of the split manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub id: String,
    pub split: SplitName,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub train: Vec<EssayRecord>,
    pub dev: Vec<EssayRecord>,
    pub test: Vec<EssayRecord>,
    pub seed: u64,
    pub ratios: SplitRatios,
}

impl CorpusSplit {
    pub fn partition(&self, name: SplitName) -> &[EssayRecord] {
        match name {
            SplitName::Train => &self.train,
            SplitName::Dev => &self.dev,
            SplitName::Test => &self.test,
        }
    }

    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.dev.len(), self.test.len())
    }

    /// Manifest lines in train, dev, test order.
    pub fn manifest(&self) -> Vec<SplitAssignment> {
        [SplitName::Train, SplitName::Dev, SplitName::Test]
            .into_iter()
            .flat_map(|name| {
                self.partition(name).iter().map(move |r| SplitAssignment {
                    id: r.id.clone(),
                    split: name,
                })
            })
            .collect()
    }
}

/// Seeded shuffle of record positions, then slice into train, dev, test.
///
/// Positions `0..n` are permuted with [`shuffle::permutation`]; the first
/// `n_train` shuffled positions form train, the next `n_dev` dev, and the rest
/// test. Each partition lists its records in shuffled order.
pub fn split_corpus(
    records: &[EssayRecord],
    ratios: SplitRatios,
    seed: u64,
) -> Result<CorpusSplit, CorpusError> {
    if records.is_empty() {
        return Err(CorpusError::Empty);
    }
    ratios.validate()?;
    let (n_train, n_dev, _) = ratios.sizes(records.len());
    let order = shuffle::permutation(records.len(), seed);
    let pick = |idx: &[usize]| idx.iter().map(|&i| records[i].clone()).collect();
    Ok(CorpusSplit {
        train: pick(&order[..n_train]),
        dev: pick(&order[n_train..n_train + n_dev]),
        test: pick(&order[n_train + n_dev..]),
        seed,
        ratios,
    })
}

/// Rebuild a split from a persisted manifest without reshuffling.
pub fn apply_manifest(
    records: &[EssayRecord],
    manifest: &[SplitAssignment],
    ratios: SplitRatios,
    seed: u64,
) -> Result<CorpusSplit, CorpusError> {
    let by_id: HashMap<&str, &EssayRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
    let mut split = CorpusSplit {
        train: Vec::new(),
        dev: Vec::new(),
        test: Vec::new(),
        seed,
        ratios,
    };
    for entry in manifest {
        let record = by_id
            .get(entry.id.as_str())
            .ok_or_else(|| CorpusError::UnknownManifestId(entry.id.clone()))?;
        let bucket = match entry.split {
            SplitName::Train => &mut split.train,
            SplitName::Dev => &mut split.dev,
            SplitName::Test => &mut split.test,
        };
        bucket.push((*record).clone());
    }
    let assigned: HashSet<&str> = manifest.iter().map(|e| e.id.as_str()).collect();
    if let Some(missing) = records.iter().find(|r| !assigned.contains(r.id.as_str())) {
        return Err(CorpusError::UnassignedRecord(missing.id.clone()));
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn raw(id: &str, c: &str, o: &str, l: &str, t: Option<&str>) -> RawRecord {
        RawRecord {
            id: id.into(),
            subject: Some("Subject".into()),
            essay: Some("Body".into()),
            content: Some(c.into()),
            organization: Some(o.into()),
            language: Some(l.into()),
            total: t.map(Into::into),
        }
    }

    pub(crate) fn record(id: &str) -> EssayRecord {
        validate_record(&raw(id, "3.0", "4.0", "3.5", Some("10.5"))).unwrap()
    }

    fn write_csv(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_three_rows() {
        let f = write_csv(
            "prompt,essay,content,organization,language,total\n\
             S1,E1,3,4,3.5,10.5\n\
             S2,\"E2, with comma\",1,1,1,3\n\
             S3,E3,5,5,5,15\n",
        );
        let rows = load_corpus(f.path(), &ColumnMap::default(), b',').unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[1].essay.as_deref(), Some("E2, with comma"));
        assert_eq!(rows[0].id, "1");
    }

    #[test]
    fn load_reports_missing_column() {
        let f = write_csv("prompt,essay,content,language,total\nS,E,3,3,9\n");
        let err = load_corpus(f.path(), &ColumnMap::default(), b',').unwrap_err();
        assert!(
            matches!(&err, CorpusError::MissingColumn { column, .. } if column == "organization"),
            "{err}"
        );
        assert!(err.to_string().contains("organization"));
    }

    #[test]
    fn load_keeps_nan_cells_as_absent() {
        let f = write_csv("prompt,essay,content,organization,language,total\nS,E,NaN,3,3,\n");
        let rows = load_corpus(f.path(), &ColumnMap::default(), b',').unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].content, None);
        assert_eq!(rows[0].total, None);
        assert_eq!(rows[0].organization.as_deref(), Some("3"));
    }

    #[test]
    fn load_unreadable_file() {
        let err =
            load_corpus(Path::new("/no/such/file.csv"), &ColumnMap::default(), b',').unwrap_err();
        assert!(err.to_string().contains("/no/such/file.csv"));
    }

    #[test]
    fn load_with_custom_map_and_tabs() {
        let f = write_csv("essay_id\tsubj\ttext\tc\to\tl\nA7\tS\tE\t2\t2\t2\n");
        let map = ColumnMap {
            id: Some("essay_id".into()),
            subject: "subj".into(),
            essay: "text".into(),
            content: "c".into(),
            organization: "o".into(),
            language: "l".into(),
            total: None,
        };
        let rows = load_corpus(f.path(), &map, b'\t').unwrap();
        assert_eq!(rows[0].id, "A7");
        let rec = validate_record(&rows[0]).unwrap();
        assert_eq!(rec.total_score, 6.0);
    }

    #[test]
    fn validate_examples() {
        let mut absent = raw("a", "3.0", "3.0", "3.0", None);
        absent.content = None;
        assert_eq!(
            validate_record(&absent).unwrap_err().reason,
            RejectReason::AbsentScore
        );
        assert_eq!(
            validate_record(&raw("b", "3.25", "3.0", "3.0", None))
                .unwrap_err()
                .reason,
            RejectReason::OffGridScore
        );
        assert_eq!(
            validate_record(&raw("b", "high", "3.0", "3.0", None))
                .unwrap_err()
                .reason,
            RejectReason::OffGridScore
        );
        let ok = validate_record(&raw("c", "3.0", "4.0", "3.5", Some("10.5"))).unwrap();
        assert_eq!(ok.total_score, 10.5);
        assert_eq!(
            validate_record(&raw("d", "3.0", "4.0", "3.5", Some("11")))
                .unwrap_err()
                .reason,
            RejectReason::TotalMismatch
        );
        let recomputed = validate_record(&raw("e", "1", "2", "2.5", None)).unwrap();
        assert_eq!(recomputed.total_score, 5.5);
        let mut blank = raw("f", "3", "3", "3", None);
        blank.essay = Some("   ".into());
        assert_eq!(
            validate_record(&blank).unwrap_err().reason,
            RejectReason::EmptyText
        );
        blank.essay = None;
        assert_eq!(
            validate_record(&blank).unwrap_err().reason,
            RejectReason::EmptyText
        );
    }

    #[test]
    fn first_failed_reason_wins() {
        let mut r = raw("x", "9", "3", "3", Some("1"));
        r.subject = None;
        assert_eq!(
            validate_record(&r).unwrap_err().reason,
            RejectReason::OffGridScore
        );
    }

    #[test]
    fn clean_partitions_input() {
        let mut rows = vec![
            raw("1", "3", "3", "3", None),
            raw("2", "3.3", "3", "3", None),
            raw("3", "3", "3", "3", Some("9")),
            raw("4", "3", "3", "3", Some("8")),
            raw("5", "2", "2", "2", None),
        ];
        let (kept, report) = clean_corpus(&rows);
        assert_eq!(
            kept.iter().map(|r| r.id.as_str()).collect::<Vec<_>>(),
            ["1", "3", "5"]
        );
        assert_eq!(report.kept_count, 3);
        assert_eq!(report.rejected.len(), 2);

        rows.retain(|r| validate_record(r).is_ok());
        let (kept, report) = clean_corpus(&rows);
        assert_eq!(kept.len(), rows.len());
        assert!(report.rejected.is_empty());
    }

    #[test]
    fn clean_rejects_duplicate_ids() {
        let rows = vec![raw("1", "3", "3", "3", None), raw("1", "2", "2", "2", None)];
        let (kept, report) = clean_corpus(&rows);
        assert_eq!(kept.len(), 1);
        assert_eq!(report.rejected[0].reason, RejectReason::DuplicateId);
    }

    #[test]
    fn split_sizes_for_reference_corpus_size() {
        let records: Vec<_> = (0..1980).map(|i| record(&i.to_string())).collect();
        let split = split_corpus(&records, SplitRatios::default(), 22).unwrap();
        assert_eq!(split.sizes(), (1188, 396, 396));
    }

    #[test]
    fn split_of_ten_matches_enumerated_permutation() {
        // Expected permutation from an independent SplitMix64/Fisher–Yates
        // enumeration: [8, 1, 5, 9, 0, 4, 3, 2, 6, 7].
        let records: Vec<_> = (0..10).map(|i| record(&format!("r{i}"))).collect();
        let split = split_corpus(&records, SplitRatios::default(), 7).unwrap();
        let ids = |rs: &[EssayRecord]| rs.iter().map(|r| r.id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&split.train), ["r8", "r1", "r5", "r9", "r0", "r4"]);
        assert_eq!(ids(&split.dev), ["r3", "r2"]);
        assert_eq!(ids(&split.test), ["r6", "r7"]);
    }

    #[test]
    fn split_errors() {
        assert!(matches!(
            split_corpus(&[], SplitRatios::default(), 1),
            Err(CorpusError::Empty)
        ));
        let bad = SplitRatios {
            train: 0.5,
            dev: 0.2,
            test: 0.2,
        };
        assert!(matches!(
            split_corpus(&[record("a")], bad, 1),
            Err(CorpusError::BadRatios(..))
        ));
    }

    #[test]
    fn manifest_roundtrip() {
        let records: Vec<_> = (0..25).map(|i| record(&i.to_string())).collect();
        let split = split_corpus(&records, SplitRatios::default(), 3).unwrap();
        let rebuilt = apply_manifest(&records, &split.manifest(), split.ratios, 3).unwrap();
        assert_eq!(rebuilt, split);
        let mut short = split.manifest();
        short.pop();
        assert!(matches!(
            apply_manifest(&records, &short, split.ratios, 3),
            Err(CorpusError::UnassignedRecord(_))
        ));
    }

    #[test]
    fn score_lookup() {
        let r = record("a");
        assert_eq!(r.score_for(CONTENT).unwrap().value(), 3.0);
        assert_eq!(r.score_for(LANGUAGE).unwrap().value(), 3.5);
        assert_eq!(r.score_for("mechanics"), None);
    }

    use proptest::prelude::*;

    fn cell() -> impl Strategy<Value = Option<String>> {
        prop_oneof![
            Just(None),
            (0u8..14).prop_map(|h| Some(format!("{:.2}", f64::from(h) / 2.0))),
            Just(Some("3.25".to_string())),
            Just(Some(" ".to_string())),
        ]
    }

    fn raw_strategy() -> impl Strategy<Value = RawRecord> {
        (
            "[a-c]{1,2}",
            prop_oneof![
                Just(None),
                Just(Some("S".to_string())),
                Just(Some(" ".to_string()))
            ],
            prop_oneof![Just(None), Just(Some("E".to_string()))],
            cell(),
            cell(),
            cell(),
            prop_oneof![
                Just(None),
                (6u8..31).prop_map(|h| Some(format!("{}", f64::from(h) / 2.0)))
            ],
        )
            .prop_map(
                |(id, subject, essay, content, organization, language, total)| RawRecord {
                    id,
                    subject,
                    essay,
                    content,
                    organization,
                    language,
                    total,
                },
            )
    }

    proptest! {
        #[test]
        fn clean_covers_every_input_once(rows in proptest::collection::vec(raw_strategy(), 0..40)) {
            let (kept, report) = clean_corpus(&rows);
            prop_assert_eq!(kept.len() + report.rejected.len(), rows.len());
            prop_assert_eq!(report.kept_count, kept.len());
            let kept_ids: HashSet<_> = kept.iter().map(|r| r.id.clone()).collect();
            prop_assert_eq!(kept_ids.len(), kept.len());
            let input_ids: HashSet<_> = rows.iter().map(|r| r.id.clone()).collect();
            let all: HashSet<_> = kept_ids.iter().cloned()
                .chain(report.rejected.iter().map(|r| r.id.clone())).collect();
            prop_assert_eq!(all, input_ids);
        }

        #[test]
        fn validation_is_idempotent(row in raw_strategy()) {
            if let Ok(rec) = validate_record(&row) {
                prop_assert_eq!(validate_record(&rec.to_raw()), Ok(rec));
            }
        }

        #[test]
        fn split_is_a_deterministic_partition(n in 1usize..120, seed in any::<u64>()) {
            let records: Vec<_> = (0..n).map(|i| record(&i.to_string())).collect();
            let a = split_corpus(&records, SplitRatios::default(), seed).unwrap();
            let b = split_corpus(&records, SplitRatios::default(), seed).unwrap();
            prop_assert_eq!(&a, &b);
            let mut ids: Vec<_> = a.manifest().into_iter().map(|m| m.id).collect();
            ids.sort();
            ids.dedup();
            prop_assert_eq!(ids.len(), n);
            let (tr, dv, ts) = a.sizes();
            prop_assert_eq!(dv, (0.2 * n as f64 + 1e-9).floor() as usize);
            prop_assert_eq!(ts, dv);
            prop_assert_eq!(tr, n - dv - ts);
        }
    }
}
