//! Scoring rubrics and the nine-point score grid.
//!
//! Rubric description texts are configuration. The packaged defaults in
//! `config/rubrics.toml` are marked placeholders; real runs load the official
//! texts with [`load_registry`].

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub const CONTENT: &str = "content";
pub const ORGANIZATION: &str = "organization";
pub const LANGUAGE: &str = "language";

/// The three rubrics every corpus record carries a gold score for.
pub const CANONICAL_RUBRICS: [&str; 3] = [CONTENT, ORGANIZATION, LANGUAGE];

const DEFAULT_REGISTRY_TOML: &str = include_str!("../config/rubrics.toml");

#[derive(Debug, thiserror::Error)]
pub enum RubricError {
    #[error("score {0} is not on the grid 1.0..=5.0 in 0.5 steps")]
    OffGrid(f64),
    #[error("score input is not finite: {0}")]
    NonFinite(f64),
    #[error("failed to read rubric config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("failed to parse rubric config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("duplicate rubric_id `{0}`")]
    DuplicateId(String),
    #[error("rubric `{0}` has an empty description")]
    EmptyDescription(String),
    #[error("rubric `{0}` has an empty id")]
    EmptyId(String),
}

/// A score on the grid {1.0, 1.5, ..., 5.0}, stored as a count of half points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Score(u8);

impl Score {
    pub const MIN: Score = Score(2);
    pub const MAX: Score = Score(10);
    /// Grid midpoint, used when a generation cannot be parsed.
    pub const MIDPOINT: Score = Score(6);

    pub fn new(value: f64) -> Result<Self, RubricError> {
        if !value.is_finite() {
            return Err(RubricError::NonFinite(value));
        }
        let halves = value * 2.0;
        if halves.fract() != 0.0 || !(2.0..=10.0).contains(&halves) {
            return Err(RubricError::OffGrid(value));
        }
        Ok(Score(halves as u8))
    }

    pub fn value(self) -> f64 {
        f64::from(self.0) / 2.0
    }

    /// Position on the grid, 0 for 1.0 through 8 for 5.0.
    pub fn index(self) -> usize {
        usize::from(self.0 - 2)
    }

    pub fn all() -> impl Iterator<Item = Score> {
        (2u8..=10).map(Score)
    }
}

impl TryFrom<f64> for Score {
    type Error = RubricError;

    fn try_from(value: f64) -> Result<Self, Self::Error> {
        Score::new(value)
    }
}

impl From<Score> for f64 {
    fn from(score: Score) -> f64 {
        score.value()
    }
}

/// Always one decimal place, so 3 renders as `3.0`.
impl fmt::Display for Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.1}", self.value())
    }
}

/// The canonical ordered score grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreGrid {
    values: Vec<f64>,
}

impl Default for ScoreGrid {
    fn default() -> Self {
        Self {
            values: Score::all().map(Score::value).collect(),
        }
    }
}

impl ScoreGrid {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn contains(&self, x: f64) -> bool {
        self.values.contains(&x)
    }

    /// Grid value closest to `x`; ties go to the lower value.
    pub fn nearest(&self, x: f64) -> Result<Score, RubricError> {
        if !x.is_finite() {
            return Err(RubricError::NonFinite(x));
        }
        let mut best = self.values[0];
        for &v in &self.values[1..] {
            if (x - v).abs() < (x - best).abs() {
                best = v;
            }
        }
        Score::new(best)
    }
}

pub fn nearest_grid_score(x: f64, grid: &ScoreGrid) -> Result<Score, RubricError> {
    grid.nearest(x)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RubricSpec {
    pub rubric_id: String,
    pub name: String,
    pub description: String,
}

/// Ordered, immutable set of rubrics with unique ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RubricRegistry {
    rubrics: Vec<RubricSpec>,
}

#[derive(Debug, Deserialize)]
struct RegistryFile {
    /// When true the file replaces the defaults instead of extending them.
    #[serde(default)]
    replace: bool,
    #[serde(default, rename = "rubric")]
    rubrics: Vec<RubricSpec>,
}

impl RubricRegistry {
    pub fn new(rubrics: Vec<RubricSpec>) -> Result<Self, RubricError> {
        let mut seen = HashSet::new();
        for rubric in &rubrics {
            check_entry(rubric)?;
            if !seen.insert(rubric.rubric_id.as_str()) {
                return Err(RubricError::DuplicateId(rubric.rubric_id.clone()));
            }
        }
        Ok(Self { rubrics })
    }

    pub fn get(&self, rubric_id: &str) -> Option<&RubricSpec> {
        self.rubrics.iter().find(|r| r.rubric_id == rubric_id)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, RubricSpec> {
        self.rubrics.iter()
    }

    pub fn len(&self) -> usize {
        self.rubrics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rubrics.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.rubrics.iter().map(|r| r.rubric_id.as_str())
    }

    /// Merge a config document over this registry.
    pub fn apply_toml(&self, text: &str) -> Result<Self, RubricError> {
        let file: RegistryFile = toml::from_str(text)?;
        let mut seen = HashSet::new();
        for rubric in &file.rubrics {
            check_entry(rubric)?;
            if !seen.insert(rubric.rubric_id.clone()) {
                return Err(RubricError::DuplicateId(rubric.rubric_id.clone()));
            }
        }
        let mut merged = if file.replace {
            Vec::new()
        } else {
            self.rubrics.clone()
        };
        for rubric in file.rubrics {
            match merged.iter_mut().find(|r| r.rubric_id == rubric.rubric_id) {
                Some(existing) => *existing = rubric,
                None => merged.push(rubric),
            }
        }
        RubricRegistry::new(merged)
    }
}

impl<'a> IntoIterator for &'a RubricRegistry {
    type Item = &'a RubricSpec;
    type IntoIter = std::slice::Iter<'a, RubricSpec>;

    fn into_iter(self) -> Self::IntoIter {
        self.iter()
    }
}

fn check_entry(rubric: &RubricSpec) -> Result<(), RubricError> {
    if rubric.rubric_id.trim().is_empty() {
        return Err(RubricError::EmptyId(rubric.name.clone()));
    }
    if rubric.description.trim().is_empty() {
        return Err(RubricError::EmptyDescription(rubric.rubric_id.clone()));
    }
    Ok(())
}

/// The packaged content/organization/language registry.
pub fn default_registry() -> RubricRegistry {
    let file: RegistryFile =
        toml::from_str(DEFAULT_REGISTRY_TOML).expect("packaged rubric config is valid TOML");
    RubricRegistry::new(file.rubrics).expect("packaged rubric config is valid")
}

/// Load a rubric config file, overriding or extending the defaults.
pub fn load_registry(path: &Path) -> Result<RubricRegistry, RubricError> {
    let text = std::fs::read_to_string(path).map_err(|source| RubricError::Io {
        path: path.display().to_string(),
        source,
    })?;
    default_registry().apply_toml(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_registry_has_three_canonical_rubrics() {
        let reg = default_registry();
        let ids: Vec<_> = reg.ids().collect();
        assert_eq!(ids, CANONICAL_RUBRICS);
        assert!(reg.iter().all(|r| !r.description.trim().is_empty()));
        let unique: HashSet<_> = reg.ids().collect();
        assert_eq!(unique.len(), reg.len());
    }

    #[test]
    fn override_and_extend() {
        let reg = default_registry()
            .apply_toml(
                r#"
                [[rubric]]
                rubric_id = "content"
                name = "Content"
                description = "New content text."

                [[rubric]]
                rubric_id = "mechanics"
                name = "Mechanics"
                description = "Punctuation and spelling."
                "#,
            )
            .unwrap();
        assert_eq!(reg.len(), 4);
        assert_eq!(reg.get(CONTENT).unwrap().description, "New content text.");
        assert_eq!(reg.iter().last().unwrap().rubric_id, "mechanics");
    }

    #[test]
    fn replace_drops_defaults() {
        let reg = default_registry()
            .apply_toml(
                "replace = true\n[[rubric]]\nrubric_id = \"x\"\nname = \"X\"\ndescription = \"d\"\n",
            )
            .unwrap();
        assert_eq!(reg.ids().collect::<Vec<_>>(), ["x"]);
    }

    #[test]
    fn duplicate_and_empty_entries_rejected() {
        let dup = "[[rubric]]\nrubric_id = \"a\"\nname = \"A\"\ndescription = \"d\"\n\
                   [[rubric]]\nrubric_id = \"a\"\nname = \"A2\"\ndescription = \"e\"\n";
        assert!(matches!(
            default_registry().apply_toml(dup),
            Err(RubricError::DuplicateId(id)) if id == "a"
        ));
        let empty = "[[rubric]]\nrubric_id = \"a\"\nname = \"A\"\ndescription = \"  \"\n";
        assert!(matches!(
            default_registry().apply_toml(empty),
            Err(RubricError::EmptyDescription(_))
        ));
        assert!(matches!(
            default_registry().apply_toml("[[rubric]]\nrubric_id = 3"),
            Err(RubricError::Parse(_))
        ));
    }

    #[test]
    fn nearest_grid_examples() {
        let grid = ScoreGrid::default();
        assert_eq!(grid.nearest(3.7).unwrap().value(), 3.5);
        assert_eq!(grid.nearest(4.25).unwrap().value(), 4.0);
        assert_eq!(grid.nearest(9.0).unwrap().value(), 5.0);
        assert_eq!(grid.nearest(-2.0).unwrap().value(), 1.0);
        assert!(matches!(
            grid.nearest(f64::NAN),
            Err(RubricError::NonFinite(_))
        ));
        assert!(grid.nearest(f64::INFINITY).is_err());
    }

    #[test]
    fn score_rendering_and_validation() {
        assert_eq!(Score::new(3.0).unwrap().to_string(), "3.0");
        assert_eq!(Score::new(4.5).unwrap().to_string(), "4.5");
        assert!(Score::new(3.25).is_err());
        assert!(Score::new(0.5).is_err());
        assert!(Score::new(5.5).is_err());
        assert_eq!(Score::all().count(), 9);
        assert_eq!(Score::MIDPOINT.value(), 3.0);
        let json = serde_json::to_string(&Score::new(2.5).unwrap()).unwrap();
        assert_eq!(json, "2.5");
        assert!(serde_json::from_str::<Score>("2.4").is_err());
    }

    #[test]
    fn grid_shape() {
        let grid = ScoreGrid::default();
        let v = grid.values();
        assert_eq!(v.len(), 9);
        assert_eq!(v[0], 1.0);
        assert_eq!(v[8], 5.0);
        assert!(v.windows(2).all(|w| w[0] < w[1]));
    }

    proptest::proptest! {
        #[test]
        fn nearest_is_idempotent_and_on_grid(x in -100.0f64..100.0) {
            let grid = ScoreGrid::default();
            let s = grid.nearest(x).unwrap();
            proptest::prop_assert!(grid.contains(s.value()));
            proptest::prop_assert_eq!(grid.nearest(s.value()).unwrap(), s);
        }
    }

    #[test]
    fn grid_values_are_fixed_points() {
        let grid = ScoreGrid::default();
        for s in Score::all() {
            assert_eq!(grid.nearest(s.value()).unwrap(), s);
        }
    }
}
