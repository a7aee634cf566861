//! Content-addressed annotation cache: one JSON file per prompt hash plus an
//! `index.json` manifest. Every file is written with temp-file-then-rename.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::ReasoningAnnotation;
use crate::jsonl::{self, JsonlError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct IndexEntry {
    record_id: String,
    rubric_id: String,
    file: String,
}

#[derive(Debug)]
pub struct AnnotationCache {
    dir: PathBuf,
    index: Mutex<BTreeMap<String, IndexEntry>>,
}

impl AnnotationCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, JsonlError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|source| JsonlError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        let index_path = dir.join("index.json");
        let index = if index_path.exists() {
            let text = std::fs::read_to_string(&index_path).map_err(|source| JsonlError::Io {
                path: index_path.display().to_string(),
                source,
            })?;
            serde_json::from_str(&text)?
        } else {
            BTreeMap::new()
        };
        Ok(Self {
            dir,
            index: Mutex::new(index),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn entry_path(&self, hash: &str) -> PathBuf {
        self.dir.join(format!("{hash}.json"))
    }

    /// Look up by prompt hash. Entry files are authoritative; the index is
    /// a convenience listing.
    pub fn get(&self, prompt_hash: &str) -> Option<ReasoningAnnotation> {
        let text = std::fs::read_to_string(self.entry_path(prompt_hash)).ok()?;
        serde_json::from_str(&text).ok()
    }

    pub fn put(&self, annotation: &ReasoningAnnotation) -> Result<(), JsonlError> {
        let path = self.entry_path(&annotation.prompt_hash);
        let bytes = serde_json::to_vec_pretty(annotation)?;
        jsonl::write_atomic(&path, &bytes)?;
        let mut index = self.index.lock().unwrap_or_else(|e| e.into_inner());
        index.insert(
            annotation.prompt_hash.clone(),
            IndexEntry {
                record_id: annotation.record_id.clone(),
                rubric_id: annotation.rubric_id.clone(),
                file: format!("{}.json", annotation.prompt_hash),
            },
        );
        let bytes = serde_json::to_vec_pretty(&*index)?;
        jsonl::write_atomic(&self.dir.join("index.json"), &bytes)
    }

    pub fn len(&self) -> usize {
        self.index.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rubrics::Score;
    use chrono::{TimeZone, Utc};

    fn annotation(hash: &str) -> ReasoningAnnotation {
        ReasoningAnnotation {
            record_id: "r1".into(),
            rubric_id: "content".into(),
            gold_score: Score::new(3.5).unwrap(),
            reasoning: "ok".into(),
            model_id: "m".into(),
            prompt_hash: hash.into(),
            created_at: Utc.timestamp_opt(0, 0).unwrap(),
        }
    }

    #[test]
    fn put_get_and_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let cache = AnnotationCache::open(dir.path()).unwrap();
        assert!(cache.get("abc").is_none());
        cache.put(&annotation("abc")).unwrap();
        assert_eq!(cache.get("abc").unwrap(), annotation("abc"));
        drop(cache);
        let reopened = AnnotationCache::open(dir.path()).unwrap();
        assert_eq!(reopened.len(), 1);
        assert_eq!(reopened.get("abc").unwrap().reasoning, "ok");
    }

    #[test]
    fn concurrent_writers_keep_every_entry() {
        let dir = tempfile::tempdir().unwrap();
        let cache = AnnotationCache::open(dir.path()).unwrap();
        std::thread::scope(|s| {
            for t in 0..4 {
                let cache = &cache;
                s.spawn(move || {
                    for i in 0..10 {
                        cache.put(&annotation(&format!("h{t}-{i}"))).unwrap();
                    }
                });
            }
        });
        assert_eq!(cache.len(), 40);
        let reopened = AnnotationCache::open(dir.path()).unwrap();
        assert_eq!(reopened.len(), 40);
    }
}
