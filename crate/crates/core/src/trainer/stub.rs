use std::collections::BTreeMap;
use std::path::Path;

use super::{AdapterError, DecodeParams, ModelAdapter};
use crate::distillset::DistillExample;

/// Memorizes exact input → target pairs. Unknown inputs generate "".
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StubAdapter {
    memory: BTreeMap<String, String>,
}

const FILE: &str = "stub.json";

impl StubAdapter {
    pub fn memorize(&mut self, input: String, target: String) {
        self.memory.insert(input, target);
    }

    pub fn len(&self) -> usize {
        self.memory.len()
    }

    pub fn is_empty(&self) -> bool {
        self.memory.is_empty()
    }
}

impl ModelAdapter for StubAdapter {
    fn name(&self) -> &str {
        "stub"
    }

    /// Loss is the fraction of examples whose target was not yet memorized.
    fn fit_epoch(&mut self, batches: &[Vec<&DistillExample>]) -> Result<f64, AdapterError> {
        let mut seen = 0usize;
        let mut new = 0usize;
        for ex in batches.iter().flatten() {
            seen += 1;
            if self.memory.get(&ex.input_text) != Some(&ex.target_text) {
                new += 1;
                self.memory
                    .insert(ex.input_text.clone(), ex.target_text.clone());
            }
        }
        Ok(if seen == 0 {
            0.0
        } else {
            new as f64 / seen as f64
        })
    }

    fn generate(&self, input: &str, _params: &DecodeParams) -> Result<String, AdapterError> {
        Ok(self.memory.get(input).cloned().unwrap_or_default())
    }

    fn save(&self, dir: &Path) -> Result<(), AdapterError> {
        let path = dir.join(FILE);
        let err = |message: String| AdapterError::Checkpoint {
            path: path.display().to_string(),
            message,
        };
        let bytes = serde_json::to_vec_pretty(&self.memory).map_err(|e| err(e.to_string()))?;
        crate::jsonl::write_atomic(&path, &bytes).map_err(|e| err(e.to_string()))
    }

    fn load(&mut self, dir: &Path) -> Result<(), AdapterError> {
        let path = dir.join(FILE);
        let err = |message: String| AdapterError::Checkpoint {
            path: path.display().to_string(),
            message,
        };
        let bytes = std::fs::read(&path).map_err(|e| err(e.to_string()))?;
        self.memory = serde_json::from_slice(&bytes).map_err(|e| err(e.to_string()))?;
        Ok(())
    }

    fn concurrent_generation(&self) -> bool {
        true
    }
}
