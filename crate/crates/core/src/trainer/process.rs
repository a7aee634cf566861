//! Adapter that delegates to an external worker process.
//!
//! The worker reads one JSON request per line on stdin and answers with one
//! JSON line on stdout:
//!
//! ```text
//! -> {"op":"configure","config":{...TrainConfig}}
//! -> {"op":"fit_epoch","batches":[[{"input":..,"target":..}, ..], ..]}
//! -> {"op":"generate","input":"..","max_new_tokens":512}
//! -> {"op":"save","dir":".."}   {"op":"load","dir":".."}
//! <- {"ok":true,"loss":1.23}    {"ok":true,"text":".."}
//! <- {"ok":false,"error":".."}
//! ```

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{AdapterError, DecodeParams, ModelAdapter, TrainConfig};
use crate::distillset::DistillExample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessConfig {
    pub program: PathBuf,
    #[serde(default)]
    pub args: Vec<String>,
    #[serde(default = "default_name")]
    pub name: String,
}

fn default_name() -> String {
    "process".into()
}

#[derive(Debug, Deserialize)]
struct Reply {
    ok: bool,
    #[serde(default)]
    loss: Option<f64>,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    error: Option<String>,
}

struct Pipes {
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

pub struct ProcessAdapter {
    config: ProcessConfig,
    child: Mutex<Child>,
    pipes: Mutex<Pipes>,
}

impl ProcessAdapter {
    pub fn spawn(config: ProcessConfig) -> Result<Self, AdapterError> {
        let mut child = Command::new(&config.program)
            .args(&config.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| {
                AdapterError::Runtime(format!("cannot start {}: {e}", config.program.display()))
            })?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(Self {
            config,
            child: Mutex::new(child),
            pipes: Mutex::new(Pipes { stdin, stdout }),
        })
    }

    fn call(&self, request: Value) -> Result<Reply, AdapterError> {
        let mut pipes = self
            .pipes
            .lock()
            .map_err(|_| AdapterError::Protocol("worker pipe poisoned".into()))?;
        let mut line =
            serde_json::to_string(&request).map_err(|e| AdapterError::Protocol(e.to_string()))?;
        line.push('\n');
        pipes
            .stdin
            .write_all(line.as_bytes())
            .and_then(|_| pipes.stdin.flush())
            .map_err(|e| AdapterError::Protocol(format!("write to worker: {e}")))?;
        let mut answer = String::new();
        let n = pipes
            .stdout
            .read_line(&mut answer)
            .map_err(|e| AdapterError::Protocol(format!("read from worker: {e}")))?;
        if n == 0 {
            return Err(AdapterError::Protocol("worker closed its output".into()));
        }
        let reply: Reply = serde_json::from_str(answer.trim())
            .map_err(|e| AdapterError::Protocol(format!("bad worker reply {answer:?}: {e}")))?;
        if !reply.ok {
            return Err(AdapterError::Runtime(
                reply
                    .error
                    .unwrap_or_else(|| "worker reported failure".into()),
            ));
        }
        Ok(reply)
    }
}

impl Drop for ProcessAdapter {
    fn drop(&mut self) {
        if let Ok(mut child) = self.child.lock() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

impl ModelAdapter for ProcessAdapter {
    fn name(&self) -> &str {
        &self.config.name
    }

    fn configure(&mut self, config: &TrainConfig) -> Result<(), AdapterError> {
        self.call(json!({"op": "configure", "config": config}))
            .map(|_| ())
    }

    fn fit_epoch(&mut self, batches: &[Vec<&DistillExample>]) -> Result<f64, AdapterError> {
        let payload: Vec<Vec<Value>> = batches
            .iter()
            .map(|b| {
                b.iter()
                    .map(|ex| json!({"input": ex.input_text, "target": ex.target_text}))
                    .collect()
            })
            .collect();
        let reply = self.call(json!({"op": "fit_epoch", "batches": payload}))?;
        reply
            .loss
            .ok_or_else(|| AdapterError::Protocol("fit_epoch reply without loss".into()))
    }

    fn generate(&self, input: &str, params: &DecodeParams) -> Result<String, AdapterError> {
        let reply = self.call(json!({
            "op": "generate",
            "input": input,
            "max_new_tokens": params.max_new_tokens,
        }))?;
        reply
            .text
            .ok_or_else(|| AdapterError::Protocol("generate reply without text".into()))
    }

    fn save(&self, dir: &Path) -> Result<(), AdapterError> {
        std::fs::create_dir_all(dir).map_err(|e| AdapterError::Checkpoint {
            path: dir.display().to_string(),
            message: e.to_string(),
        })?;
        self.call(json!({"op": "save", "dir": dir})).map(|_| ())
    }

    fn load(&mut self, dir: &Path) -> Result<(), AdapterError> {
        self.call(json!({"op": "load", "dir": dir})).map(|_| ())
    }
}
