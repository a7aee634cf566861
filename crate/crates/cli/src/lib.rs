//! Stage-by-stage pipeline driver behind the `rdbe` binary.

pub mod artifacts;
pub mod config;
pub mod pipeline;

pub use config::RunConfig;
pub use pipeline::{Baseline, Session};

use std::fmt;

/// Error category attached as context; selects the process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Config,
    Input,
    Endpoint,
    Training,
    Evaluation,
    Io,
}

impl Category {
    pub fn exit_code(self) -> i32 {
        match self {
            Category::Config => 3,
            Category::Input => 4,
            Category::Endpoint => 5,
            Category::Training => 6,
            Category::Evaluation => 7,
            Category::Io => 8,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::Config => "config error",
            Category::Input => "input error",
            Category::Endpoint => "endpoint error",
            Category::Training => "training error",
            Category::Evaluation => "evaluation error",
            Category::Io => "io error",
        })
    }
}

/// Category of the outermost categorized context, if any.
pub fn category_of(err: &anyhow::Error) -> Option<Category> {
    err.downcast_ref::<Category>().copied()
}
