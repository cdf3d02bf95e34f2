use std::path::PathBuf;

use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error at `{pointer}`: {message}")]
    Schema { pointer: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("task `{task}` failed: {source}")]
    Task {
        task: &'static str,
        #[source]
        source: hinfopt::Error,
    },
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

impl CliError {
    pub fn task(task: &'static str) -> impl FnOnce(hinfopt::Error) -> Self {
        move |source| Self::Task { task, source }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| Self::Io { path, source }
    }

    /// Machine-readable form printed on failure.
    pub fn to_json(&self) -> Value {
        let kind = match self {
            Self::Schema { .. } => "schema",
            Self::Io { .. } => "io",
            Self::Task { .. } => "task",
            Self::ThreadPool(_) => "thread_pool",
        };
        let mut err = json!({ "kind": kind, "message": self.to_string() });
        match self {
            Self::Schema { pointer, .. } => err["pointer"] = json!(pointer),
            Self::Task { task, source } => {
                err["task"] = json!(task);
                err["cause"] = json!(format!("{source:?}"));
            }
            _ => {}
        }
        json!({ "error": err })
    }
}
