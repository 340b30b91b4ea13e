//! Query execution backends for execution-based evaluation.

pub mod graph;
pub mod http;
pub mod micro;

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use graph::{GraphError, MicroGraph};
pub use http::{HttpBackend, HttpConfig};
pub use micro::execute_micro;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecStatus {
    Success,
    SyntaxError,
    RuntimeError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionOutcome {
    pub status: ExecStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<Vec<Vec<Value>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

impl ExecutionOutcome {
    pub fn success(rows: Vec<Vec<Value>>) -> Self {
        Self {
            status: ExecStatus::Success,
            rows: Some(rows),
            message: None,
        }
    }

    pub fn syntax_error(message: impl Into<String>) -> Self {
        Self {
            status: ExecStatus::SyntaxError,
            rows: None,
            message: Some(message.into()),
        }
    }

    pub fn runtime_error(message: impl Into<String>) -> Self {
        Self {
            status: ExecStatus::RuntimeError,
            rows: None,
            message: Some(message.into()),
        }
    }

    pub fn is_success(&self) -> bool {
        self.status == ExecStatus::Success
    }
}

/// Something that can run a query and classify the result.
pub trait Backend: Send + Sync {
    fn execute(&self, query: &str) -> ExecutionOutcome;

    fn name(&self) -> &str;
}

/// The in-memory engine over a fixed graph.
#[derive(Debug, Clone)]
pub struct MicroBackend {
    pub graph: MicroGraph,
}

impl MicroBackend {
    pub fn new(graph: MicroGraph) -> Self {
        Self { graph }
    }

    pub fn fixture() -> Self {
        Self::new(MicroGraph::fixture())
    }
}

impl Backend for MicroBackend {
    fn execute(&self, query: &str) -> ExecutionOutcome {
        execute_micro(&self.graph, query)
    }

    fn name(&self) -> &str {
        "micro"
    }
}
