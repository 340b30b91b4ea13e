//! Executes queries against a remote HTTP endpoint that speaks the Neo4j transactional JSON
//! format: the request body is `{"statements":[{"statement": q}]}` and errors come back as
//! `{"errors":[{"code": ...}]}`.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Backend, ExecutionOutcome};

pub const ENV_ENDPOINT: &str = "CYPHER_FUNNEL_HTTP_ENDPOINT";
/// Sent verbatim as the `Authorization` header, e.g. `Basic bmVvNGo6c2VjcmV0`.
pub const ENV_AUTH: &str = "CYPHER_FUNNEL_HTTP_AUTH";
pub const ENV_TIMEOUT_SECS: &str = "CYPHER_FUNNEL_HTTP_TIMEOUT_SECS";
pub const ENV_MAX_IN_FLIGHT: &str = "CYPHER_FUNNEL_HTTP_MAX_IN_FLIGHT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    pub endpoint: String,
    #[serde(default)]
    pub auth: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
}

fn default_timeout() -> f64 {
    30.0
}

fn default_in_flight() -> usize {
    4
}

impl HttpConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            auth: None,
            timeout_secs: default_timeout(),
            max_in_flight: default_in_flight(),
        }
    }

    /// Reads the endpoint and credentials from the environment; `None` if no endpoint is set.
    pub fn from_env() -> Result<Option<Self>, String> {
        let Ok(endpoint) = std::env::var(ENV_ENDPOINT) else {
            return Ok(None);
        };
        let mut cfg = Self::new(endpoint);
        cfg.auth = std::env::var(ENV_AUTH).ok();
        if let Ok(t) = std::env::var(ENV_TIMEOUT_SECS) {
            cfg.timeout_secs = t
                .parse()
                .map_err(|_| format!("{ENV_TIMEOUT_SECS} is not a number: {t}"))?;
        }
        if let Ok(n) = std::env::var(ENV_MAX_IN_FLIGHT) {
            cfg.max_in_flight = n
                .parse()
                .map_err(|_| format!("{ENV_MAX_IN_FLIGHT} is not an integer: {n}"))?;
        }
        Ok(Some(cfg))
    }
}

struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

pub struct HttpBackend {
    config: HttpConfig,
    agent: ureq::Agent,
    limit: Semaphore,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("endpoint", &self.config.endpoint)
            .finish_non_exhaustive()
    }
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs_f64(config.timeout_secs.max(0.001)))
            .build();
        let limit = Semaphore::new(config.max_in_flight);
        Self {
            config,
            agent,
            limit,
        }
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }
}

impl Backend for HttpBackend {
    fn execute(&self, query: &str) -> ExecutionOutcome {
        let _permit = self.limit.acquire();
        let mut request = self
            .agent
            .post(&self.config.endpoint)
            .set("Accept", "application/json");
        if let Some(auth) = &self.config.auth {
            request = request.set("Authorization", auth);
        }
        let body = json!({"statements": [{"statement": query}]});
        let response = match request.send_json(body) {
            Ok(resp) => resp,
            Err(ureq::Error::Status(code, resp)) => {
                // error payloads often still carry a classified error code
                return match resp.into_json::<Value>() {
                    Ok(v) if error_codes(&v).next().is_some() => classify(&v),
                    _ => ExecutionOutcome::runtime_error(format!("HTTP status {code}")),
                };
            }
            Err(e) => return ExecutionOutcome::runtime_error(format!("transport error: {e}")),
        };
        match response.into_json::<Value>() {
            Ok(v) => classify(&v),
            Err(e) => ExecutionOutcome::runtime_error(format!("unreadable response: {e}")),
        }
    }

    fn name(&self) -> &str {
        "http"
    }
}

/// Error objects in a response: entries of `errors`, or the body itself if it has a `code`.
fn error_codes(body: &Value) -> impl Iterator<Item = &Value> {
    let listed = body
        .get("errors")
        .and_then(Value::as_array)
        .map(|a| a.as_slice())
        .unwrap_or_default();
    let top = body.get("code").map(|_| body);
    listed.iter().chain(top)
}

/// Maps a response body to an outcome. Any error whose code or classification mentions
/// `SyntaxError` is a syntax error; other errors are runtime errors.
pub fn classify(body: &Value) -> ExecutionOutcome {
    let errors: Vec<&Value> = error_codes(body).collect();
    if !errors.is_empty() {
        let text = |e: &Value, k: &str| e.get(k).and_then(Value::as_str).unwrap_or("").to_string();
        let syntax = errors.iter().any(|e| {
            text(e, "code").contains("SyntaxError") || text(e, "classification").contains("SyntaxError")
        });
        let message = errors
            .iter()
            .map(|e| {
                let (code, msg) = (text(e, "code"), text(e, "message"));
                if msg.is_empty() {
                    code
                } else {
                    format!("{code}: {msg}")
                }
            })
            .collect::<Vec<_>>()
            .join("; ");
        return if syntax {
            ExecutionOutcome::syntax_error(message)
        } else {
            ExecutionOutcome::runtime_error(message)
        };
    }
    let data = body
        .get("results")
        .and_then(|r| r.get(0))
        .and_then(|r| r.get("data"))
        .and_then(Value::as_array);
    let rows = data
        .map(|d| {
            d.iter()
                .map(|entry| {
                    entry
                        .get("row")
                        .and_then(Value::as_array)
                        .cloned()
                        .unwrap_or_default()
                })
                .collect()
        })
        .unwrap_or_default();
    ExecutionOutcome::success(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::executor::ExecStatus;

    #[test]
    fn classifies_bodies() {
        let ok = classify(&json!({"results":[{"columns":["x"],"data":[{"row":[1]},{"row":[2]}]}],"errors":[]}));
        assert_eq!(ok.rows, Some(vec![vec![json!(1)], vec![json!(2)]]));
        let syn = classify(&json!({"code":"Neo.ClientError.Statement.SyntaxError"}));
        assert_eq!(syn.status, ExecStatus::SyntaxError);
        let run = classify(&json!({"errors":[{"code":"Neo.ClientError.Statement.EntityNotFound","message":"gone"}]}));
        assert_eq!(run.status, ExecStatus::RuntimeError);
        assert!(run.message.unwrap().contains("gone"));
    }

    #[test]
    fn semaphore_bounds_concurrency() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        let sem = Semaphore::new(2);
        let active = AtomicUsize::new(0);
        let peak = AtomicUsize::new(0);
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| {
                    let _p = sem.acquire();
                    let now = active.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    std::thread::sleep(Duration::from_millis(5));
                    active.fetch_sub(1, Ordering::SeqCst);
                });
            }
        });
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }
}
