//! Questions, candidate traces, pipeline configuration and JSONL ingestion.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

/// Top-k log-probabilities recorded at one decoding position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTokenStep")]
pub struct TokenStep {
    topk_logprobs: Vec<f64>,
}

#[derive(Deserialize)]
struct RawTokenStep {
    topk_logprobs: Vec<f64>,
}

impl TryFrom<RawTokenStep> for TokenStep {
    type Error = String;

    fn try_from(raw: RawTokenStep) -> Result<Self, Self::Error> {
        TokenStep::new(raw.topk_logprobs)
    }
}

impl TokenStep {
    /// Validates that the list is non-empty, finite, `<= 0` and sorted non-increasing.
    pub fn new(topk_logprobs: Vec<f64>) -> Result<Self, String> {
        if topk_logprobs.is_empty() {
            return Err("topk_logprobs must not be empty".into());
        }
        for (i, lp) in topk_logprobs.iter().enumerate() {
            if !lp.is_finite() {
                return Err(format!("topk_logprobs[{i}] is not finite"));
            }
            if *lp > 0.0 {
                return Err(format!("topk_logprobs[{i}] = {lp} is positive"));
            }
        }
        if topk_logprobs.windows(2).any(|w| w[0] < w[1]) {
            return Err("topk_logprobs must be sorted in non-increasing order".into());
        }
        Ok(Self { topk_logprobs })
    }

    pub fn topk_logprobs(&self) -> &[f64] {
        &self.topk_logprobs
    }
}

/// One sampled candidate: raw model output plus its token-level log-probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateTrace {
    pub trace_id: String,
    #[serde(rename = "text")]
    pub raw_text: String,
    pub tokens: Vec<TokenStep>,
}

/// A relationship triple given in structured form inside a dataset record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripleSpec {
    pub source: String,
    #[serde(rename = "type")]
    pub rel_type: String,
    pub target: String,
}

/// Schema as it appears in a dataset line: either the multi-line triple text or a JSON array.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SchemaSource {
    Text(String),
    Triples(Vec<TripleSpec>),
}

impl Default for SchemaSource {
    fn default() -> Self {
        SchemaSource::Text(String::new())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub question_id: String,
    pub question: String,
    pub gold_query: String,
    #[serde(rename = "schema")]
    pub schema: SchemaSource,
    pub traces: Vec<CandidateTrace>,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: invalid JSON at byte offset {offset}: {message}")]
    Json {
        line: usize,
        offset: usize,
        message: String,
    },
    #[error("line {line}: missing required field `{field}`")]
    MissingField { line: usize, field: &'static str },
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
    #[error("line {line}: duplicate question_id `{question_id}`")]
    DuplicateId { line: usize, question_id: String },
}

const REQUIRED_FIELDS: [&str; 5] = ["question_id", "question", "gold_query", "schema", "traces"];
const REQUIRED_TRACE_FIELDS: [&str; 3] = ["trace_id", "text", "tokens"];

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<QuestionRecord>, DatasetError> {
    let file = std::fs::File::open(path)?;
    read_dataset(file)
}

/// Reads JSON Lines records; blank lines are skipped but still counted for line numbers.
pub fn read_dataset(reader: impl Read) -> Result<Vec<QuestionRecord>, DatasetError> {
    let mut reader = BufReader::new(reader);
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    let mut buf = String::new();
    let mut line_no = 0;
    let mut line_start = 0usize;
    loop {
        buf.clear();
        let n = reader.read_line(&mut buf)?;
        if n == 0 {
            break;
        }
        line_no += 1;
        let start = line_start;
        line_start += n;
        let line = buf.trim_end_matches(['\n', '\r']);
        if line.trim().is_empty() {
            continue;
        }
        let record = parse_record_line(line, line_no, start)?;
        if !seen.insert(record.question_id.clone()) {
            return Err(DatasetError::DuplicateId {
                line: line_no,
                question_id: record.question_id,
            });
        }
        records.push(record);
    }
    Ok(records)
}

fn parse_record_line(line: &str, line_no: usize, start: usize) -> Result<QuestionRecord, DatasetError> {
    let value: Value = serde_json::from_str(line).map_err(|e| DatasetError::Json {
        line: line_no,
        offset: start + column_offset(line, e.column()),
        message: e.to_string(),
    })?;
    let obj = value.as_object().ok_or_else(|| DatasetError::Invalid {
        line: line_no,
        message: "expected a JSON object".into(),
    })?;
    for field in REQUIRED_FIELDS {
        if !obj.contains_key(field) {
            return Err(DatasetError::MissingField { line: line_no, field });
        }
    }
    if let Some(Value::Array(traces)) = obj.get("traces") {
        for trace in traces {
            if let Some(t) = trace.as_object() {
                for field in REQUIRED_TRACE_FIELDS {
                    if !t.contains_key(field) {
                        return Err(DatasetError::MissingField { line: line_no, field });
                    }
                }
            }
        }
    }
    let record: QuestionRecord = serde_json::from_value(value).map_err(|e| DatasetError::Invalid {
        line: line_no,
        message: e.to_string(),
    })?;
    for trace in &record.traces {
        if trace.tokens.is_empty() && !trace.raw_text.is_empty() {
            return Err(DatasetError::Invalid {
                line: line_no,
                message: format!("trace `{}` has text but no tokens", trace.trace_id),
            });
        }
    }
    Ok(record)
}

// serde_json columns are 1-based and count characters; convert to a byte offset.
fn column_offset(line: &str, column: usize) -> usize {
    line.char_indices()
        .nth(column.saturating_sub(1))
        .map(|(i, _)| i)
        .unwrap_or(line.len())
}

pub fn write_dataset(mut writer: impl Write, records: &[QuestionRecord]) -> std::io::Result<()> {
    for record in records {
        serde_json::to_writer(&mut writer, record)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Named sampling settings. Recorded for provenance only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "name")]
pub enum SamplingProfile {
    ModeratelyDiverse,
    VeryDiverse,
    Custom { temperature: f64, top_p: f64, top_k: u32 },
}

impl SamplingProfile {
    /// `(temperature, top_p, top_k)`
    pub fn parameters(&self) -> (f64, f64, u32) {
        match *self {
            SamplingProfile::ModeratelyDiverse => (0.9, 0.99, 60),
            SamplingProfile::VeryDiverse => (1.2, 0.999, 80),
            SamplingProfile::Custom {
                temperature,
                top_p,
                top_k,
            } => (temperature, top_p, top_k),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InferenceMode {
    Base,
    Offline,
    Online,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GrammarVariant {
    None,
    Naive,
    Formal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VoteMode {
    Majority,
    ConfidenceWeighted,
}

/// How schema triples are matched against relationship usages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemaMatch {
    /// Both endpoints must agree with the same triple.
    LabelAware,
    /// Each endpoint is compared with the roles the type plays anywhere in the schema.
    TypeOnly,
}

macro_rules! display_via_serde {
    ($($ty:ty),*) => {$(
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                match serde_json::to_value(self) {
                    Ok(Value::String(s)) => f.write_str(&s),
                    _ => write!(f, "{self:?}"),
                }
            }
        }
    )*};
}

display_via_serde!(InferenceMode, GrammarVariant, VoteMode, SchemaMatch);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub inference_mode: InferenceMode,
    pub grammar_variant: GrammarVariant,
    pub schema_filter: bool,
    /// Fraction of candidates kept by offline filtering; also sets the online threshold quantile.
    pub keep_ratio: f64,
    pub window: usize,
    pub vote_mode: VoteMode,
    pub schema_match: SchemaMatch,
    /// Reject relationship types that do not appear in the schema.
    pub strict_schema: bool,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling: Option<SamplingProfile>,
}

pub const DEFAULT_KEEP_RATIO: f64 = 0.9;
pub const DEFAULT_WINDOW: usize = 32;

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            inference_mode: InferenceMode::Offline,
            grammar_variant: GrammarVariant::Formal,
            schema_filter: true,
            keep_ratio: DEFAULT_KEEP_RATIO,
            window: DEFAULT_WINDOW,
            vote_mode: VoteMode::Majority,
            schema_match: SchemaMatch::LabelAware,
            strict_schema: false,
            seed: 0,
            sampling: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.inference_mode == InferenceMode::Base {
            return Ok(());
        }
        if !(self.keep_ratio > 0.0 && self.keep_ratio <= 1.0) {
            return Err(format!("keep_ratio must be in (0, 1], got {}", self.keep_ratio));
        }
        if self.window == 0 {
            return Err("window must be a positive integer".into());
        }
        Ok(())
    }
}

/// Cleans raw model output into a bare query string.
///
/// Strips surrounding whitespace, markdown fences, a leading `cypher:`/`cypher` prefix and
/// trailing semicolons, then collapses whitespace runs outside quoted regions. The steps
/// repeat until nothing changes, which makes the function idempotent.
pub fn postprocess_raw(raw_text: &str) -> String {
    let mut current = raw_text.to_string();
    loop {
        let mut next = current.trim().to_string();
        next = strip_fence(&next).trim().to_string();
        next = strip_cypher_prefix(&next).trim().to_string();
        next = next.trim_end_matches(|c: char| c == ';' || c.is_whitespace()).to_string();
        next = collapse_whitespace(&next);
        if next == current {
            return next;
        }
        current = next;
    }
}

fn strip_fence(text: &str) -> &str {
    let start = if text.starts_with("```") {
        Some(0)
    } else {
        text.find("\n```").map(|i| i + 1)
    };
    let Some(start) = start else {
        return text;
    };
    let after = &text[start + 3..];
    let body = match after.find('\n') {
        Some(nl)
            if after[..nl]
                .trim()
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '+')) =>
        {
            &after[nl + 1..]
        }
        _ => after,
    };
    match body.find("```") {
        Some(end) => &body[..end],
        None => body,
    }
}

fn strip_cypher_prefix(text: &str) -> &str {
    const PREFIX: &str = "cypher";
    if text.len() < PREFIX.len() || !text.is_char_boundary(PREFIX.len()) {
        return text;
    }
    if !text[..PREFIX.len()].eq_ignore_ascii_case(PREFIX) {
        return text;
    }
    let rest = &text[PREFIX.len()..];
    if let Some(r) = rest.strip_prefix(':') {
        r
    } else if rest.is_empty() || rest.starts_with(char::is_whitespace) {
        rest
    } else {
        text
    }
}

/// Collapses whitespace runs to one space, leaving quoted strings and backtick names intact.
fn collapse_whitespace(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars().peekable();
    let mut pending_space = false;
    while let Some(c) = chars.next() {
        if c.is_whitespace() {
            pending_space = true;
            continue;
        }
        if pending_space {
            out.push(' ');
            pending_space = false;
        }
        out.push(c);
        match c {
            '\'' | '"' => {
                while let Some(q) = chars.next() {
                    out.push(q);
                    if q == '\\' {
                        if let Some(esc) = chars.next() {
                            out.push(esc);
                        }
                    } else if q == c {
                        break;
                    }
                }
            }
            '`' => {
                for q in chars.by_ref() {
                    out.push(q);
                    if q == '`' {
                        break;
                    }
                }
            }
            _ => {}
        }
    }
    out
}
