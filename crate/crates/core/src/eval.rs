//! Lexical and execution-based ROUGE-L, the four-way outcome taxonomy and report
//! aggregation.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::executor::{Backend, ExecStatus};

/// Lowercases and splits on every non-alphanumeric character.
pub fn rouge_tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|piece| !piece.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS-based F1. Zero when either side is empty.
pub fn rouge_l<T: PartialEq>(pred: &[T], reference: &[T]) -> f64 {
    if pred.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(pred, reference);
    if lcs == 0 {
        return 0.0;
    }
    // 2RP/(R+P) with R = lcs/|ref|, P = lcs/|pred| simplifies to 2*lcs/(|pred|+|ref|)
    2.0 * lcs as f64 / (pred.len() + reference.len()) as f64
}

/// Rows serialized as compact JSON, sorted and joined into one string.
pub fn serialize_rows(rows: &[Vec<Value>]) -> String {
    let mut lines: Vec<String> = rows
        .iter()
        .map(|r| serde_json::to_string(r).unwrap_or_default())
        .collect();
    lines.sort();
    lines.join("\n")
}

pub fn exec_rouge_l(pred_rows: &[Vec<Value>], gold_rows: &[Vec<Value>]) -> f64 {
    rouge_l(
        &rouge_tokenize(&serialize_rows(pred_rows)),
        &rouge_tokenize(&serialize_rows(gold_rows)),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeClass {
    Success,
    RuntimeError,
    SyntaxError,
    Empty,
}

impl From<ExecStatus> for OutcomeClass {
    fn from(s: ExecStatus) -> Self {
        match s {
            ExecStatus::Success => OutcomeClass::Success,
            ExecStatus::SyntaxError => OutcomeClass::SyntaxError,
            ExecStatus::RuntimeError => OutcomeClass::RuntimeError,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub question_id: String,
    pub prediction: Option<String>,
    pub rouge_l_lexical: f64,
    /// Present only when both the prediction and the gold query executed successfully.
    pub rouge_l_exec: Option<f64>,
    pub outcome_class: OutcomeClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

/// A gold query that did not execute; its question is left out of the aggregates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldFailure {
    pub question_id: String,
    pub gold_query: String,
    pub message: String,
}

/// Scores one prediction (`None` = empty) against its gold query.
pub fn evaluate_question(
    question_id: &str,
    prediction: Option<&str>,
    gold: &str,
    backend: &dyn Backend,
) -> Result<EvalRow, GoldFailure> {
    let gold_out = backend.execute(gold);
    let Some(gold_rows) = gold_out.rows.filter(|_| gold_out.status == ExecStatus::Success) else {
        return Err(GoldFailure {
            question_id: question_id.to_string(),
            gold_query: gold.to_string(),
            message: gold_out.message.unwrap_or_else(|| "gold query failed".into()),
        });
    };
    let Some(pred) = prediction else {
        return Ok(EvalRow {
            question_id: question_id.to_string(),
            prediction: None,
            rouge_l_lexical: 0.0,
            rouge_l_exec: None,
            outcome_class: OutcomeClass::Empty,
            message: None,
        });
    };
    let lexical = rouge_l(&rouge_tokenize(pred), &rouge_tokenize(gold));
    let out = backend.execute(pred);
    let exec = out.rows.as_ref().filter(|_| out.is_success()).map(|rows| exec_rouge_l(rows, &gold_rows));
    Ok(EvalRow {
        question_id: question_id.to_string(),
        prediction: Some(pred.to_string()),
        rouge_l_lexical: lexical,
        rouge_l_exec: exec,
        outcome_class: out.status.into(),
        message: out.message,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub success: usize,
    pub runtime_error: usize,
    pub syntax_error: usize,
    pub empty: usize,
}

impl OutcomeCounts {
    pub fn total(&self) -> usize {
        self.success + self.runtime_error + self.syntax_error + self.empty
    }

    fn add(&mut self, class: OutcomeClass) {
        match class {
            OutcomeClass::Success => self.success += 1,
            OutcomeClass::RuntimeError => self.runtime_error += 1,
            OutcomeClass::SyntaxError => self.syntax_error += 1,
            OutcomeClass::Empty => self.empty += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub questions: usize,
    /// Mean over every scored question; empty predictions count as 0.
    pub mean_rouge_l_lexical: f64,
    /// Mean over every scored question; questions without an execution score count as 0.
    pub mean_rouge_l_exec: f64,
    /// Percent of questions whose prediction executed, rounded half-up to one decimal.
    pub exec_success_ratio: f64,
    pub counts: OutcomeCounts,
    pub empty_dataset: bool,
}

/// Order-independent mean: values are summed in sorted order.
fn stable_mean(mut xs: Vec<f64>) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.sort_by(f64::total_cmp);
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// `100 * part / total` in tenths of a percent, rounded half-up.
pub fn percent_tenths(part: usize, total: usize) -> u64 {
    if total == 0 {
        return 0;
    }
    let (p, t) = (part as u64, total as u64);
    (2000 * p + t) / (2 * t)
}

pub fn format_tenths(tenths: u64) -> String {
    format!("{}.{}", tenths / 10, tenths % 10)
}

impl Aggregates {
    pub fn from_rows(rows: &[EvalRow]) -> Self {
        let mut counts = OutcomeCounts::default();
        for r in rows {
            counts.add(r.outcome_class);
        }
        let questions = rows.len();
        Self {
            questions,
            mean_rouge_l_lexical: stable_mean(rows.iter().map(|r| r.rouge_l_lexical).collect()),
            mean_rouge_l_exec: stable_mean(rows.iter().map(|r| r.rouge_l_exec.unwrap_or(0.0)).collect()),
            exec_success_ratio: percent_tenths(counts.success, questions) as f64 / 10.0,
            counts,
            empty_dataset: questions == 0,
        }
    }

    pub fn success_pct_display(&self) -> String {
        format_tenths(percent_tenths(self.counts.success, self.questions))
    }

    /// Values for [`METRIC_COLUMNS`], in order.
    pub fn csv_fields(&self) -> Vec<String> {
        let pct = self.success_pct_display();
        vec![
            format!("{:.4}", self.mean_rouge_l_lexical),
            format!("{:.4}", self.mean_rouge_l_exec),
            pct.clone(),
            pct,
            self.counts.runtime_error.to_string(),
            self.counts.syntax_error.to_string(),
            self.counts.empty.to_string(),
        ]
    }
}

/// Metric columns in the order of the lexical/execution table followed by the error table.
pub const METRIC_COLUMNS: [&str; 7] = [
    "rouge_l_lexical",
    "rouge_l_exec",
    "exec_succ_ratio",
    "succ_pct",
    "run_err",
    "syn_err",
    "empty",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub aggregates: Aggregates,
    pub gold_failures: Vec<GoldFailure>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<Value>,
}

pub fn aggregate(rows: Vec<EvalRow>, gold_failures: Vec<GoldFailure>, config: Option<Value>) -> EvalReport {
    EvalReport {
        aggregates: Aggregates::from_rows(&rows),
        rows,
        gold_failures,
        config,
    }
}
