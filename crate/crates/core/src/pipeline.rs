//! The funnel: post-processing, confidence, grammar and schema filtering, voting and
//! evaluation, run per question and merged in input order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::aggregate::{vote, Prediction, VoteCandidate};
use crate::confidence::{calibrate_threshold, offline_filter, online_simulate, OnlineOutcome, TraceConfidence};
use crate::eval::{aggregate, evaluate_question, Aggregates, EvalReport, EvalRow, GoldFailure, METRIC_COLUMNS};
use crate::executor::Backend;
use crate::schema::{schema_filter, schema_from_source, GraphSchema, SchemaCheck};
use crate::syntax::grammar_filter;
use crate::trace::{postprocess_raw, GrammarVariant, InferenceMode, PipelineConfig, QuestionRecord};

pub const REPORT_VERSION: u32 = 1;

/// Fraction of a question's traces used to calibrate the online threshold.
pub const WARMUP_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Confidence,
    Grammar,
    Schema,
    Survived,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStats {
    pub n_tokens: usize,
    pub lowest_group: f64,
    pub mean_confidence: f64,
    /// Tokens an online decoder would have skipped; 0 outside online mode.
    pub tokens_saved: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunnelRecord {
    pub trace_id: String,
    pub text: String,
    pub removed_at: Stage,
    pub reason: String,
    pub stats: TraceStats,
}

/// Survivors after each stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub input: usize,
    pub confidence: usize,
    pub grammar: usize,
    pub schema: usize,
}

impl StageCounts {
    pub fn as_array(&self) -> [usize; 4] {
        [self.input, self.confidence, self.grammar, self.schema]
    }

    pub fn is_non_increasing(&self) -> bool {
        self.as_array().windows(2).all(|w| w[0] >= w[1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionReport {
    pub question_id: String,
    pub stage_counts: StageCounts,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub online_threshold: Option<f64>,
    pub tokens_saved: usize,
    pub prediction: Prediction,
    pub funnel: Vec<FunnelRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub report_version: u32,
    pub config: PipelineConfig,
    pub backend: String,
    pub eval: EvalReport,
    pub questions: Vec<QuestionReport>,
    pub stage_totals: StageCounts,
    pub tokens_saved: usize,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("question {question_id}: {message}")]
    Schema { question_id: String, message: String },
    #[error("trace {trace_id}: {message}")]
    Trace { trace_id: String, message: String },
}

fn check_inputs(
    records: &[QuestionRecord],
    schema: Option<&GraphSchema>,
    config: &PipelineConfig,
) -> Result<(), PipelineError> {
    config.validate().map_err(PipelineError::Config)?;
    if config.inference_mode == InferenceMode::Online {
        if let Some(r) = records.iter().find(|r| r.traces.len() < 2) {
            return Err(PipelineError::Config(format!(
                "online mode needs at least 2 traces per question; {} has {}",
                r.question_id,
                r.traces.len()
            )));
        }
    }
    if config.schema_filter && schema.is_none() {
        for r in records {
            let parsed = schema_from_source(&r.schema).map_err(|e| PipelineError::Schema {
                question_id: r.question_id.clone(),
                message: e.to_string(),
            })?;
            if parsed.schema.is_empty() {
                return Err(PipelineError::Schema {
                    question_id: r.question_id.clone(),
                    message: "schema filtering is on but the question has no schema".into(),
                });
            }
        }
    }
    Ok(())
}

struct Outcome {
    report: QuestionReport,
    eval: Result<EvalRow, GoldFailure>,
}

fn run_question(
    record: &QuestionRecord,
    schema: Option<&GraphSchema>,
    config: &PipelineConfig,
    backend: &dyn Backend,
) -> Result<Outcome, PipelineError> {
    let n = record.traces.len();
    let texts: Vec<String> = record.traces.iter().map(|t| postprocess_raw(&t.raw_text)).collect();
    let confs = record
        .traces
        .iter()
        .map(|t| {
            TraceConfidence::from_trace(t, config.window).map_err(|e| PipelineError::Trace {
                trace_id: t.trace_id.clone(),
                message: e.to_string(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut funnel: Vec<FunnelRecord> = record
        .traces
        .iter()
        .zip(&texts)
        .zip(&confs)
        .map(|((t, text), c)| FunnelRecord {
            trace_id: t.trace_id.clone(),
            text: text.clone(),
            removed_at: Stage::Survived,
            reason: String::new(),
            stats: TraceStats {
                n_tokens: t.tokens.len(),
                lowest_group: c.lowest_group,
                mean_confidence: c.mean_confidence,
                tokens_saved: 0,
            },
        })
        .collect();

    // confidence stage
    let mut online_threshold = None;
    let alive: Vec<usize> = match config.inference_mode {
        InferenceMode::Base => (0..n).collect(),
        InferenceMode::Offline => {
            let scores: Vec<f64> = confs.iter().map(|c| c.lowest_group).collect();
            let kept = offline_filter(&scores, config.keep_ratio);
            let mut is_kept = vec![false; n];
            for &i in &kept {
                is_kept[i] = true;
            }
            for (i, rec) in funnel.iter_mut().enumerate().filter(|(i, _)| !is_kept[*i]) {
                rec.removed_at = Stage::Confidence;
                rec.reason = format!(
                    "lowest group confidence {:.4} outside the top {} of {}",
                    scores[i],
                    kept.len(),
                    n
                );
            }
            kept
        }
        InferenceMode::Online => {
            let warmup = ((WARMUP_FRACTION * n as f64).ceil() as usize).clamp(1, n);
            let warm_scores: Vec<f64> = confs[..warmup].iter().map(|c| c.lowest_group).collect();
            let threshold = calibrate_threshold(&warm_scores, config.keep_ratio).map_err(|e| {
                PipelineError::Trace {
                    trace_id: record.traces[0].trace_id.clone(),
                    message: e.to_string(),
                }
            })?;
            online_threshold = Some(threshold);
            let mut kept: Vec<usize> = (0..warmup).collect();
            for i in warmup..n {
                let outcome = online_simulate(&confs[i].token_confidences, config.window, threshold)
                    .map_err(|e| PipelineError::Trace {
                        trace_id: record.traces[i].trace_id.clone(),
                        message: e.to_string(),
                    })?;
                match outcome {
                    OnlineOutcome::Kept => kept.push(i),
                    OnlineOutcome::Terminated { position } => {
                        let rec = &mut funnel[i];
                        rec.removed_at = Stage::Confidence;
                        rec.stats.tokens_saved = outcome.tokens_saved(confs[i].token_confidences.len());
                        rec.reason = format!("terminated at token {position}: group below threshold {threshold:.4}");
                    }
                }
            }
            kept
        }
    };
    let after_confidence = alive.len();

    // grammar stage
    let candidates: Vec<(usize, &str)> = alive.iter().map(|&i| (i, texts[i].as_str())).collect();
    let (kept, rejected) = grammar_filter(candidates.into_iter().map(Indexed).collect(), config.grammar_variant);
    for r in rejected {
        let rec = &mut funnel[r.candidate.0 .0];
        rec.removed_at = Stage::Grammar;
        rec.reason = r.diagnostics.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ");
    }
    let after_grammar = kept.len();

    // schema stage
    let kept = if config.schema_filter {
        let owned;
        let schema = match schema {
            Some(s) => s,
            None => {
                owned = schema_from_source(&record.schema)
                    .map_err(|e| PipelineError::Schema {
                        question_id: record.question_id.clone(),
                        message: e.to_string(),
                    })?
                    .schema;
                &owned
            }
        };
        let check = SchemaCheck {
            mode: config.schema_match,
            strict: config.strict_schema,
        };
        let (kept, rejected) = schema_filter(kept, schema, config.grammar_variant, check);
        for r in rejected {
            let rec = &mut funnel[r.candidate.0 .0];
            rec.removed_at = Stage::Schema;
            rec.reason = r.violations.iter().map(|v| v.message.clone()).collect::<Vec<_>>().join("; ");
        }
        kept
    } else {
        kept
    };
    let after_schema = kept.len();

    let votes: Vec<VoteCandidate> = kept
        .iter()
        .map(|c| {
            let i = c.0 .0;
            VoteCandidate {
                trace_id: record.traces[i].trace_id.clone(),
                text: texts[i].clone(),
                mean_confidence: confs[i].mean_confidence,
            }
        })
        .collect();
    let prediction = vote(&votes, config.vote_mode);
    let eval = evaluate_question(&record.question_id, prediction.query.as_deref(), &record.gold_query, backend);
    let tokens_saved = funnel.iter().map(|r| r.stats.tokens_saved).sum();
    Ok(Outcome {
        report: QuestionReport {
            question_id: record.question_id.clone(),
            stage_counts: StageCounts {
                input: n,
                confidence: after_confidence,
                grammar: after_grammar,
                schema: after_schema,
            },
            online_threshold,
            tokens_saved,
            prediction,
            funnel,
        },
        eval,
    })
}

/// A candidate text tagged with its trace index.
struct Indexed<'a>((usize, &'a str));

impl AsRef<str> for Indexed<'_> {
    fn as_ref(&self) -> &str {
        self.0 .1
    }
}

/// Runs the funnel over every record. `schema`, when given, overrides each record's own.
pub fn run_pipeline(
    records: &[QuestionRecord],
    schema: Option<&GraphSchema>,
    config: &PipelineConfig,
    backend: &dyn Backend,
) -> Result<RunReport, PipelineError> {
    check_inputs(records, schema, config)?;
    let outcomes = records
        .par_iter()
        .map(|r| run_question(r, schema, config, backend))
        .collect::<Result<Vec<_>, _>>()?;
    let mut rows = Vec::new();
    let mut gold_failures = Vec::new();
    let mut questions = Vec::with_capacity(outcomes.len());
    let mut totals = StageCounts::default();
    for o in outcomes {
        match o.eval {
            Ok(row) => rows.push(row),
            Err(g) => gold_failures.push(g),
        }
        let c = o.report.stage_counts;
        totals.input += c.input;
        totals.confidence += c.confidence;
        totals.grammar += c.grammar;
        totals.schema += c.schema;
        questions.push(o.report);
    }
    let config_value: Value = serde_json::to_value(config).expect("config serializes");
    Ok(RunReport {
        report_version: REPORT_VERSION,
        config: config.clone(),
        backend: backend.name().to_string(),
        eval: aggregate(rows, gold_failures, Some(config_value)),
        tokens_saved: questions.iter().map(|q| q.tokens_saved).sum(),
        stage_totals: totals,
        questions,
    })
}

/// Filter combinations in table order: grammar variant and whether schema filtering is on.
pub const SWEEP_VARIANTS: [(GrammarVariant, bool); 5] = [
    (GrammarVariant::None, false),
    (GrammarVariant::Naive, false),
    (GrammarVariant::Formal, false),
    (GrammarVariant::Naive, true),
    (GrammarVariant::Formal, true),
];

pub const SWEEP_MODES: [InferenceMode; 3] = [InferenceMode::Base, InferenceMode::Online, InferenceMode::Offline];

pub fn variant_label(variant: GrammarVariant, schema: bool) -> String {
    match (variant, schema) {
        (GrammarVariant::None, false) => "none".into(),
        (GrammarVariant::None, true) => "schema".into(),
        (v, false) => v.to_string(),
        (v, true) => format!("{v}+schema"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub inference_mode: InferenceMode,
    /// `confidence` when a confidence stage ran, otherwise `none`.
    pub filtering: String,
    pub variant: String,
    pub aggregates: Aggregates,
}

pub fn sweep_columns() -> Vec<&'static str> {
    let mut cols = vec!["inference_mode", "filtering", "variant"];
    cols.extend(METRIC_COLUMNS);
    cols
}

/// Every mode crossed with every filter combination, on the same inputs.
pub fn sweep(
    records: &[QuestionRecord],
    schema: Option<&GraphSchema>,
    base: &PipelineConfig,
    backend: &dyn Backend,
) -> Result<Vec<SweepRow>, PipelineError> {
    let mut rows = Vec::new();
    for mode in SWEEP_MODES {
        for (variant, schema_on) in SWEEP_VARIANTS {
            let config = PipelineConfig {
                inference_mode: mode,
                grammar_variant: variant,
                schema_filter: schema_on,
                ..base.clone()
            };
            let report = run_pipeline(records, schema, &config, backend)?;
            rows.push(SweepRow {
                inference_mode: mode,
                filtering: if mode == InferenceMode::Base { "none" } else { "confidence" }.into(),
                variant: variant_label(variant, schema_on),
                aggregates: report.eval.aggregates,
            });
        }
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(sweep_columns()).expect("in-memory write");
    for r in rows {
        let mut fields = vec![r.inference_mode.to_string(), r.filtering.clone(), r.variant.clone()];
        fields.extend(r.aggregates.csv_fields());
        w.write_record(&fields).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("csv is utf-8")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::executor::MicroBackend;
    use crate::synth::{fixture_schema, fixture_schema_text, mutate, MutationKind};
    use crate::trace::{CandidateTrace, SchemaSource, TokenStep};
    use rand::SeedableRng;

    fn trace(id: &str, text: &str, c: f64) -> CandidateTrace {
        CandidateTrace {
            trace_id: id.into(),
            raw_text: text.into(),
            tokens: vec![TokenStep::new(vec![-c]).unwrap(); 4],
        }
    }

    fn record(gold: &str, traces: Vec<CandidateTrace>) -> QuestionRecord {
        QuestionRecord {
            question_id: "q0".into(),
            question: "?".into(),
            gold_query: gold.into(),
            schema: SchemaSource::Text(fixture_schema_text().into()),
            traces,
        }
    }

    const GOLD: &str = "MATCH (p:Person)-[:ACTED_IN]->(m:Movie) RETURN p.name ORDER BY p.name";

    #[test]
    fn single_trace_passthrough() {
        let cfg = PipelineConfig {
            inference_mode: InferenceMode::Base,
            grammar_variant: GrammarVariant::None,
            schema_filter: false,
            ..PipelineConfig::default()
        };
        let r = run_pipeline(&[record(GOLD, vec![trace("t", GOLD, 1.0)])], None, &cfg, &MicroBackend::fixture()).unwrap();
        assert_eq!(r.questions[0].prediction.query.as_deref(), Some(GOLD));
        assert_eq!(r.eval.aggregates.counts.success, 1);
    }

    #[test]
    fn all_flipped_gives_empty() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let flipped = mutate(GOLD, MutationKind::FlipDirection, &fixture_schema(), &mut rng);
        assert_eq!(flipped.applied, MutationKind::FlipDirection);
        let traces = (0..5).map(|i| trace(&format!("t{i}"), &flipped.text, 1.0 + i as f64)).collect();
        let cfg = PipelineConfig::default();
        let r = run_pipeline(&[record(GOLD, traces)], None, &cfg, &MicroBackend::fixture()).unwrap();
        let q = &r.questions[0];
        assert!(q.prediction.is_empty());
        assert_eq!(r.eval.aggregates.counts.empty, 1);
        assert_eq!(q.stage_counts.as_array(), [5, 5, 5, 0]);
        assert!(q.funnel.iter().all(|f| f.removed_at != Stage::Survived));
    }

    #[test]
    fn online_needs_two_traces() {
        let cfg = PipelineConfig {
            inference_mode: InferenceMode::Online,
            ..PipelineConfig::default()
        };
        let err = run_pipeline(&[record(GOLD, vec![trace("t", GOLD, 1.0)])], None, &cfg, &MicroBackend::fixture());
        assert!(matches!(err, Err(PipelineError::Config(_))));
    }

    #[test]
    fn online_terminates_weak_traces() {
        let traces = vec![
            trace("a", GOLD, 2.0),
            trace("b", GOLD, 1.0),
            trace("c", GOLD, 3.0),
        ];
        let cfg = PipelineConfig {
            inference_mode: InferenceMode::Online,
            window: 2,
            ..PipelineConfig::default()
        };
        let r = run_pipeline(&[record(GOLD, traces)], None, &cfg, &MicroBackend::fixture()).unwrap();
        let q = &r.questions[0];
        assert_eq!(q.online_threshold, Some(2.0));
        assert_eq!(q.funnel[1].removed_at, Stage::Confidence);
        // four tokens, window 2: the first group ends at token 1, leaving 2 unproduced
        assert_eq!(q.funnel[1].stats.tokens_saved, 2);
        assert_eq!(q.stage_counts.confidence, 2);
        assert_eq!(r.tokens_saved, 2);
    }

    #[test]
    fn schema_required_when_enabled() {
        let mut rec = record(GOLD, vec![trace("t", GOLD, 1.0)]);
        rec.schema = SchemaSource::Text(String::new());
        let err = run_pipeline(&[rec], None, &PipelineConfig::default(), &MicroBackend::fixture());
        assert!(matches!(err, Err(PipelineError::Schema { .. })));
    }

    #[test]
    fn sweep_has_fifteen_rows() {
        let rec = record(GOLD, vec![trace("a", GOLD, 1.0), trace("b", GOLD, 2.0)]);
        let rows = sweep(&[rec], None, &PipelineConfig::default(), &MicroBackend::fixture()).unwrap();
        assert_eq!(rows.len(), 15);
        let csv = sweep_csv(&rows);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "inference_mode,filtering,variant,rouge_l_lexical,rouge_l_exec,exec_succ_ratio,succ_pct,run_err,syn_err,empty"
        );
        assert_eq!(lines.next().unwrap(), "base,none,none,1.0000,1.0000,100.0,100.0,0,0,0");
    }
}
