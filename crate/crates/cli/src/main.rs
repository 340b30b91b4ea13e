use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use cypher_funnel::eval::{aggregate, evaluate_question, EvalReport};
use cypher_funnel::executor::{Backend, HttpBackend, HttpConfig, MicroBackend, MicroGraph};
use cypher_funnel::pipeline::{run_pipeline, sweep, sweep_csv};
use cypher_funnel::schema::{parse_schema, GraphSchema};
use cypher_funnel::synth::{default_gold_pool, fixture_schema, generate, SynthConfig};
use cypher_funnel::syntax::validate;
use cypher_funnel::trace::{
    load_dataset, write_dataset, GrammarVariant, InferenceMode, PipelineConfig, SchemaMatch, VoteMode,
};

#[derive(Parser)]
#[command(name = "cypher-funnel", version, about = "Filter, vote on and evaluate candidate Cypher queries")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the funnel over a dataset and write a JSON report.
    Run(RunArgs),
    /// Check queries (one per line) from files or stdin and print verdicts.
    Validate(ValidateArgs),
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Score a predictions file against the gold queries of a dataset.
    Eval(EvalArgs),
    /// Run every inference mode against every filter combination and write CSV.
    Sweep(RunArgs),
}

fn parse_enum<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn parse_switch(s: &str) -> Result<bool, String> {
    match s {
        "on" | "true" | "yes" => Ok(true),
        "off" | "false" | "no" => Ok(false),
        _ => Err(format!("expected on or off, got {s}")),
    }
}

#[derive(Args, Clone)]
struct BackendArgs {
    /// `micro` (in-memory graph) or `http` (endpoint from CYPHER_FUNNEL_HTTP_ENDPOINT).
    #[arg(long)]
    backend: Option<String>,
    /// Graph JSON for the micro backend; defaults to the bundled fixture.
    #[arg(long)]
    graph: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Schema text file overriding each question's own schema.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Flat TOML file with the same keys as the flags (underscored).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_enum::<InferenceMode>)]
    mode: Option<InferenceMode>,
    #[arg(long, value_parser = parse_enum::<GrammarVariant>)]
    grammar: Option<GrammarVariant>,
    #[arg(long, value_parser = parse_switch)]
    schema_filter: Option<bool>,
    #[arg(long)]
    keep_ratio: Option<f64>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long, value_parser = parse_enum::<VoteMode>)]
    vote: Option<VoteMode>,
    #[arg(long, value_parser = parse_enum::<SchemaMatch>)]
    schema_match: Option<SchemaMatch>,
    #[arg(long, value_parser = parse_switch)]
    strict_schema: Option<bool>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    backend: BackendArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long, default_value = "formal", value_parser = parse_enum::<GrammarVariant>)]
    variant: GrammarVariant,
    /// Files with one query per line; stdin when omitted.
    files: Vec<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_questions: Option<usize>,
    #[arg(long)]
    n_traces: Option<usize>,
    #[arg(long)]
    p_syntax_error: Option<f64>,
    #[arg(long)]
    p_direction_error: Option<f64>,
    #[arg(long)]
    p_label_error: Option<f64>,
    #[arg(long)]
    p_format_noise: Option<f64>,
    #[arg(long)]
    confidence_gap: Option<f64>,
    /// Gold queries, one per line; `#` lines are comments. Defaults to the bundled pool.
    #[arg(long)]
    gold_pool: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// JSONL lines of `{"question_id": ..., "prediction": string or null}`.
    #[arg(long)]
    predictions: PathBuf,
    /// Dataset supplying the gold query of each question.
    #[arg(long)]
    dataset: PathBuf,
    #[command(flatten)]
    backend: BackendArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Keys accepted in a `--config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    mode: Option<InferenceMode>,
    grammar: Option<GrammarVariant>,
    schema_filter: Option<bool>,
    keep_ratio: Option<f64>,
    window: Option<usize>,
    vote: Option<VoteMode>,
    schema_match: Option<SchemaMatch>,
    strict_schema: Option<bool>,
    seed: Option<u64>,
    backend: Option<String>,
    graph: Option<PathBuf>,
    schema: Option<PathBuf>,
    n_questions: Option<usize>,
    n_traces: Option<usize>,
    p_syntax_error: Option<f64>,
    p_direction_error: Option<f64>,
    p_label_error: Option<f64>,
    p_format_noise: Option<f64>,
    confidence_gap: Option<f64>,
}

/// A failure attributable to inputs rather than to the command line.
struct DataError(String);

impl<E: std::fmt::Display> From<E> for DataError {
    fn from(e: E) -> Self {
        DataError(e.to_string())
    }
}

type CmdResult = Result<(), DataError>;

fn load_file_config(path: Option<&Path>) -> Result<FileConfig, DataError> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path).map_err(|e| DataError(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| DataError(format!("{}: {e}", path.display())))
}

fn write_output(out: Option<&Path>, content: &str) -> CmdResult {
    match out {
        Some(p) => fs::write(p, content).map_err(|e| DataError(format!("{}: {e}", p.display()))),
        None => {
            io::stdout().write_all(content.as_bytes())?;
            Ok(())
        }
    }
}

fn make_backend(args: &BackendArgs, file: &FileConfig) -> Result<Box<dyn Backend>, DataError> {
    let kind = args.backend.clone().or_else(|| file.backend.clone()).unwrap_or_else(|| "micro".into());
    match kind.as_str() {
        "micro" => {
            let graph = match args.graph.as_ref().or(file.graph.as_ref()) {
                Some(p) => MicroGraph::load(p)?,
                None => MicroGraph::fixture(),
            };
            Ok(Box::new(MicroBackend::new(graph)))
        }
        "http" => {
            let cfg = HttpConfig::from_env()?
                .ok_or_else(|| DataError("http backend needs CYPHER_FUNNEL_HTTP_ENDPOINT".into()))?;
            Ok(Box::new(HttpBackend::new(cfg)))
        }
        other => Err(DataError(format!("unknown backend {other}; expected micro or http"))),
    }
}

fn pipeline_config(args: &RunArgs, file: &FileConfig) -> PipelineConfig {
    let d = PipelineConfig::default();
    PipelineConfig {
        inference_mode: args.mode.or(file.mode).unwrap_or(d.inference_mode),
        grammar_variant: args.grammar.or(file.grammar).unwrap_or(d.grammar_variant),
        schema_filter: args.schema_filter.or(file.schema_filter).unwrap_or(d.schema_filter),
        keep_ratio: args.keep_ratio.or(file.keep_ratio).unwrap_or(d.keep_ratio),
        window: args.window.or(file.window).unwrap_or(d.window),
        vote_mode: args.vote.or(file.vote).unwrap_or(d.vote_mode),
        schema_match: args.schema_match.or(file.schema_match).unwrap_or(d.schema_match),
        strict_schema: args.strict_schema.or(file.strict_schema).unwrap_or(d.strict_schema),
        seed: args.seed.or(file.seed).unwrap_or(d.seed),
        sampling: None,
    }
}

fn load_schema(path: Option<&Path>) -> Result<Option<GraphSchema>, DataError> {
    let Some(path) = path else { return Ok(None) };
    let text = fs::read_to_string(path).map_err(|e| DataError(format!("{}: {e}", path.display())))?;
    let parsed = parse_schema(&text)?;
    for w in &parsed.warnings {
        eprintln!("warning: {}: {w}", path.display());
    }
    Ok(Some(parsed.schema))
}

fn cmd_run(args: &RunArgs, is_sweep: bool) -> CmdResult {
    let file = load_file_config(args.config.as_deref())?;
    let config = pipeline_config(args, &file);
    config.validate().map_err(DataError)?;
    let records = load_dataset(&args.dataset)?;
    let schema = load_schema(args.schema.as_deref().or(file.schema.as_deref()))?;
    let backend = make_backend(&args.backend, &file)?;
    if is_sweep {
        let rows = sweep(&records, schema.as_ref(), &config, backend.as_ref())?;
        write_output(args.out.as_deref(), &sweep_csv(&rows))
    } else {
        let report = run_pipeline(&records, schema.as_ref(), &config, backend.as_ref())?;
        let a = &report.eval.aggregates;
        eprintln!(
            "{} questions: success {} runtime {} syntax {} empty {} ({}% succ)",
            a.questions,
            a.counts.success,
            a.counts.runtime_error,
            a.counts.syntax_error,
            a.counts.empty,
            a.success_pct_display()
        );
        write_output(args.out.as_deref(), &(report.to_json() + "\n"))
    }
}

fn cmd_validate(args: &ValidateArgs) -> CmdResult {
    let mut inputs = Vec::new();
    if args.files.is_empty() {
        let mut s = String::new();
        io::stdin().read_to_string(&mut s)?;
        inputs.push(s);
    }
    for f in &args.files {
        inputs.push(fs::read_to_string(f).map_err(|e| DataError(format!("{}: {e}", f.display())))?);
    }
    let mut out = io::stdout().lock();
    for line in inputs.iter().flat_map(|s| s.lines()).map(str::trim).filter(|l| !l.is_empty()) {
        let verdict = validate(line, args.variant);
        if verdict.accepted {
            writeln!(out, "accepted\t{line}")?;
        } else {
            let diags: Vec<String> = verdict.diagnostics.iter().map(ToString::to_string).collect();
            writeln!(out, "rejected\t{line}\t{}", diags.join("; "))?;
        }
    }
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> CmdResult {
    let file = load_file_config(args.config.as_deref())?;
    let d = SynthConfig::default();
    let cfg = SynthConfig {
        n_questions: args.n_questions.or(file.n_questions).unwrap_or(d.n_questions),
        n_traces: args.n_traces.or(file.n_traces).unwrap_or(d.n_traces),
        p_syntax_error: args.p_syntax_error.or(file.p_syntax_error).unwrap_or(d.p_syntax_error),
        p_direction_error: args.p_direction_error.or(file.p_direction_error).unwrap_or(d.p_direction_error),
        p_label_error: args.p_label_error.or(file.p_label_error).unwrap_or(d.p_label_error),
        confidence_gap: args.confidence_gap.or(file.confidence_gap).unwrap_or(d.confidence_gap),
        p_format_noise: args.p_format_noise.or(file.p_format_noise).unwrap_or(d.p_format_noise),
        seed: args.seed.or(file.seed).unwrap_or(d.seed),
    };
    let golds = match &args.gold_pool {
        Some(p) => fs::read_to_string(p)
            .map_err(|e| DataError(format!("{}: {e}", p.display())))?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(String::from)
            .collect(),
        None => default_gold_pool(),
    };
    let records = generate(&golds, &MicroGraph::fixture(), &fixture_schema(), &cfg)?;
    let mut buf = Vec::new();
    write_dataset(&mut buf, &records)?;
    write_output(args.out.as_deref(), &String::from_utf8(buf)?)
}

#[derive(Deserialize)]
struct PredictionLine {
    question_id: String,
    prediction: Option<String>,
}

fn cmd_eval(args: &EvalArgs) -> CmdResult {
    let records = load_dataset(&args.dataset)?;
    let backend = make_backend(&args.backend, &FileConfig::default())?;
    let text = fs::read_to_string(&args.predictions)
        .map_err(|e| DataError(format!("{}: {e}", args.predictions.display())))?;
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let p: PredictionLine = serde_json::from_str(line)
            .map_err(|e| DataError(format!("{} line {}: {e}", args.predictions.display(), n + 1)))?;
        let record = records
            .iter()
            .find(|r| r.question_id == p.question_id)
            .ok_or_else(|| DataError(format!("no question {} in the dataset", p.question_id)))?;
        match evaluate_question(&p.question_id, p.prediction.as_deref(), &record.gold_query, backend.as_ref()) {
            Ok(row) => rows.push(row),
            Err(g) => failures.push(g),
        }
    }
    let report: EvalReport = aggregate(rows, failures, None);
    write_output(args.out.as_deref(), &(serde_json::to_string_pretty(&report)? + "\n"))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a, false),
        Command::Sweep(a) => cmd_run(a, true),
        Command::Validate(a) => cmd_validate(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Eval(a) => cmd_eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(DataError(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
