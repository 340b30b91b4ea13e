//! Seeded synthetic benchmark: candidate sets derived from gold queries by controlled
//! corruption, with token confidences that are lower on average for corrupted traces.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::executor::{execute_micro, MicroGraph};
use crate::schema::{extract_usages, parse_schema, schema_validate, GraphSchema, SchemaCheck};
use crate::syntax::lexer::{tokenize, CypherToken, TokenKind};
use crate::syntax::naive::CLAUSE_KEYWORDS;
use crate::syntax::parse;
use crate::trace::{CandidateTrace, QuestionRecord, SchemaSource, TokenStep};

const GOLD_POOL: &str = include_str!("../data/gold_pool.txt");
const FIXTURE_SCHEMA: &str = include_str!("../data/fixture_schema.txt");

/// The bundled gold queries over [`MicroGraph::fixture`].
pub fn default_gold_pool() -> Vec<String> {
    GOLD_POOL
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect()
}

pub fn fixture_schema_text() -> &'static str {
    FIXTURE_SCHEMA
}

pub fn fixture_schema() -> GraphSchema {
    parse_schema(FIXTURE_SCHEMA)
        .expect("bundled schema is valid")
        .schema
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MutationKind {
    DropBracket,
    DuplicateClauseKeyword,
    TruncateTail,
    FlipDirection,
    LabelSwap,
    Identity,
}

impl MutationKind {
    pub const SYNTAX: [MutationKind; 3] = [
        MutationKind::DropBracket,
        MutationKind::DuplicateClauseKeyword,
        MutationKind::TruncateTail,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MutationKind::DropBracket => "drop_bracket",
            MutationKind::DuplicateClauseKeyword => "duplicate_clause_keyword",
            MutationKind::TruncateTail => "truncate_tail",
            MutationKind::FlipDirection => "flip_direction",
            MutationKind::LabelSwap => "label_swap",
            MutationKind::Identity => "identity",
        }
    }

    pub fn is_syntax(self) -> bool {
        Self::SYNTAX.contains(&self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mutation {
    pub text: String,
    pub requested: MutationKind,
    /// Differs from `requested` when the requested kind did not apply to the gold query.
    pub applied: MutationKind,
}

impl Mutation {
    pub fn fell_back(&self) -> bool {
        self.requested != self.applied
    }
}

fn parses(text: &str) -> bool {
    parse(text).is_ok()
}

fn splice(text: &str, edits: &mut [(usize, usize, &str)]) -> String {
    // apply right to left so earlier offsets stay valid
    edits.sort_by_key(|e| std::cmp::Reverse(e.0));
    let mut out = text.to_string();
    for (start, end, insert) in edits.iter() {
        out.replace_range(*start..*end, insert);
    }
    out
}

/// Shortest prefix, cut at a token boundary, that no longer parses.
pub fn truncate_tail(gold: &str) -> String {
    let tokens = tokenize(gold).unwrap_or_default();
    for keep in (0..tokens.len()).rev() {
        let cut = tokens.get(keep).map_or(gold.len(), |t| t.position.offset);
        let candidate = gold[..cut].trim_end();
        if !parses(candidate) {
            return candidate.to_string();
        }
    }
    String::new()
}

fn drop_bracket(gold: &str, tokens: &[CypherToken], rng: &mut impl Rng) -> Option<String> {
    let brackets: Vec<&CypherToken> = tokens
        .iter()
        .filter(|t| t.kind == TokenKind::Symbol && matches!(t.text.as_str(), "(" | ")" | "[" | "]" | "{" | "}"))
        .collect();
    if brackets.is_empty() {
        return None;
    }
    let t = brackets[rng.gen_range(0..brackets.len())];
    Some(splice(gold, &mut [(t.position.offset, t.end_offset(), "")]))
}

fn duplicate_keyword(gold: &str, tokens: &[CypherToken], rng: &mut impl Rng) -> Option<String> {
    let clauses: Vec<&CypherToken> = tokens
        .iter()
        .filter(|t| CLAUSE_KEYWORDS.iter().any(|k| t.is_keyword(k)))
        .collect();
    if clauses.is_empty() {
        return None;
    }
    let t = clauses[rng.gen_range(0..clauses.len())];
    let insert = format!(" {}", t.text);
    Some(splice(gold, &mut [(t.end_offset(), t.end_offset(), &insert)]))
}

/// Token indices of one relationship pattern between two node patterns.
#[derive(Debug, Clone, Copy)]
struct Arrow {
    lt: Option<usize>,
    first_dash: usize,
    last_dash: usize,
    gt: Option<usize>,
}

fn find_arrows(tokens: &[CypherToken]) -> Vec<Arrow> {
    let sym = |i: usize, s: &str| tokens.get(i).is_some_and(|t| t.is_symbol(s));
    let mut arrows = Vec::new();
    let mut i = 1;
    while i < tokens.len() {
        if !sym(i - 1, ")") {
            i += 1;
            continue;
        }
        let lt = sym(i, "<").then_some(i);
        let first_dash = i + usize::from(lt.is_some());
        if !sym(first_dash, "-") {
            i += 1;
            continue;
        }
        let mut j = first_dash + 1;
        if sym(j, "[") {
            let mut depth = 0;
            while j < tokens.len() {
                if sym(j, "[") {
                    depth += 1;
                } else if sym(j, "]") {
                    depth -= 1;
                    if depth == 0 {
                        break;
                    }
                }
                j += 1;
            }
            j += 1;
        }
        if !sym(j, "-") {
            i += 1;
            continue;
        }
        let last_dash = j;
        let gt = sym(j + 1, ">").then_some(j + 1);
        let after = last_dash + 1 + usize::from(gt.is_some());
        if sym(after, "(") {
            arrows.push(Arrow {
                lt,
                first_dash,
                last_dash,
                gt,
            });
        }
        i = after;
    }
    arrows
}

fn flip_direction(gold: &str, tokens: &[CypherToken], rng: &mut impl Rng) -> Option<String> {
    let directed: Vec<Arrow> = find_arrows(tokens)
        .into_iter()
        .filter(|a| a.lt.is_some() != a.gt.is_some())
        .collect();
    if directed.is_empty() {
        return None;
    }
    let a = directed[rng.gen_range(0..directed.len())];
    let mut edits = match (a.lt, a.gt) {
        (None, Some(gt)) => {
            let gt = &tokens[gt];
            let first = tokens[a.first_dash].position.offset;
            vec![(gt.position.offset, gt.end_offset(), ""), (first, first, "<")]
        }
        (Some(lt), None) => {
            let lt = &tokens[lt];
            let last = tokens[a.last_dash].end_offset();
            vec![(last, last, ">"), (lt.position.offset, lt.end_offset(), "")]
        }
        _ => return None,
    };
    Some(splice(gold, &mut edits))
}

/// Token indices of node labels: the name after `(:` or `(var:`.
fn node_label_tokens(tokens: &[CypherToken]) -> Vec<usize> {
    let sym = |i: usize, s: &str| tokens.get(i).is_some_and(|t| t.is_symbol(s));
    let mut out = Vec::new();
    for i in 1..tokens.len().saturating_sub(1) {
        if !sym(i, ":") {
            continue;
        }
        let after_paren = sym(i - 1, "(");
        let after_var = i >= 2 && tokens[i - 1].kind == TokenKind::Identifier && sym(i - 2, "(");
        if (after_paren || after_var) && tokens[i + 1].symbolic_name().is_some() {
            out.push(i + 1);
        }
    }
    out
}

fn label_swap(
    gold: &str,
    tokens: &[CypherToken],
    schema: &GraphSchema,
    rng: &mut impl Rng,
) -> Option<String> {
    let mut labels: Vec<&String> = schema
        .triples()
        .iter()
        .flat_map(|t| [&t.source_label, &t.target_label])
        .collect();
    labels.sort();
    labels.dedup();
    let mut options = Vec::new();
    for idx in node_label_tokens(tokens) {
        let tok = &tokens[idx];
        for label in &labels {
            if tok.symbolic_name().as_deref() == Some(label.as_str()) {
                continue;
            }
            let text = splice(gold, &mut [(tok.position.offset, tok.end_offset(), label.as_str())]);
            let valid = parse(&text).is_ok_and(|q| {
                schema_validate(&extract_usages(&q), schema, SchemaCheck::default()).accepted
            });
            if valid {
                options.push(text);
            }
        }
    }
    if options.is_empty() {
        return None;
    }
    Some(options.swap_remove(rng.gen_range(0..options.len())))
}

/// Applies one mutation of `kind` to `gold`. Kinds that cannot apply, or whose result would
/// not have the promised property, fall back to [`truncate_tail`].
pub fn mutate(gold: &str, kind: MutationKind, schema: &GraphSchema, rng: &mut impl Rng) -> Mutation {
    let tokens = tokenize(gold).unwrap_or_default();
    let attempt = match kind {
        MutationKind::Identity => Some(gold.to_string()),
        MutationKind::TruncateTail => Some(truncate_tail(gold)),
        MutationKind::DropBracket => drop_bracket(gold, &tokens, rng).filter(|t| !parses(t)),
        MutationKind::DuplicateClauseKeyword => duplicate_keyword(gold, &tokens, rng).filter(|t| !parses(t)),
        MutationKind::FlipDirection => flip_direction(gold, &tokens, rng).filter(|t| {
            parse(t).is_ok_and(|q| !schema_validate(&extract_usages(&q), schema, SchemaCheck::default()).accepted)
        }),
        MutationKind::LabelSwap => label_swap(gold, &tokens, schema, rng),
    };
    match attempt {
        Some(text) => Mutation {
            text,
            requested: kind,
            applied: kind,
        },
        None => Mutation {
            text: truncate_tail(gold),
            requested: kind,
            applied: MutationKind::TruncateTail,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_questions: usize,
    pub n_traces: usize,
    pub p_syntax_error: f64,
    pub p_direction_error: f64,
    pub p_label_error: f64,
    /// Mean drop in token confidence for corrupted traces.
    pub confidence_gap: f64,
    /// Probability that a trace's raw text carries a `cypher:` prefix or a code fence.
    pub p_format_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_questions: 50,
            n_traces: 16,
            p_syntax_error: 0.4,
            p_direction_error: 0.3,
            p_label_error: 0.1,
            confidence_gap: 1.0,
            p_format_noise: 0.2,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let probs = [
            ("p_syntax_error", self.p_syntax_error),
            ("p_direction_error", self.p_direction_error),
            ("p_label_error", self.p_label_error),
            ("p_format_noise", self.p_format_noise),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(SynthError::Config(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        let corrupt = self.p_syntax_error + self.p_direction_error + self.p_label_error;
        if corrupt > 1.0 + 1e-12 {
            return Err(SynthError::Config(format!(
                "error probabilities sum to {corrupt}, more than 1"
            )));
        }
        if !(self.confidence_gap.is_finite() && self.confidence_gap >= 0.0) {
            return Err(SynthError::Config("confidence_gap must be a non-negative number".into()));
        }
        if self.n_traces == 0 {
            return Err(SynthError::Config("n_traces must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    Config(String),
    #[error("gold pool is empty")]
    EmptyPool,
    #[error("gold query does not parse: {0}")]
    GoldSyntax(String),
    #[error("gold query fails on the fixture graph: {query}: {message}")]
    GoldExecution { query: String, message: String },
}

/// Mean token confidence of a correct trace.
pub const BASE_CONFIDENCE: f64 = 3.0;
/// Spread of per-trace mean confidence.
pub const TRACE_SD: f64 = 0.3;
/// Spread of token confidence around the trace mean.
pub const TOKEN_SD: f64 = 0.5;
pub const MIN_TOKEN_CONFIDENCE: f64 = 0.05;
/// Relative top-5 log-probability profile; its mean is 1, so the step's confidence is `c`.
const TOPK_PROFILE: [f64; 5] = [0.2, 0.6, 1.0, 1.4, 1.8];

/// splitmix64 finaliser.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for question `index`: `splitmix64(seed ^ splitmix64(index))`.
pub fn question_seed(seed: u64, index: usize) -> u64 {
    splitmix64(seed ^ splitmix64(index as u64))
}

fn token_steps(n: usize, mean: f64, rng: &mut ChaCha8Rng) -> Vec<TokenStep> {
    let noise = Normal::new(0.0, TOKEN_SD).expect("valid sd");
    (0..n)
        .map(|_| {
            let c = (mean + noise.sample(rng)).max(MIN_TOKEN_CONFIDENCE);
            let lps: Vec<f64> = TOPK_PROFILE.iter().map(|w| -c * w).collect();
            TokenStep::new(lps).expect("profile is sorted and non-positive")
        })
        .collect()
}

fn with_format_noise(text: &str, rng: &mut ChaCha8Rng, p: f64) -> String {
    if rng.gen::<f64>() >= p {
        return text.to_string();
    }
    if rng.gen_bool(0.5) {
        format!("cypher: {text}")
    } else {
        format!("```cypher\n{text}\n```")
    }
}

fn pick_kind(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> MutationKind {
    let u: f64 = rng.gen();
    if u < cfg.p_syntax_error {
        MutationKind::SYNTAX[rng.gen_range(0..3)]
    } else if u < cfg.p_syntax_error + cfg.p_direction_error {
        MutationKind::FlipDirection
    } else if u < cfg.p_syntax_error + cfg.p_direction_error + cfg.p_label_error {
        MutationKind::LabelSwap
    } else {
        MutationKind::Identity
    }
}

fn question(index: usize, gold: &str, schema: &GraphSchema, cfg: &SynthConfig) -> QuestionRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(question_seed(cfg.seed, index));
    let trace_noise = Normal::new(0.0, TRACE_SD).expect("valid sd");
    let question_id = format!("q{index:04}");
    let traces = (0..cfg.n_traces)
        .map(|t| {
            let kind = pick_kind(cfg, &mut rng);
            let m = mutate(gold, kind, schema, &mut rng);
            let corrupted = m.applied != MutationKind::Identity;
            let mean = BASE_CONFIDENCE - if corrupted { cfg.confidence_gap } else { 0.0 }
                + trace_noise.sample(&mut rng);
            let n_tokens = tokenize(&m.text).map_or(0, |t| t.len()).max(m.text.split_whitespace().count()).max(1);
            let tokens = token_steps(n_tokens, mean, &mut rng);
            let raw_text = with_format_noise(&m.text, &mut rng, cfg.p_format_noise);
            let mut trace_id = format!("{question_id}-t{t:02}-{}", m.applied.as_str());
            if m.fell_back() {
                trace_id.push_str(&format!("-from-{}", m.requested.as_str()));
            }
            CandidateTrace {
                trace_id,
                raw_text,
                tokens,
            }
        })
        .collect();
    QuestionRecord {
        question_id,
        question: format!("Synthetic question {index}: {gold}"),
        gold_query: gold.to_string(),
        schema: SchemaSource::Text(schema.to_text()),
        traces,
    }
}

/// Builds `n_questions` records cycling through `golds`. Output depends only on the inputs.
pub fn generate(
    golds: &[String],
    graph: &MicroGraph,
    schema: &GraphSchema,
    cfg: &SynthConfig,
) -> Result<Vec<QuestionRecord>, SynthError> {
    cfg.validate()?;
    if golds.is_empty() {
        return Err(SynthError::EmptyPool);
    }
    for g in golds {
        if !parses(g) {
            return Err(SynthError::GoldSyntax(g.clone()));
        }
        let out = execute_micro(graph, g);
        if !out.is_success() {
            return Err(SynthError::GoldExecution {
                query: g.clone(),
                message: out.message.unwrap_or_default(),
            });
        }
    }
    Ok((0..cfg.n_questions)
        .into_par_iter()
        .map(|i| question(i, &golds[i % golds.len()], schema, cfg))
        .collect())
}

/// [`generate`] over the bundled gold pool, graph and schema.
pub fn generate_default(cfg: &SynthConfig) -> Result<Vec<QuestionRecord>, SynthError> {
    generate(&default_gold_pool(), &MicroGraph::fixture(), &fixture_schema(), cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::confidence::TraceConfidence;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn flip_examples() {
        let s = fixture_schema();
        let m = mutate(
            "MATCH (a:Person)-[:ACTED_IN]->(m:Movie) RETURN a",
            MutationKind::FlipDirection,
            &s,
            &mut rng(),
        );
        assert_eq!(m.text, "MATCH (a:Person)<-[:ACTED_IN]-(m:Movie) RETURN a");
        let m = mutate(
            "MATCH (m:Movie)<-[:DIRECTED]-(p:Person) RETURN m",
            MutationKind::FlipDirection,
            &s,
            &mut rng(),
        );
        assert_eq!(m.text, "MATCH (m:Movie)-[:DIRECTED]->(p:Person) RETURN m");
    }

    #[test]
    fn flip_without_relationship_falls_back() {
        let m = mutate("MATCH (p:Person) RETURN p.name", MutationKind::FlipDirection, &fixture_schema(), &mut rng());
        assert!(m.fell_back());
        assert_eq!(m.applied, MutationKind::TruncateTail);
        assert!(parse(&m.text).is_err());
    }

    #[test]
    fn duplicate_keyword_doubles_a_clause() {
        let s = fixture_schema();
        let mut r = rng();
        let mut saw_return = false;
        for _ in 0..50 {
            let m = mutate("MATCH (n:Person) RETURN n.name", MutationKind::DuplicateClauseKeyword, &s, &mut r);
            assert!(parse(&m.text).is_err());
            saw_return |= m.text.contains("RETURN RETURN");
        }
        assert!(saw_return);
    }

    #[test]
    fn identity_and_truncate() {
        let s = fixture_schema();
        let g = "MATCH (p:Person) RETURN p.name ORDER BY p.name";
        assert_eq!(mutate(g, MutationKind::Identity, &s, &mut rng()).text, g);
        assert_eq!(truncate_tail(g), "MATCH (p:Person) RETURN p.name ORDER BY p.");
        assert_eq!(truncate_tail("MATCH (g:Genre) RETURN count(*)"), "MATCH (g:Genre) RETURN count(*");
    }

    #[test]
    fn label_swap_stays_valid() {
        let s = fixture_schema();
        let g = "MATCH (p:Person)-[:ACTED_IN]->(m:Movie) RETURN count(*)";
        let m = mutate(g, MutationKind::LabelSwap, &s, &mut rng());
        assert_eq!(m.applied, MutationKind::LabelSwap);
        assert_ne!(m.text, g);
        let q = parse(&m.text).unwrap();
        assert!(schema_validate(&extract_usages(&q), &s, SchemaCheck::default()).accepted);
    }

    #[test]
    fn gold_pool_runs_on_fixture() {
        let g = MicroGraph::fixture();
        let pool = default_gold_pool();
        assert!(pool.len() >= 10);
        for q in &pool {
            let out = execute_micro(&g, q);
            assert!(out.is_success(), "{q}: {:?}", out.message);
            assert!(!out.rows.unwrap().is_empty(), "{q}");
        }
    }

    #[test]
    fn generated_confidence_matches_model() {
        let cfg = SynthConfig {
            n_questions: 3,
            n_traces: 4,
            p_format_noise: 0.0,
            ..SynthConfig::default()
        };
        let data = generate_default(&cfg).unwrap();
        assert_eq!(data.len(), 3);
        for r in &data {
            assert_eq!(r.traces.len(), 4);
            for t in &r.traces {
                let tc = TraceConfidence::from_trace(t, 32).unwrap();
                assert!(tc.token_confidences.iter().all(|c| *c >= MIN_TOKEN_CONFIDENCE - 1e-12));
            }
        }
    }

    #[test]
    fn bad_gold_is_named() {
        let err = generate(
            &["MATCH (n) WITH n RETURN n".to_string()],
            &MicroGraph::fixture(),
            &fixture_schema(),
            &SynthConfig::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("WITH n"));
    }

    #[test]
    fn config_validation() {
        let bad = SynthConfig {
            p_syntax_error: 0.6,
            p_direction_error: 0.6,
            ..SynthConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
