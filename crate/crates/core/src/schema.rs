//! Graph schema triples and the relationship-direction check.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::syntax::ast::{Clause, Direction, NodePattern, PatternPart, Query, RelationshipPattern};
use crate::syntax::lexer::{tokenize, CypherToken, TokenKind};
use crate::syntax::parse;
use crate::trace::{GrammarVariant, SchemaMatch, SchemaSource, TripleSpec};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchemaError {
    #[error("schema contains no relationship triples")]
    Empty,
    #[error("invalid schema triple: {0}")]
    InvalidTriple(String),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SchemaTriple {
    pub source_label: String,
    pub rel_type: String,
    pub target_label: String,
}

impl SchemaTriple {
    pub fn new(
        source_label: impl Into<String>,
        rel_type: impl Into<String>,
        target_label: impl Into<String>,
    ) -> Result<Self, SchemaError> {
        let triple = Self {
            source_label: source_label.into(),
            rel_type: rel_type.into(),
            target_label: target_label.into(),
        };
        if triple.source_label.is_empty() || triple.rel_type.is_empty() || triple.target_label.is_empty() {
            return Err(SchemaError::InvalidTriple(triple.to_string()));
        }
        Ok(triple)
    }
}

impl fmt::Display for SchemaTriple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "(:{})-[:{}]->(:{})",
            self.source_label, self.rel_type, self.target_label
        )
    }
}

type Endpoints = BTreeSet<(String, String)>;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GraphSchema {
    triples: BTreeSet<SchemaTriple>,
    rel_type_index: BTreeMap<String, Endpoints>,
}

impl GraphSchema {
    pub fn new(triples: impl IntoIterator<Item = SchemaTriple>) -> Self {
        let mut schema = Self::default();
        for t in triples {
            schema.insert(t);
        }
        schema
    }

    pub fn insert(&mut self, triple: SchemaTriple) {
        self.rel_type_index
            .entry(triple.rel_type.clone())
            .or_default()
            .insert((triple.source_label.clone(), triple.target_label.clone()));
        self.triples.insert(triple);
    }

    pub fn from_specs(specs: &[TripleSpec]) -> Result<Self, SchemaError> {
        let mut triples = Vec::with_capacity(specs.len());
        for s in specs {
            triples.push(SchemaTriple::new(&s.source, &s.rel_type, &s.target)?);
        }
        if triples.is_empty() {
            return Err(SchemaError::Empty);
        }
        Ok(Self::new(triples))
    }

    pub fn triples(&self) -> &BTreeSet<SchemaTriple> {
        &self.triples
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    /// `(source, target)` label pairs recorded for `rel_type`.
    pub fn endpoints(&self, rel_type: &str) -> Option<&Endpoints> {
        self.rel_type_index.get(rel_type)
    }

    pub fn rel_type_index(&self) -> &BTreeMap<String, Endpoints> {
        &self.rel_type_index
    }

    /// True when the index is exactly the projection of the triple set.
    pub fn index_is_consistent(&self) -> bool {
        GraphSchema::new(self.triples.iter().cloned()).rel_type_index == self.rel_type_index
    }

    pub fn to_text(&self) -> String {
        self.triples.iter().map(|t| format!("{t}\n")).collect()
    }
}

impl Serialize for GraphSchema {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.triples.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for GraphSchema {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let triples = BTreeSet::<SchemaTriple>::deserialize(deserializer)?;
        Ok(GraphSchema::new(triples))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedSchema {
    pub schema: GraphSchema,
    /// One entry per non-blank line that is not a triple.
    pub warnings: Vec<String>,
}

fn triple_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        let name = r"(`(?:[^`]|``)+`|[A-Za-z_][A-Za-z0-9_]*)";
        let pattern = format!(
            r"^\s*\(\s*:\s*{name}\s*\)\s*-\s*\[\s*:\s*{name}\s*\]\s*-\s*>\s*\(\s*:\s*{name}\s*\)\s*,?\s*$"
        );
        Regex::new(&pattern).expect("static schema pattern")
    })
}

fn unquote(name: &str) -> String {
    match name.strip_prefix('`').and_then(|n| n.strip_suffix('`')) {
        Some(inner) => inner.replace("``", "`"),
        None => name.to_string(),
    }
}

/// Reads one `(:Source)-[:TYPE]->(:Target)` triple per line.
pub fn parse_schema(schema_text: &str) -> Result<ParsedSchema, SchemaError> {
    let mut schema = GraphSchema::default();
    let mut warnings = Vec::new();
    for (i, line) in schema_text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match triple_line().captures(line) {
            Some(c) => schema.insert(SchemaTriple::new(
                unquote(&c[1]),
                unquote(&c[2]),
                unquote(&c[3]),
            )?),
            None => warnings.push(format!("line {}: not a schema triple: {}", i + 1, line.trim())),
        }
    }
    if schema.is_empty() {
        return Err(SchemaError::Empty);
    }
    Ok(ParsedSchema { schema, warnings })
}

pub fn schema_from_source(source: &SchemaSource) -> Result<ParsedSchema, SchemaError> {
    match source {
        SchemaSource::Text(text) => parse_schema(text),
        SchemaSource::Triples(specs) => Ok(ParsedSchema {
            schema: GraphSchema::from_specs(specs)?,
            warnings: Vec::new(),
        }),
    }
}

/// One relationship occurrence, oriented source to target when `directed`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RelUsage {
    pub source_labels: BTreeSet<String>,
    pub rel_types: BTreeSet<String>,
    pub target_labels: BTreeSet<String>,
    pub directed: bool,
}

impl RelUsage {
    fn from_hop(left: &[String], types: &[String], direction: Direction, right: &[String]) -> Self {
        let set = |xs: &[String]| xs.iter().cloned().collect::<BTreeSet<_>>();
        let (source, target) = match direction {
            Direction::Left => (right, left),
            Direction::Right | Direction::Undirected => (left, right),
        };
        RelUsage {
            source_labels: set(source),
            rel_types: set(types),
            target_labels: set(target),
            directed: direction != Direction::Undirected,
        }
    }
}

impl fmt::Display for RelUsage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let labels = |s: &BTreeSet<String>| s.iter().map(|l| format!(":{l}")).collect::<String>();
        let types = self.rel_types.iter().cloned().collect::<Vec<_>>().join("|");
        let types = if types.is_empty() {
            String::new()
        } else {
            format!(":{types}")
        };
        let arrow = if self.directed { "->" } else { "-" };
        write!(
            f,
            "({})-[{}]{}({})",
            labels(&self.source_labels),
            types,
            arrow,
            labels(&self.target_labels)
        )
    }
}

/// Relationship usages of a parsed query, in written order.
pub fn extract_usages(query: &Query) -> Vec<RelUsage> {
    let mut usages = Vec::new();
    let parts = std::iter::once(&query.first)
        .chain(query.unions.iter().map(|u| &u.query))
        .flat_map(|q| q.clauses.iter());
    for clause in parts {
        let patterns: &[PatternPart] = match clause {
            Clause::Match { pattern, .. } | Clause::Create(pattern) => pattern,
            Clause::Merge { pattern, .. } => std::slice::from_ref(pattern),
            _ => continue,
        };
        for part in patterns {
            for (l, r, n) in part.element.hops() {
                usages.push(hop_usage(l, r, n));
            }
        }
    }
    usages
}

fn hop_usage(left: &NodePattern, rel: &RelationshipPattern, right: &NodePattern) -> RelUsage {
    RelUsage::from_hop(&left.labels, &rel.types, rel.direction, &right.labels)
}

/// Best-effort usage extraction straight from the token stream, for text that was not
/// (or could not be) parsed. Recognises `(..)-[..]->(..)`, `(..)<-[..]-(..)` and
/// undirected hops, including the bracket-less `-->` forms. Unlexable text yields nothing.
pub fn scan_usages(text: &str) -> Vec<RelUsage> {
    let Ok(tokens) = tokenize(text) else {
        return Vec::new();
    };
    let mut usages = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let Some((mut left, mut end)) = scan_node(&tokens, i) else {
            i += 1;
            continue;
        };
        let mut chained = false;
        while let Some((types, direction, rel_end)) = scan_rel(&tokens, end + 1) {
            let Some((right, node_end)) = scan_node(&tokens, rel_end + 1) else {
                break;
            };
            usages.push(RelUsage::from_hop(&left, &types, direction, &right));
            left = right;
            end = node_end;
            chained = true;
        }
        i = if chained { end } else { i + 1 };
    }
    usages
}

fn sym(tokens: &[CypherToken], i: usize, s: &str) -> bool {
    tokens.get(i).is_some_and(|t| t.is_symbol(s))
}

/// `( [var] (:Label)* ... )` starting at `i`; returns labels and the index of `)`.
fn scan_node(tokens: &[CypherToken], i: usize) -> Option<(Vec<String>, usize)> {
    if !sym(tokens, i, "(") {
        return None;
    }
    let mut j = i + 1;
    if tokens.get(j).is_some_and(|t| t.kind == TokenKind::Identifier) {
        j += 1;
    }
    let mut labels = Vec::new();
    while sym(tokens, j, ":") {
        labels.push(tokens.get(j + 1)?.symbolic_name()?);
        j += 2;
    }
    if sym(tokens, j, "{") {
        let mut depth = 0usize;
        loop {
            let t = tokens.get(j)?;
            if t.is_symbol("{") {
                depth += 1;
            } else if t.is_symbol("}") {
                depth -= 1;
                if depth == 0 {
                    break;
                }
            }
            j += 1;
        }
        j += 1;
    } else if tokens.get(j).is_some_and(|t| t.kind == TokenKind::Parameter) {
        j += 1;
    }
    if !sym(tokens, j, ")") {
        return None;
    }
    Some((labels, j))
}

/// `[<] - [ '[' ... ']' ] - [>]` starting at `i`; returns types, direction and last index.
fn scan_rel(tokens: &[CypherToken], i: usize) -> Option<(Vec<String>, Direction, usize)> {
    let mut j = i;
    let left = sym(tokens, j, "<");
    if left {
        j += 1;
    }
    if !sym(tokens, j, "-") {
        return None;
    }
    j += 1;
    let mut types = Vec::new();
    if sym(tokens, j, "[") {
        j += 1;
        if tokens.get(j).is_some_and(|t| t.kind == TokenKind::Identifier) {
            j += 1;
        }
        if sym(tokens, j, ":") {
            j += 1;
            types.push(tokens.get(j)?.symbolic_name()?);
            j += 1;
            while sym(tokens, j, "|") {
                j += 1;
                if sym(tokens, j, ":") {
                    j += 1;
                }
                types.push(tokens.get(j)?.symbolic_name()?);
                j += 1;
            }
        }
        let mut depth = 1usize;
        while depth > 0 {
            let t = tokens.get(j)?;
            if t.is_symbol("[") {
                depth += 1;
            } else if t.is_symbol("]") {
                depth -= 1;
            }
            j += 1;
        }
    }
    if !sym(tokens, j, "-") {
        return None;
    }
    let right = sym(tokens, j + 1, ">");
    if right {
        j += 1;
    }
    let direction = match (left, right) {
        (true, false) => Direction::Left,
        (false, true) => Direction::Right,
        _ => Direction::Undirected,
    };
    Some((types, direction, j))
}

/// Usages for a candidate under the configured grammar variant: the parse tree when the
/// formal grammar is in use and the text parses, the token scan otherwise.
pub fn usages_for(text: &str, variant: GrammarVariant) -> Vec<RelUsage> {
    if variant == GrammarVariant::Formal {
        if let Ok(query) = parse(text) {
            return extract_usages(&query);
        }
    }
    scan_usages(text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaCheck {
    pub mode: SchemaMatch,
    /// Reject relationship types the schema does not mention.
    pub strict: bool,
}

impl Default for SchemaCheck {
    fn default() -> Self {
        Self {
            mode: SchemaMatch::LabelAware,
            strict: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    OppositeDirection,
    UnknownType,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaViolation {
    pub kind: ViolationKind,
    pub rel_type: String,
    pub usage: RelUsage,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaVerdict {
    pub accepted: bool,
    pub violations: Vec<SchemaViolation>,
}

fn fits(labels: &BTreeSet<String>, label: &str) -> bool {
    labels.is_empty() || labels.contains(label)
}

fn fits_any<'a>(labels: &BTreeSet<String>, mut roles: impl Iterator<Item = &'a String>) -> bool {
    labels.is_empty() || roles.any(|r| labels.contains(r))
}

/// `(forward fits, mirrored fits)` for one type.
fn compatibility(
    usage: &RelUsage,
    endpoints: &Endpoints,
    mode: SchemaMatch,
) -> (bool, bool) {
    let (src, tgt) = (&usage.source_labels, &usage.target_labels);
    match mode {
        SchemaMatch::LabelAware => {
            let forward = endpoints.iter().any(|(s, t)| fits(src, s) && fits(tgt, t));
            let mirrored = endpoints.iter().any(|(s, t)| fits(tgt, s) && fits(src, t));
            (forward, mirrored)
        }
        SchemaMatch::TypeOnly => {
            let sources = || endpoints.iter().map(|(s, _)| s);
            let targets = || endpoints.iter().map(|(_, t)| t);
            let forward = fits_any(src, sources()) && fits_any(tgt, targets());
            let mirrored = fits_any(tgt, sources()) && fits_any(src, targets());
            (forward, mirrored)
        }
    }
}

/// A usage is rejected when its type is in the schema, no triple fits it as written, and
/// the reversed usage would fit. Undirected usages always pass.
pub fn schema_validate(usages: &[RelUsage], schema: &GraphSchema, check: SchemaCheck) -> SchemaVerdict {
    let mut violations = Vec::new();
    for usage in usages.iter().filter(|u| u.directed) {
        for rel_type in &usage.rel_types {
            let Some(endpoints) = schema.endpoints(rel_type) else {
                if check.strict {
                    violations.push(SchemaViolation {
                        kind: ViolationKind::UnknownType,
                        rel_type: rel_type.clone(),
                        usage: usage.clone(),
                        message: format!("relationship type {rel_type} is not in the schema"),
                    });
                }
                continue;
            };
            let (forward, mirrored) = compatibility(usage, endpoints, check.mode);
            if !forward && mirrored {
                violations.push(SchemaViolation {
                    kind: ViolationKind::OppositeDirection,
                    rel_type: rel_type.clone(),
                    usage: usage.clone(),
                    message: format!("{usage} uses {rel_type} in the opposite direction"),
                });
            }
        }
    }
    SchemaVerdict {
        accepted: violations.is_empty(),
        violations,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemaRejection<T> {
    pub candidate: T,
    pub violations: Vec<SchemaViolation>,
}

/// Keeps candidates whose every relationship usage agrees with the schema.
pub fn schema_filter<T: AsRef<str>>(
    candidates: Vec<T>,
    schema: &GraphSchema,
    variant: GrammarVariant,
    check: SchemaCheck,
) -> (Vec<T>, Vec<SchemaRejection<T>>) {
    let mut kept = Vec::new();
    let mut rejected = Vec::new();
    for candidate in candidates {
        let verdict = schema_validate(&usages_for(candidate.as_ref(), variant), schema, check);
        if verdict.accepted {
            kept.push(candidate);
        } else {
            rejected.push(SchemaRejection {
                candidate,
                violations: verdict.violations,
            });
        }
    }
    (kept, rejected)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(xs: &[&str]) -> BTreeSet<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    fn usage(src: &[&str], ty: &str, tgt: &[&str]) -> RelUsage {
        RelUsage {
            source_labels: labels(src),
            rel_types: labels(&[ty]),
            target_labels: labels(tgt),
            directed: true,
        }
    }

    fn movie_schema() -> GraphSchema {
        parse_schema("(:Person)-[:ACTED_IN]->(:Movie)").unwrap().schema
    }

    #[test]
    fn parses_single_triple() {
        let s = movie_schema();
        assert_eq!(s.len(), 1);
        let t = s.triples().iter().next().unwrap();
        assert_eq!((t.source_label.as_str(), t.rel_type.as_str(), t.target_label.as_str()), ("Person", "ACTED_IN", "Movie"));
        assert!(s.index_is_consistent());
    }

    #[test]
    fn duplicate_lines_collapse() {
        let p = parse_schema("(:A)-[:R]->(:B)\n(:A)-[:R]->(:B)\n").unwrap();
        assert_eq!(p.schema.len(), 1);
        assert!(p.warnings.is_empty());
    }

    #[test]
    fn junk_line_warns() {
        let p = parse_schema("(:A)-[:R]->(:B)\ngarbage").unwrap();
        assert_eq!(p.schema.len(), 1);
        assert_eq!(p.warnings.len(), 1);
        assert!(p.warnings[0].contains("line 2"));
    }

    #[test]
    fn whitespace_and_backticks() {
        let p = parse_schema("  ( :`Film Person` ) - [ : `ACTED IN` ] -> ( : Movie )  ").unwrap();
        let t = p.schema.triples().iter().next().unwrap();
        assert_eq!(t.source_label, "Film Person");
        assert_eq!(t.rel_type, "ACTED IN");
        assert_eq!(t.target_label, "Movie");
    }

    #[test]
    fn empty_schema_is_error() {
        assert_eq!(parse_schema("nothing here"), Err(SchemaError::Empty));
        assert_eq!(parse_schema(""), Err(SchemaError::Empty));
    }

    #[test]
    fn extraction_canonicalises() {
        let q = parse("MATCH (m:Movie)<-[:ACTED_IN]-(p:Person) RETURN p").unwrap();
        assert_eq!(extract_usages(&q), vec![usage(&["Person"], "ACTED_IN", &["Movie"])]);
        let q = parse("MATCH (a)-[:R]-(b) RETURN a").unwrap();
        let u = &extract_usages(&q)[0];
        assert!(!u.directed);
        assert!(u.source_labels.is_empty() && u.target_labels.is_empty());
        let q = parse("MATCH (a)-[:R|S]->(b) RETURN a").unwrap();
        assert_eq!(extract_usages(&q)[0].rel_types.len(), 2);
    }

    #[test]
    fn opposite_direction_rejected() {
        let s = movie_schema();
        let v = schema_validate(&[usage(&["Movie"], "ACTED_IN", &["Person"])], &s, SchemaCheck::default());
        assert!(!v.accepted);
        assert_eq!(v.violations[0].kind, ViolationKind::OppositeDirection);
        assert!(schema_validate(&[usage(&["Person"], "ACTED_IN", &["Movie"])], &s, SchemaCheck::default()).accepted);
        assert!(schema_validate(&[usage(&[], "ACTED_IN", &["Movie"])], &s, SchemaCheck::default()).accepted);
    }

    #[test]
    fn unknown_types_pass_unless_strict() {
        let s = movie_schema();
        let u = [usage(&["Person"], "LIKES", &["Movie"])];
        assert!(schema_validate(&u, &s, SchemaCheck::default()).accepted);
        let strict = SchemaCheck {
            strict: true,
            ..SchemaCheck::default()
        };
        let v = schema_validate(&u, &s, strict);
        assert_eq!(v.violations[0].kind, ViolationKind::UnknownType);
    }

    #[test]
    fn type_only_decouples_endpoints() {
        let s = parse_schema("(:A)-[:R]->(:B)\n(:C)-[:R]->(:D)").unwrap().schema;
        // A is an R source and D an R target, though no single triple says A->D
        let u = [usage(&["A"], "R", &["D"])];
        assert!(schema_validate(&u, &s, SchemaCheck::default()).accepted);
        let type_only = SchemaCheck {
            mode: SchemaMatch::TypeOnly,
            strict: false,
        };
        assert!(schema_validate(&u, &s, type_only).accepted);
        let flipped = [usage(&["D"], "R", &["A"])];
        assert!(!schema_validate(&flipped, &s, type_only).accepted);
        // label-aware: neither D->A nor its mirror A->D matches a single triple
        assert!(schema_validate(&flipped, &s, SchemaCheck::default()).accepted);
    }

    #[test]
    fn scan_agrees_with_ast_on_simple_shapes() {
        for q in [
            "MATCH (p:Person)-[:ACTED_IN]->(m:Movie) RETURN p",
            "MATCH (m:Movie)<-[r:ACTED_IN]-(p:Person {name: 'x'}) RETURN p",
            "MATCH (a:A)-[:R]-(b)-->(c:C)<--(d) RETURN a",
            "MATCH (a)-[:R|:S*1..2]->(b:B) WHERE a.x = 1 RETURN count(*)",
        ] {
            let ast = extract_usages(&parse(q).unwrap());
            assert_eq!(scan_usages(q), ast, "{q}");
        }
    }

    #[test]
    fn scan_ignores_function_calls_and_arithmetic() {
        assert!(scan_usages("MATCH (n) RETURN count(n) - 1").is_empty());
        assert!(scan_usages("MATCH (n:Person RETURN n").is_empty());
    }

    #[test]
    fn filter_drops_flipped_candidate() {
        let s = movie_schema();
        let cands = vec![
            "MATCH (p:Person)-[:ACTED_IN]->(m:Movie) RETURN m",
            "MATCH (p:Person)<-[:ACTED_IN]-(m:Movie) RETURN m",
            "MATCH (m:Movie)<-[:ACTED_IN]-(p:Person) RETURN m",
        ];
        let (kept, rejected) = schema_filter(cands, &s, GrammarVariant::Formal, SchemaCheck::default());
        assert_eq!(kept.len(), 2);
        assert_eq!(rejected[0].candidate, "MATCH (p:Person)<-[:ACTED_IN]-(m:Movie) RETURN m");
    }
}
