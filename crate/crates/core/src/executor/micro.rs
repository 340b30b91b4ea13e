//! A deliberately small query engine over [`MicroGraph`].
//!
//! It has its own lexer and parser and shares nothing with `crate::syntax`, so that its
//! verdicts can serve as an independent check on the grammar filters. Text that fails the
//! engine's structural sanity checks is a syntax error. Text that looks sane but falls
//! outside the supported shape is a runtime error:
//!
//! ```text
//! MATCH node [rel node] [WHERE cond]
//! RETURN [DISTINCT] item {, item} [ORDER BY key [ASC|DESC] {, ...}] [LIMIT n]
//! ```
//!
//! where `item` is `var`, `var.prop` or `count(*)` with an optional `AS alias`, and `cond`
//! combines comparisons and `IS [NOT] NULL` tests with `AND`, `OR`, `NOT` and parentheses.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde_json::{json, Value};

use super::graph::MicroGraph;
use super::ExecutionOutcome;

// ---------------------------------------------------------------------------
// lexing

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Quoted(String),
    Str(String),
    Int(i64),
    Float(f64),
    Param(String),
    Sym(&'static str),
}

const SYMBOLS: &[&str] = &[
    "<>", "<=", ">=", "!=", "=~", "+=", "..", "(", ")", "[", "]", "{", "}", ",", ".", ":", "|",
    "-", "+", "*", "/", "%", "^", "=", "<", ">", ";",
];

fn lex(src: &str) -> Result<Vec<Tok>, String> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
        } else if src[i..].starts_with("//") {
            i = src[i..].find('\n').map_or(bytes.len(), |n| i + n);
        } else if src[i..].starts_with("/*") {
            let end = src[i + 2..].find("*/").ok_or("unterminated comment")?;
            i += end + 4;
        } else if c == b'\'' || c == b'"' {
            let (s, next) = lex_string(src, i)?;
            out.push(Tok::Str(s));
            i = next;
        } else if c == b'`' {
            let mut j = i + 1;
            let mut name = String::new();
            loop {
                match src[j..].find('`') {
                    None => return Err("unterminated backtick name".into()),
                    Some(n) => {
                        name.push_str(&src[j..j + n]);
                        j += n + 1;
                        if bytes.get(j) == Some(&b'`') {
                            name.push('`');
                            j += 1;
                        } else {
                            break;
                        }
                    }
                }
            }
            out.push(Tok::Quoted(name));
            i = j;
        } else if c.is_ascii_digit() {
            let mut j = i;
            while j < bytes.len() && bytes[j].is_ascii_digit() {
                j += 1;
            }
            let is_float = bytes.get(j) == Some(&b'.') && bytes.get(j + 1).is_some_and(u8::is_ascii_digit);
            if is_float {
                j += 1;
                while j < bytes.len() && bytes[j].is_ascii_digit() {
                    j += 1;
                }
                let v: f64 = src[i..j].parse().map_err(|_| "bad number")?;
                out.push(Tok::Float(v));
            } else {
                match src[i..j].parse::<i64>() {
                    Ok(v) => out.push(Tok::Int(v)),
                    Err(_) => out.push(Tok::Float(src[i..j].parse().map_err(|_| "bad number")?)),
                }
            }
            if bytes.get(j).is_some_and(|b| b.is_ascii_alphabetic() || *b == b'_') {
                return Err(format!("malformed number near '{}'", &src[i..=j]));
            }
            i = j;
        } else if c.is_ascii_alphabetic() || c == b'_' || c >= 0x80 {
            let j = word_end(src, i);
            out.push(Tok::Word(src[i..j].to_string()));
            i = j;
        } else if c == b'$' {
            let j = word_end(src, i + 1);
            if j == i + 1 {
                return Err("empty parameter name".into());
            }
            out.push(Tok::Param(src[i + 1..j].to_string()));
            i = j;
        } else if let Some(sym) = SYMBOLS.iter().find(|s| src[i..].starts_with(**s)) {
            out.push(Tok::Sym(sym));
            i += sym.len();
        } else {
            let ch = src[i..].chars().next().unwrap_or('?');
            return Err(format!("unexpected character '{ch}'"));
        }
    }
    Ok(out)
}

fn word_end(src: &str, start: usize) -> usize {
    src[start..]
        .char_indices()
        .find(|(_, ch)| !(ch.is_alphanumeric() || *ch == '_'))
        .map_or(src.len(), |(n, _)| start + n)
}

fn lex_string(src: &str, start: usize) -> Result<(String, usize), String> {
    let quote = src.as_bytes()[start] as char;
    let mut out = String::new();
    let mut chars = src[start + 1..].char_indices();
    while let Some((n, ch)) = chars.next() {
        match ch {
            c if c == quote => return Ok((out, start + 1 + n + 1)),
            '\\' => {
                let (_, esc) = chars.next().ok_or("unterminated string")?;
                match esc {
                    'n' => out.push('\n'),
                    't' => out.push('\t'),
                    'r' => out.push('\r'),
                    'u' => {
                        let mut code = String::new();
                        for _ in 0..4 {
                            code.push(chars.next().ok_or("unterminated string")?.1);
                        }
                        let v = u32::from_str_radix(&code, 16).map_err(|_| "bad \\u escape")?;
                        out.push(char::from_u32(v).unwrap_or('\u{fffd}'));
                    }
                    other => out.push(other),
                }
            }
            c => out.push(c),
        }
    }
    Err("unterminated string".into())
}

/// Words that act as keywords. A word directly after `.` or `:`, or directly before `:`,
/// is a name instead.
fn keyword_at(toks: &[Tok], i: usize) -> Option<String> {
    let Tok::Word(w) = &toks[i] else {
        return None;
    };
    let prev = i.checked_sub(1).map(|p| &toks[p]);
    if matches!(prev, Some(Tok::Sym(".")) | Some(Tok::Sym(":"))) {
        return None;
    }
    if matches!(toks.get(i + 1), Some(Tok::Sym(":"))) {
        return None;
    }
    Some(w.to_ascii_uppercase())
}

// ---------------------------------------------------------------------------
// structural sanity checks: failures here are syntax errors

const CLAUSES: &[&str] = &[
    "MATCH", "RETURN", "WITH", "WHERE", "CREATE", "MERGE", "DELETE", "SET", "REMOVE", "UNWIND",
    "CALL", "LIMIT", "SKIP", "UNION", "ORDER",
];
const STARTERS: &[&str] = &["MATCH", "OPTIONAL", "UNWIND", "WITH", "RETURN", "CREATE", "MERGE", "CALL"];
const DANGLING_WORDS: &[&str] = &[
    "MATCH", "RETURN", "WITH", "WHERE", "CREATE", "MERGE", "DELETE", "SET", "REMOVE", "UNWIND",
    "CALL", "LIMIT", "SKIP", "UNION", "ORDER", "BY", "AND", "OR", "XOR", "NOT", "AS", "DISTINCT",
    "OPTIONAL", "DETACH", "IN", "IS", "STARTS", "ENDS", "CONTAINS", "WHEN", "THEN", "ELSE", "CASE",
    "ON", "YIELD",
];
const BINARY: &[&str] = &["=", "<>", "!=", "<", ">", "<=", ">=", "+", "*", "/", "%", "^"];
const BINARY_WORDS: &[&str] = &["AND", "OR", "XOR"];

fn is_binary(toks: &[Tok], i: usize) -> bool {
    match &toks[i] {
        Tok::Sym(s) => BINARY.contains(s),
        Tok::Word(_) => keyword_at(toks, i).is_some_and(|k| BINARY_WORDS.contains(&k.as_str())),
        _ => false,
    }
}

fn sanity_check(toks: &[Tok]) -> Result<(), String> {
    if toks.is_empty() {
        return Err("empty query".into());
    }
    if !keyword_at(toks, 0).is_some_and(|k| STARTERS.contains(&k.as_str())) {
        return Err("query does not start with a clause".into());
    }
    let mut stack = Vec::new();
    for t in toks {
        if let Tok::Sym(s) = t {
            match *s {
                "(" | "[" | "{" => stack.push(*s),
                ")" | "]" | "}" => {
                    let open = match *s {
                        ")" => "(",
                        "]" => "[",
                        _ => "{",
                    };
                    if stack.pop() != Some(open) {
                        return Err(format!("unbalanced '{s}'"));
                    }
                }
                _ => {}
            }
        }
    }
    if let Some(open) = stack.pop() {
        return Err(format!("unclosed '{open}'"));
    }
    for i in 0..toks.len().saturating_sub(1) {
        let (a, b) = (keyword_at(toks, i), keyword_at(toks, i + 1));
        if let (Some(a), Some(b)) = (&a, &b) {
            if a == b && CLAUSES.contains(&a.as_str()) {
                return Err(format!("repeated {a}"));
            }
            let after_on = i > 0 && keyword_at(toks, i - 1).as_deref() == Some("ON");
            if CLAUSES.contains(&a.as_str())
                && a != "UNION"
                && !after_on
                && CLAUSES.contains(&b.as_str())
            {
                return Err(format!("{a} has no body"));
            }
        }
        if is_binary(toks, i) && is_binary(toks, i + 1) {
            return Err("two operators in a row".into());
        }
    }
    let last = toks.len() - 1;
    let dangling = match &toks[last] {
        Tok::Sym(s) => !matches!(*s, ")" | "]" | "}" | "*"),
        Tok::Word(_) => keyword_at(toks, last).is_some_and(|k| DANGLING_WORDS.contains(&k.as_str())),
        _ => false,
    };
    if dangling {
        return Err("query ends abruptly".into());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// the supported subset

#[derive(Debug, Clone, Copy, PartialEq)]
enum Dir {
    Out,
    In,
    Both,
}

#[derive(Debug, Clone)]
struct NodeSpec {
    var: Option<String>,
    labels: Vec<String>,
    props: Vec<(String, Value)>,
}

#[derive(Debug, Clone)]
struct RelSpec {
    var: Option<String>,
    types: Vec<String>,
    dir: Dir,
    props: Vec<(String, Value)>,
}

#[derive(Debug, Clone, PartialEq)]
enum Item {
    Var(String),
    Prop(String, String),
    CountStar,
}

#[derive(Debug, Clone)]
enum Operand {
    Prop(String, String),
    Var(String),
    Lit(Value),
}

#[derive(Debug, Clone, Copy)]
enum CmpOp {
    Eq,
    Ne,
    Lt,
    Gt,
    Le,
    Ge,
}

#[derive(Debug, Clone)]
enum Cond {
    And(Box<Cond>, Box<Cond>),
    Or(Box<Cond>, Box<Cond>),
    Not(Box<Cond>),
    Cmp(CmpOp, Operand, Operand),
    IsNull(Operand, bool),
}

#[derive(Debug, Clone)]
struct Plan {
    start: NodeSpec,
    hop: Option<(RelSpec, NodeSpec)>,
    filter: Option<Cond>,
    distinct: bool,
    items: Vec<(Item, Option<String>)>,
    order: Vec<(Item, bool)>,
    limit: Option<usize>,
}

struct P<'a> {
    toks: &'a [Tok],
    i: usize,
}

type R<T> = Result<T, String>;

fn unsupported<T>(what: impl std::fmt::Display) -> R<T> {
    Err(format!("unsupported construct: {what}"))
}

impl<'a> P<'a> {
    fn kw(&self, k: &str) -> bool {
        self.i < self.toks.len() && keyword_at(self.toks, self.i).as_deref() == Some(k)
    }

    fn eat_kw(&mut self, k: &str) -> bool {
        let hit = self.kw(k);
        if hit {
            self.i += 1;
        }
        hit
    }

    fn sym(&self, s: &str) -> bool {
        matches!(self.toks.get(self.i), Some(Tok::Sym(x)) if *x == s)
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        let hit = self.sym(s);
        if hit {
            self.i += 1;
        }
        hit
    }

    fn need_sym(&mut self, s: &str) -> R<()> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            self.fail(format!("expected '{s}'"))
        }
    }

    fn fail<T>(&self, what: impl std::fmt::Display) -> R<T> {
        match self.toks.get(self.i) {
            Some(t) => unsupported(format!("{what} near {}", describe(t))),
            None => unsupported(format!("{what} at end of query")),
        }
    }

    fn name(&mut self) -> R<String> {
        match self.toks.get(self.i) {
            Some(Tok::Word(w)) | Some(Tok::Quoted(w)) => {
                self.i += 1;
                Ok(w.clone())
            }
            _ => self.fail("expected a name"),
        }
    }

    /// A variable: a non-keyword word or a quoted name.
    fn var(&mut self) -> Option<String> {
        match self.toks.get(self.i) {
            Some(Tok::Quoted(w)) => {
                self.i += 1;
                Some(w.clone())
            }
            Some(Tok::Word(w)) if keyword_at(self.toks, self.i).is_none_or(|k| !is_reserved(&k)) => {
                self.i += 1;
                Some(w.clone())
            }
            _ => None,
        }
    }

    fn plan(&mut self) -> R<Plan> {
        if !self.eat_kw("MATCH") {
            return self.fail("query must start with MATCH");
        }
        let start = self.node()?;
        let hop = if self.sym("-") || self.sym("<") {
            let rel = self.rel()?;
            let end = self.node()?;
            Some((rel, end))
        } else {
            None
        };
        if self.sym("-") || self.sym("<") {
            return unsupported("multi-hop pattern");
        }
        if self.sym(",") {
            return unsupported("multiple patterns");
        }
        let filter = if self.eat_kw("WHERE") {
            Some(self.or()?)
        } else {
            None
        };
        if !self.eat_kw("RETURN") {
            return self.fail("expected RETURN");
        }
        let distinct = self.eat_kw("DISTINCT");
        let mut items = Vec::new();
        loop {
            let item = self.item()?;
            let alias = if self.eat_kw("AS") {
                Some(self.var().map_or_else(|| self.fail("expected alias"), Ok)?)
            } else {
                None
            };
            items.push((item, alias));
            if !self.eat_sym(",") {
                break;
            }
        }
        let mut order = Vec::new();
        if self.eat_kw("ORDER") {
            if !self.eat_kw("BY") {
                return self.fail("expected BY");
            }
            loop {
                let key = self.item()?;
                let desc = if self.eat_kw("DESC") || self.eat_kw("DESCENDING") {
                    true
                } else {
                    if !self.eat_kw("ASC") {
                        self.eat_kw("ASCENDING");
                    }
                    false
                };
                order.push((key, desc));
                if !self.eat_sym(",") {
                    break;
                }
            }
        }
        let limit = if self.eat_kw("LIMIT") {
            match self.toks.get(self.i) {
                Some(Tok::Int(n)) if *n >= 0 => {
                    self.i += 1;
                    Some(*n as usize)
                }
                _ => return self.fail("LIMIT needs a non-negative integer"),
            }
        } else {
            None
        };
        if self.i < self.toks.len() {
            return self.fail("unexpected trailing input");
        }
        Ok(Plan {
            start,
            hop,
            filter,
            distinct,
            items,
            order,
            limit,
        })
    }

    fn node(&mut self) -> R<NodeSpec> {
        self.need_sym("(")?;
        let var = self.var();
        let mut labels = Vec::new();
        while self.eat_sym(":") {
            labels.push(self.name()?);
        }
        let props = self.props()?;
        self.need_sym(")")?;
        Ok(NodeSpec { var, labels, props })
    }

    fn rel(&mut self) -> R<RelSpec> {
        let left = self.eat_sym("<");
        self.need_sym("-")?;
        let mut var = None;
        let mut types = Vec::new();
        let mut props = Vec::new();
        if self.eat_sym("[") {
            var = self.var();
            if self.eat_sym(":") {
                types.push(self.name()?);
                while self.eat_sym("|") {
                    self.eat_sym(":");
                    types.push(self.name()?);
                }
            }
            if self.sym("*") {
                return unsupported("variable-length relationship");
            }
            props = self.props()?;
            self.need_sym("]")?;
        }
        self.need_sym("-")?;
        let right = self.eat_sym(">");
        let dir = match (left, right) {
            (true, false) => Dir::In,
            (false, true) => Dir::Out,
            _ => Dir::Both,
        };
        Ok(RelSpec {
            var,
            types,
            dir,
            props,
        })
    }

    fn props(&mut self) -> R<Vec<(String, Value)>> {
        let mut out = Vec::new();
        if !self.eat_sym("{") {
            if matches!(self.toks.get(self.i), Some(Tok::Param(_))) {
                return unsupported("parameters");
            }
            return Ok(out);
        }
        if self.eat_sym("}") {
            return Ok(out);
        }
        loop {
            let key = self.name()?;
            self.need_sym(":")?;
            let value = self.literal()?;
            out.push((key, value));
            if self.eat_sym("}") {
                return Ok(out);
            }
            self.need_sym(",")?;
        }
    }

    fn literal(&mut self) -> R<Value> {
        let negative = self.eat_sym("-");
        let v = match self.toks.get(self.i) {
            Some(Tok::Int(n)) => json!(if negative { -n } else { *n }),
            Some(Tok::Float(f)) => json!(if negative { -f } else { *f }),
            Some(Tok::Str(s)) if !negative => json!(s),
            Some(Tok::Word(_)) if !negative => match keyword_at(self.toks, self.i).as_deref() {
                Some("TRUE") => json!(true),
                Some("FALSE") => json!(false),
                Some("NULL") => Value::Null,
                _ => return self.fail("expected a literal"),
            },
            Some(Tok::Param(_)) => return unsupported("parameters"),
            _ => return self.fail("expected a literal"),
        };
        self.i += 1;
        Ok(v)
    }

    fn item(&mut self) -> R<Item> {
        if self.kw("COUNT") && matches!(self.toks.get(self.i + 1), Some(Tok::Sym("("))) {
            self.i += 2;
            if !self.eat_sym("*") {
                return unsupported("count over an expression");
            }
            self.need_sym(")")?;
            return Ok(Item::CountStar);
        }
        let Some(v) = self.var() else {
            return self.fail("expected a variable");
        };
        if self.sym("(") {
            return unsupported(format!("function {v}"));
        }
        if self.eat_sym(".") {
            let key = self.name()?;
            if self.sym(".") || self.sym("[") {
                return unsupported("nested property access");
            }
            return Ok(Item::Prop(v, key));
        }
        Ok(Item::Var(v))
    }

    fn or(&mut self) -> R<Cond> {
        let mut lhs = self.and()?;
        while self.eat_kw("OR") {
            lhs = Cond::Or(Box::new(lhs), Box::new(self.and()?));
        }
        Ok(lhs)
    }

    fn and(&mut self) -> R<Cond> {
        let mut lhs = self.not()?;
        while self.eat_kw("AND") {
            lhs = Cond::And(Box::new(lhs), Box::new(self.not()?));
        }
        Ok(lhs)
    }

    fn not(&mut self) -> R<Cond> {
        if self.eat_kw("NOT") {
            return Ok(Cond::Not(Box::new(self.not()?)));
        }
        if self.eat_sym("(") {
            let c = self.or()?;
            self.need_sym(")")?;
            return Ok(c);
        }
        let lhs = self.operand()?;
        if self.eat_kw("IS") {
            let negated = self.eat_kw("NOT");
            if !self.eat_kw("NULL") {
                return self.fail("expected NULL");
            }
            return Ok(Cond::IsNull(lhs, negated));
        }
        let op = match self.toks.get(self.i) {
            Some(Tok::Sym("=")) => CmpOp::Eq,
            Some(Tok::Sym("<>")) => CmpOp::Ne,
            Some(Tok::Sym("<")) => CmpOp::Lt,
            Some(Tok::Sym(">")) => CmpOp::Gt,
            Some(Tok::Sym("<=")) => CmpOp::Le,
            Some(Tok::Sym(">=")) => CmpOp::Ge,
            _ => return self.fail("expected a comparison"),
        };
        self.i += 1;
        let rhs = self.operand()?;
        Ok(Cond::Cmp(op, lhs, rhs))
    }

    fn operand(&mut self) -> R<Operand> {
        if let Some(v) = self.var() {
            if self.sym("(") {
                return unsupported(format!("function {v}"));
            }
            if self.eat_sym(".") {
                return Ok(Operand::Prop(v, self.name()?));
            }
            return Ok(Operand::Var(v));
        }
        Ok(Operand::Lit(self.literal()?))
    }
}

fn is_reserved(kw: &str) -> bool {
    DANGLING_WORDS.contains(&kw) || matches!(kw, "TRUE" | "FALSE" | "NULL" | "ASC" | "DESC" | "ASCENDING" | "DESCENDING" | "END" | "ALL" | "XOR")
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Word(w) => format!("'{w}'"),
        Tok::Quoted(w) => format!("`{w}`"),
        Tok::Str(s) => format!("string '{s}'"),
        Tok::Int(n) => n.to_string(),
        Tok::Float(f) => f.to_string(),
        Tok::Param(p) => format!("${p}"),
        Tok::Sym(s) => format!("'{s}'"),
    }
}

// ---------------------------------------------------------------------------
// evaluation

#[derive(Debug, Clone, Copy, PartialEq)]
enum Bound {
    Node(usize),
    Edge(usize),
}

type Binding = HashMap<String, Bound>;

fn matches_props(props: &BTreeMap<String, Value>, wanted: &[(String, Value)]) -> bool {
    wanted
        .iter()
        .all(|(k, v)| equals(props.get(k).unwrap_or(&Value::Null), v) == Some(true))
}

fn node_matches(g: &MicroGraph, id: usize, spec: &NodeSpec) -> bool {
    let n = &g.nodes[id];
    spec.labels.iter().all(|l| n.labels.contains(l)) && matches_props(&n.properties, &spec.props)
}

fn bind(b: &mut Binding, var: &Option<String>, value: Bound) -> bool {
    match var {
        None => true,
        Some(v) => match b.get(v) {
            Some(existing) => *existing == value,
            None => {
                b.insert(v.clone(), value);
                true
            }
        },
    }
}

fn bindings(g: &MicroGraph, plan: &Plan) -> Vec<Binding> {
    let mut out = Vec::new();
    match &plan.hop {
        None => {
            for id in 0..g.nodes.len() {
                let mut b = Binding::new();
                if node_matches(g, id, &plan.start) && bind(&mut b, &plan.start.var, Bound::Node(id)) {
                    out.push(b);
                }
            }
        }
        Some((rel, end)) => {
            for (ei, e) in g.edges.iter().enumerate() {
                if !(rel.types.is_empty() || rel.types.contains(&e.rel_type)) {
                    continue;
                }
                if !matches_props(&e.properties, &rel.props) {
                    continue;
                }
                let mut orientations = Vec::new();
                if matches!(rel.dir, Dir::Out | Dir::Both) {
                    orientations.push((e.source, e.target));
                }
                if matches!(rel.dir, Dir::In | Dir::Both) && !(rel.dir == Dir::Both && e.source == e.target) {
                    orientations.push((e.target, e.source));
                }
                for (a, z) in orientations {
                    if !node_matches(g, a, &plan.start) || !node_matches(g, z, end) {
                        continue;
                    }
                    let mut b = Binding::new();
                    if bind(&mut b, &plan.start.var, Bound::Node(a))
                        && bind(&mut b, &rel.var, Bound::Edge(ei))
                        && bind(&mut b, &end.var, Bound::Node(z))
                    {
                        out.push(b);
                    }
                }
            }
        }
    }
    out
}

fn lookup(g: &MicroGraph, b: &Binding, var: &str) -> R<Value> {
    match b.get(var) {
        Some(Bound::Node(id)) => {
            let n = &g.nodes[*id];
            Ok(json!({"labels": n.labels, "properties": n.properties}))
        }
        Some(Bound::Edge(id)) => {
            let e = &g.edges[*id];
            Ok(json!({"type": e.rel_type, "properties": e.properties}))
        }
        None => Err(format!("variable `{var}` not defined")),
    }
}

fn property(g: &MicroGraph, b: &Binding, var: &str, key: &str) -> R<Value> {
    let props = match b.get(var) {
        Some(Bound::Node(id)) => &g.nodes[*id].properties,
        Some(Bound::Edge(id)) => &g.edges[*id].properties,
        None => return Err(format!("variable `{var}` not defined")),
    };
    Ok(props.get(key).cloned().unwrap_or(Value::Null))
}

fn operand_value(g: &MicroGraph, b: &Binding, o: &Operand) -> R<Value> {
    match o {
        Operand::Prop(v, k) => property(g, b, v, k),
        Operand::Var(v) => lookup(g, b, v),
        Operand::Lit(v) => Ok(v.clone()),
    }
}

fn equals(a: &Value, b: &Value) -> Option<bool> {
    match (a, b) {
        (Value::Null, _) | (_, Value::Null) => None,
        (Value::Number(x), Value::Number(y)) => Some(x.as_f64() == y.as_f64()),
        _ => Some(a == b),
    }
}

fn compare(a: &Value, b: &Value) -> Option<Ordering> {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => x.as_f64()?.partial_cmp(&y.as_f64()?),
        (Value::String(x), Value::String(y)) => Some(x.cmp(y)),
        (Value::Bool(x), Value::Bool(y)) => Some(x.cmp(y)),
        _ => None,
    }
}

/// Three-valued: `None` is null.
fn eval_cond(g: &MicroGraph, b: &Binding, c: &Cond) -> R<Option<bool>> {
    Ok(match c {
        Cond::And(l, r) => match (eval_cond(g, b, l)?, eval_cond(g, b, r)?) {
            (Some(false), _) | (_, Some(false)) => Some(false),
            (Some(true), Some(true)) => Some(true),
            _ => None,
        },
        Cond::Or(l, r) => match (eval_cond(g, b, l)?, eval_cond(g, b, r)?) {
            (Some(true), _) | (_, Some(true)) => Some(true),
            (Some(false), Some(false)) => Some(false),
            _ => None,
        },
        Cond::Not(x) => eval_cond(g, b, x)?.map(|v| !v),
        Cond::IsNull(o, negated) => Some(operand_value(g, b, o)?.is_null() != *negated),
        Cond::Cmp(op, l, r) => {
            let (l, r) = (operand_value(g, b, l)?, operand_value(g, b, r)?);
            match op {
                CmpOp::Eq => equals(&l, &r),
                CmpOp::Ne => equals(&l, &r).map(|v| !v),
                _ => {
                    if l.is_null() || r.is_null() {
                        None
                    } else {
                        compare(&l, &r).map(|o| match op {
                            CmpOp::Lt => o == Ordering::Less,
                            CmpOp::Gt => o == Ordering::Greater,
                            CmpOp::Le => o != Ordering::Greater,
                            _ => o != Ordering::Less,
                        })
                    }
                }
            }
        }
    })
}

fn item_value(g: &MicroGraph, b: &Binding, item: &Item) -> R<Value> {
    match item {
        Item::Var(v) => lookup(g, b, v),
        Item::Prop(v, k) => property(g, b, v, k),
        Item::CountStar => unreachable!("aggregates are handled separately"),
    }
}

/// Sort order for ORDER BY: numbers, then strings, then booleans, then anything else, then
/// nulls last.
fn sort_cmp(a: &Value, b: &Value) -> Ordering {
    fn rank(v: &Value) -> u8 {
        match v {
            Value::Number(_) => 0,
            Value::String(_) => 1,
            Value::Bool(_) => 2,
            Value::Null => 4,
            _ => 3,
        }
    }
    rank(a)
        .cmp(&rank(b))
        .then_with(|| compare(a, b).unwrap_or_else(|| a.to_string().cmp(&b.to_string())))
}

fn run(g: &MicroGraph, plan: &Plan) -> R<Vec<Vec<Value>>> {
    for (item, _) in &plan.items {
        if let Item::Var(v) | Item::Prop(v, _) = item {
            let declared = [plan.start.var.as_ref()]
                .into_iter()
                .chain(plan.hop.iter().flat_map(|(r, n)| [r.var.as_ref(), n.var.as_ref()]))
                .flatten()
                .any(|d| d == v);
            if !declared {
                return Err(format!("variable `{v}` not defined"));
            }
        }
    }
    let mut matched = Vec::new();
    for b in bindings(g, plan) {
        let keep = match &plan.filter {
            Some(c) => eval_cond(g, &b, c)? == Some(true),
            None => true,
        };
        if keep {
            matched.push(b);
        }
    }
    let aggregating = plan.items.iter().any(|(i, _)| *i == Item::CountStar);

    // each row carries its ORDER BY keys alongside the projected values
    let mut rows: Vec<(Vec<Value>, Vec<Value>)> = Vec::new();
    let column_of = |key: &Item| -> Option<usize> {
        plan.items.iter().position(|(item, alias)| {
            item == key || matches!((key, alias), (Item::Var(k), Some(a)) if k == a)
        })
    };
    if aggregating {
        let mut groups: BTreeMap<String, (Vec<Value>, usize)> = BTreeMap::new();
        for b in &matched {
            let mut key_vals = Vec::new();
            for (item, _) in &plan.items {
                if *item != Item::CountStar {
                    key_vals.push(item_value(g, b, item)?);
                }
            }
            let key = serde_json::to_string(&key_vals).unwrap_or_default();
            groups.entry(key).or_insert((key_vals, 0)).1 += 1;
        }
        if groups.is_empty() && plan.items.iter().all(|(i, _)| *i == Item::CountStar) {
            groups.insert(String::new(), (Vec::new(), 0));
        }
        for (_, (key_vals, count)) in groups {
            let mut vals = key_vals.into_iter();
            let row: Vec<Value> = plan
                .items
                .iter()
                .map(|(i, _)| match i {
                    Item::CountStar => json!(count),
                    _ => vals.next().unwrap_or(Value::Null),
                })
                .collect();
            let mut keys = Vec::new();
            for (k, _) in &plan.order {
                match column_of(k) {
                    Some(c) => keys.push(row[c].clone()),
                    None => return Err("ORDER BY expression must be returned when aggregating".into()),
                }
            }
            rows.push((keys, row));
        }
    } else {
        for b in &matched {
            let mut row = Vec::new();
            for (item, _) in &plan.items {
                row.push(item_value(g, b, item)?);
            }
            let mut keys = Vec::new();
            for (k, _) in &plan.order {
                match column_of(k) {
                    Some(c) => keys.push(row[c].clone()),
                    None if plan.distinct => {
                        return Err("ORDER BY expression must be returned with DISTINCT".into())
                    }
                    None => keys.push(item_value(g, b, k)?),
                }
            }
            rows.push((keys, row));
        }
    }
    let serialized = |r: &Vec<Value>| serde_json::to_string(r).unwrap_or_default();
    if plan.distinct {
        let mut seen = BTreeSet::new();
        rows.retain(|(_, r)| seen.insert(serialized(r)));
    }
    rows.sort_by(|(ka, ra), (kb, rb)| {
        for (i, (_, desc)) in plan.order.iter().enumerate() {
            let o = sort_cmp(&ka[i], &kb[i]);
            let o = if *desc { o.reverse() } else { o };
            if o != Ordering::Equal {
                return o;
            }
        }
        serialized(ra).cmp(&serialized(rb))
    });
    let mut out: Vec<Vec<Value>> = rows.into_iter().map(|(_, r)| r).collect();
    if let Some(n) = plan.limit {
        out.truncate(n);
    }
    Ok(out)
}

const WRITE_WORDS: &[&str] = &["CREATE", "MERGE", "SET", "DELETE", "DETACH", "REMOVE"];

/// Runs `query` against `graph`. Never panics on malformed input.
pub fn execute_micro(graph: &MicroGraph, query: &str) -> ExecutionOutcome {
    let text = query.trim().trim_end_matches(';');
    let toks = match lex(text) {
        Ok(t) => t,
        Err(e) => return ExecutionOutcome::syntax_error(e),
    };
    if let Err(e) = sanity_check(&toks) {
        return ExecutionOutcome::syntax_error(e);
    }
    if (0..toks.len()).any(|i| keyword_at(&toks, i).is_some_and(|k| WRITE_WORDS.contains(&k.as_str()))) {
        return ExecutionOutcome::runtime_error("read-only engine");
    }
    let plan = match (P { toks: &toks, i: 0 }).plan() {
        Ok(p) => p,
        Err(e) => return ExecutionOutcome::runtime_error(e),
    };
    match run(graph, &plan) {
        Ok(rows) => ExecutionOutcome::success(rows),
        Err(e) => ExecutionOutcome::runtime_error(e),
    }
}
