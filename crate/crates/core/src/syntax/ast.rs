//! Parse tree for the supported Cypher subset.
//!
//! `Display` renders a tree back to query text that parses to the same tree. Binary and
//! unary expressions are always parenthesised, so the printed form is not pretty but it is
//! unambiguous.

use std::fmt::{self, Display, Formatter, Write};

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub first: SingleQuery,
    pub unions: Vec<UnionPart>,
}

impl Query {
    /// Every pattern in MATCH, CREATE and MERGE written right to left.
    pub fn mirrored(&self) -> Query {
        let mirror_single = |q: &SingleQuery| SingleQuery {
            clauses: q.clauses.iter().map(Clause::mirrored).collect(),
        };
        Query {
            first: mirror_single(&self.first),
            unions: self
                .unions
                .iter()
                .map(|u| UnionPart {
                    all: u.all,
                    query: mirror_single(&u.query),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnionPart {
    pub all: bool,
    pub query: SingleQuery,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SingleQuery {
    pub clauses: Vec<Clause>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Clause {
    Match {
        optional: bool,
        pattern: Vec<PatternPart>,
        where_clause: Option<Expr>,
    },
    Unwind {
        expr: Expr,
        alias: String,
    },
    With {
        projection: Projection,
        where_clause: Option<Expr>,
    },
    Return(Projection),
    Create(Vec<PatternPart>),
    Merge {
        pattern: PatternPart,
        actions: Vec<MergeAction>,
    },
    Set(Vec<SetItem>),
    Delete {
        detach: bool,
        exprs: Vec<Expr>,
    },
    Remove(Vec<RemoveItem>),
    Call(CallClause),
}

impl Clause {
    pub fn is_updating(&self) -> bool {
        matches!(
            self,
            Clause::Create(_)
                | Clause::Merge { .. }
                | Clause::Set(_)
                | Clause::Delete { .. }
                | Clause::Remove(_)
        )
    }

    fn mirrored(&self) -> Clause {
        let mirror_part = |p: &PatternPart| PatternPart {
            variable: p.variable.clone(),
            element: p.element.mirrored(),
        };
        match self {
            Clause::Match {
                optional,
                pattern,
                where_clause,
            } => Clause::Match {
                optional: *optional,
                pattern: pattern.iter().map(mirror_part).collect(),
                where_clause: where_clause.clone(),
            },
            Clause::Create(pattern) => Clause::Create(pattern.iter().map(mirror_part).collect()),
            Clause::Merge { pattern, actions } => Clause::Merge {
                pattern: mirror_part(pattern),
                actions: actions.clone(),
            },
            other => other.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeAction {
    pub on_create: bool,
    pub items: Vec<SetItem>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SetItem {
    Property {
        variable: String,
        keys: Vec<String>,
        value: Expr,
    },
    Replace {
        variable: String,
        value: Expr,
    },
    Append {
        variable: String,
        value: Expr,
    },
    Labels {
        variable: String,
        labels: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum RemoveItem {
    Property { variable: String, keys: Vec<String> },
    Labels { variable: String, labels: Vec<String> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CallClause {
    pub procedure: Vec<String>,
    pub args: Option<Vec<Expr>>,
    pub yields: Option<YieldSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct YieldSpec {
    /// Empty means `YIELD *`.
    pub items: Vec<(String, Option<String>)>,
    pub where_clause: Option<Expr>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub distinct: bool,
    pub star: bool,
    pub items: Vec<ProjectionItem>,
    pub order_by: Vec<SortItem>,
    pub skip: Option<Expr>,
    pub limit: Option<Expr>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionItem {
    pub expr: Expr,
    pub alias: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SortOrder {
    Asc,
    Desc,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SortItem {
    pub expr: Expr,
    pub order: Option<SortOrder>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatternPart {
    pub variable: Option<String>,
    pub element: PatternElement,
}

/// `start (rel node)*`
#[derive(Debug, Clone, PartialEq)]
pub struct PatternElement {
    pub start: NodePattern,
    pub chain: Vec<(RelationshipPattern, NodePattern)>,
}

impl PatternElement {
    /// The same path written right to left: `(a)-[r]->(b)` becomes `(b)<-[r]-(a)`.
    pub fn mirrored(&self) -> PatternElement {
        let mut nodes = vec![self.start.clone()];
        let mut rels = Vec::new();
        for (rel, node) in &self.chain {
            rels.push(rel.clone());
            nodes.push(node.clone());
        }
        nodes.reverse();
        rels.reverse();
        let mut nodes = nodes.into_iter();
        let start = nodes.next().expect("pattern has a start node");
        let chain = rels
            .into_iter()
            .map(|mut r| {
                r.direction = r.direction.reversed();
                r
            })
            .zip(nodes)
            .collect();
        PatternElement { start, chain }
    }

    /// `(left, rel, right)` for every hop, in written order.
    pub fn hops(&self) -> impl Iterator<Item = (&NodePattern, &RelationshipPattern, &NodePattern)> {
        let lefts = std::iter::once(&self.start).chain(self.chain.iter().map(|(_, n)| n));
        lefts.zip(self.chain.iter()).map(|(l, (r, n))| (l, r, n))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodePattern {
    pub variable: Option<String>,
    pub labels: Vec<String>,
    pub properties: Option<Expr>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    /// `<-[]-`
    Left,
    /// `-[]->`
    Right,
    /// `-[]-` (and `<-[]->`)
    Undirected,
}

impl Direction {
    pub fn reversed(self) -> Direction {
        match self {
            Direction::Left => Direction::Right,
            Direction::Right => Direction::Left,
            Direction::Undirected => Direction::Undirected,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarLength {
    pub min: Option<u64>,
    pub max: Option<u64>,
    /// `*2` fixes both bounds without a `..`.
    pub exact: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelationshipPattern {
    pub variable: Option<String>,
    pub types: Vec<String>,
    pub direction: Direction,
    pub length: Option<VarLength>,
    pub properties: Option<Expr>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    /// Source text, e.g. `42` or `0x1F`.
    Integer(String),
    Float(String),
    /// Source text including the quotes.
    String(String),
    Boolean(bool),
    Null,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Not,
    Plus,
    Minus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Or,
    Xor,
    And,
    Eq,
    Ne,
    Lt,
    Gt,
    Le,
    Ge,
    Add,
    Sub,
    Mul,
    Div,
    Mod,
    Pow,
    StartsWith,
    EndsWith,
    Contains,
    In,
}

impl BinaryOp {
    pub fn as_str(self) -> &'static str {
        match self {
            BinaryOp::Or => "OR",
            BinaryOp::Xor => "XOR",
            BinaryOp::And => "AND",
            BinaryOp::Eq => "=",
            BinaryOp::Ne => "<>",
            BinaryOp::Lt => "<",
            BinaryOp::Gt => ">",
            BinaryOp::Le => "<=",
            BinaryOp::Ge => ">=",
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
            BinaryOp::Mod => "%",
            BinaryOp::Pow => "^",
            BinaryOp::StartsWith => "STARTS WITH",
            BinaryOp::EndsWith => "ENDS WITH",
            BinaryOp::Contains => "CONTAINS",
            BinaryOp::In => "IN",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FunctionArgs {
    Star,
    List(Vec<Expr>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Literal(Literal),
    Parameter(String),
    Variable(String),
    Property(Box<Expr>, String),
    Index(Box<Expr>, Box<Expr>),
    FunctionCall {
        /// Dotted namespace parts, e.g. `["apoc", "text", "join"]`.
        name: Vec<String>,
        distinct: bool,
        args: FunctionArgs,
    },
    List(Vec<Expr>),
    Map(Vec<(String, Expr)>),
    Case {
        subject: Option<Box<Expr>>,
        alternatives: Vec<(Expr, Expr)>,
        default: Option<Box<Expr>>,
    },
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
    IsNull {
        expr: Box<Expr>,
        negated: bool,
    },
}

/// Renders a name, backtick-quoting it unless it is a plain identifier.
pub fn quote_name(name: &str) -> String {
    let plain = name.chars().next().is_some_and(|c| c == '_' || c.is_alphabetic())
        && name.chars().all(|c| c == '_' || c.is_alphanumeric());
    if plain && !super::lexer::is_keyword(name) {
        name.to_string()
    } else {
        format!("`{}`", name.replace('`', "``"))
    }
}

fn join<T: Display>(f: &mut Formatter<'_>, items: &[T], sep: &str) -> fmt::Result {
    for (i, item) in items.iter().enumerate() {
        if i > 0 {
            f.write_str(sep)?;
        }
        write!(f, "{item}")?;
    }
    Ok(())
}

impl Display for Query {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.first)?;
        for u in &self.unions {
            f.write_str(if u.all { " UNION ALL " } else { " UNION " })?;
            write!(f, "{}", u.query)?;
        }
        Ok(())
    }
}

impl Display for SingleQuery {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        join(f, &self.clauses, " ")
    }
}

impl Display for Clause {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        match self {
            Clause::Match {
                optional,
                pattern,
                where_clause,
            } => {
                if *optional {
                    f.write_str("OPTIONAL ")?;
                }
                f.write_str("MATCH ")?;
                join(f, pattern, ", ")?;
                if let Some(w) = where_clause {
                    write!(f, " WHERE {w}")?;
                }
                Ok(())
            }
            Clause::Unwind { expr, alias } => write!(f, "UNWIND {expr} AS {}", quote_name(alias)),
            Clause::With {
                projection,
                where_clause,
            } => {
                write!(f, "WITH {projection}")?;
                if let Some(w) = where_clause {
                    write!(f, " WHERE {w}")?;
                }
                Ok(())
            }
            Clause::Return(p) => write!(f, "RETURN {p}"),
            Clause::Create(p) => {
                f.write_str("CREATE ")?;
                join(f, p, ", ")
            }
            Clause::Merge { pattern, actions } => {
                write!(f, "MERGE {pattern}")?;
                for a in actions {
                    f.write_str(if a.on_create { " ON CREATE SET " } else { " ON MATCH SET " })?;
                    join(f, &a.items, ", ")?;
                }
                Ok(())
            }
            Clause::Set(items) => {
                f.write_str("SET ")?;
                join(f, items, ", ")
            }
            Clause::Delete { detach, exprs } => {
                if *detach {
                    f.write_str("DETACH ")?;
                }
                f.write_str("DELETE ")?;
                join(f, exprs, ", ")
            }
            Clause::Remove(items) => {
                f.write_str("REMOVE ")?;
                join(f, items, ", ")
            }
            Clause::Call(c) => write!(f, "{c}"),
        }
    }
}

fn write_keys(f: &mut Formatter<'_>, keys: &[String]) -> fmt::Result {
    for k in keys {
        write!(f, ".{}", quote_name(k))?;
    }
    Ok(())
}

fn write_labels(f: &mut Formatter<'_>, labels: &[String]) -> fmt::Result {
    for l in labels {
        write!(f, ":{}", quote_name(l))?;
    }
    Ok(())
}

impl Display for SetItem {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        match self {
            SetItem::Property {
                variable,
                keys,
                value,
            } => {
                f.write_str(&quote_name(variable))?;
                write_keys(f, keys)?;
                write!(f, " = {value}")
            }
            SetItem::Replace { variable, value } => write!(f, "{} = {value}", quote_name(variable)),
            SetItem::Append { variable, value } => write!(f, "{} += {value}", quote_name(variable)),
            SetItem::Labels { variable, labels } => {
                f.write_str(&quote_name(variable))?;
                write_labels(f, labels)
            }
        }
    }
}

impl Display for RemoveItem {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        match self {
            RemoveItem::Property { variable, keys } => {
                f.write_str(&quote_name(variable))?;
                write_keys(f, keys)
            }
            RemoveItem::Labels { variable, labels } => {
                f.write_str(&quote_name(variable))?;
                write_labels(f, labels)
            }
        }
    }
}

impl Display for CallClause {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        f.write_str("CALL ")?;
        let parts: Vec<String> = self.procedure.iter().map(|p| quote_name(p)).collect();
        f.write_str(&parts.join("."))?;
        if let Some(args) = &self.args {
            f.write_char('(')?;
            join(f, args, ", ")?;
            f.write_char(')')?;
        }
        if let Some(y) = &self.yields {
            f.write_str(" YIELD ")?;
            if y.items.is_empty() {
                f.write_char('*')?;
            }
            for (i, (name, alias)) in y.items.iter().enumerate() {
                if i > 0 {
                    f.write_str(", ")?;
                }
                f.write_str(&quote_name(name))?;
                if let Some(a) = alias {
                    write!(f, " AS {}", quote_name(a))?;
                }
            }
            if let Some(w) = &y.where_clause {
                write!(f, " WHERE {w}")?;
            }
        }
        Ok(())
    }
}

impl Display for Projection {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        if self.distinct {
            f.write_str("DISTINCT ")?;
        }
        if self.star {
            f.write_char('*')?;
            if !self.items.is_empty() {
                f.write_str(", ")?;
            }
        }
        join(f, &self.items, ", ")?;
        if !self.order_by.is_empty() {
            f.write_str(" ORDER BY ")?;
            join(f, &self.order_by, ", ")?;
        }
        if let Some(s) = &self.skip {
            write!(f, " SKIP {s}")?;
        }
        if let Some(l) = &self.limit {
            write!(f, " LIMIT {l}")?;
        }
        Ok(())
    }
}

impl Display for ProjectionItem {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.expr)?;
        if let Some(a) = &self.alias {
            write!(f, " AS {}", quote_name(a))?;
        }
        Ok(())
    }
}

impl Display for SortItem {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.expr)?;
        match self.order {
            Some(SortOrder::Asc) => f.write_str(" ASC"),
            Some(SortOrder::Desc) => f.write_str(" DESC"),
            None => Ok(()),
        }
    }
}

impl Display for PatternPart {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        if let Some(v) = &self.variable {
            write!(f, "{} = ", quote_name(v))?;
        }
        write!(f, "{}", self.element)
    }
}

impl Display for PatternElement {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.start)?;
        for (rel, node) in &self.chain {
            write!(f, "{rel}{node}")?;
        }
        Ok(())
    }
}

impl Display for NodePattern {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        f.write_char('(')?;
        if let Some(v) = &self.variable {
            f.write_str(&quote_name(v))?;
        }
        write_labels(f, &self.labels)?;
        if let Some(p) = &self.properties {
            write!(f, " {p}")?;
        }
        f.write_char(')')
    }
}

impl Display for RelationshipPattern {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        f.write_str(if self.direction == Direction::Left { "<-[" } else { "-[" })?;
        if let Some(v) = &self.variable {
            f.write_str(&quote_name(v))?;
        }
        for (i, t) in self.types.iter().enumerate() {
            f.write_str(if i == 0 { ":" } else { "|" })?;
            f.write_str(&quote_name(t))?;
        }
        if let Some(len) = &self.length {
            f.write_char('*')?;
            if len.exact {
                if let Some(n) = len.min {
                    write!(f, "{n}")?;
                }
            } else {
                if let Some(n) = len.min {
                    write!(f, "{n}")?;
                }
                f.write_str("..")?;
                if let Some(n) = len.max {
                    write!(f, "{n}")?;
                }
            }
        }
        if let Some(p) = &self.properties {
            write!(f, " {p}")?;
        }
        f.write_str(if self.direction == Direction::Right { "]->" } else { "]-" })
    }
}

impl Display for Literal {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Integer(t) | Literal::Float(t) | Literal::String(t) => f.write_str(t),
            Literal::Boolean(true) => f.write_str("true"),
            Literal::Boolean(false) => f.write_str("false"),
            Literal::Null => f.write_str("null"),
        }
    }
}

impl Display for Expr {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Literal(l) => write!(f, "{l}"),
            Expr::Parameter(p) => write!(f, "${}", quote_name(p)),
            Expr::Variable(v) => f.write_str(&quote_name(v)),
            Expr::Property(e, k) => write!(f, "{e}.{}", quote_name(k)),
            Expr::Index(e, i) => write!(f, "{e}[{i}]"),
            Expr::FunctionCall {
                name,
                distinct,
                args,
            } => {
                let parts: Vec<String> = name.iter().map(|p| quote_name(p)).collect();
                write!(f, "{}(", parts.join("."))?;
                if *distinct {
                    f.write_str("DISTINCT ")?;
                }
                match args {
                    FunctionArgs::Star => f.write_char('*')?,
                    FunctionArgs::List(a) => join(f, a, ", ")?,
                }
                f.write_char(')')
            }
            Expr::List(items) => {
                f.write_char('[')?;
                join(f, items, ", ")?;
                f.write_char(']')
            }
            Expr::Map(entries) => {
                f.write_char('{')?;
                for (i, (k, v)) in entries.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{}: {v}", quote_name(k))?;
                }
                f.write_char('}')
            }
            Expr::Case {
                subject,
                alternatives,
                default,
            } => {
                f.write_str("CASE")?;
                if let Some(s) = subject {
                    write!(f, " {s}")?;
                }
                for (w, t) in alternatives {
                    write!(f, " WHEN {w} THEN {t}")?;
                }
                if let Some(d) = default {
                    write!(f, " ELSE {d}")?;
                }
                f.write_str(" END")
            }
            Expr::Unary(op, e) => match op {
                UnaryOp::Not => write!(f, "(NOT {e})"),
                UnaryOp::Plus => write!(f, "(+{e})"),
                UnaryOp::Minus => write!(f, "(-{e})"),
            },
            Expr::Binary(op, l, r) => write!(f, "({l} {} {r})", op.as_str()),
            Expr::IsNull { expr, negated } => {
                write!(f, "({expr} IS {}NULL)", if *negated { "NOT " } else { "" })
            }
        }
    }
}
