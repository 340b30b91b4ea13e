//! Recursive-descent parser for the supported Cypher subset (see `docs/cypher-subset.ebnf`).
//!
//! Parsing stops at the first error. Constructs outside the subset (`CALL { }`, `FOREACH`,
//! `LOAD CSV`, `EXISTS { }`, comprehensions, quantified paths) are rejected.

use super::ast::*;
use super::lexer::{end_position, tokenize, unquote_name, CypherToken, Position, TokenKind};
use super::Diagnostic;

/// Bound on expression and list nesting so hostile input cannot exhaust the stack.
pub const MAX_NESTING: usize = 96;

const CLAUSE_STARTS: &[&str] = &[
    "MATCH",
    "OPTIONAL MATCH",
    "UNWIND",
    "WITH",
    "RETURN",
    "CREATE",
    "MERGE",
    "SET",
    "DELETE",
    "DETACH DELETE",
    "REMOVE",
    "CALL",
];

pub fn parse(text: &str) -> Result<Query, Diagnostic> {
    let tokens = tokenize(text).map_err(|e| Diagnostic::new(e.position, e.message))?;
    let mut parser = Parser {
        tokens: &tokens,
        pos: 0,
        depth: 0,
        eof: end_position(text),
    };
    parser.query()
}

/// Like [`parse`] but accepts arbitrary bytes; invalid UTF-8 is a lexical error.
pub fn parse_bytes(bytes: &[u8]) -> Result<Query, Diagnostic> {
    match std::str::from_utf8(bytes) {
        Ok(text) => parse(text),
        Err(e) => Err(super::utf8_diagnostic(bytes, e)),
    }
}

type PResult<T> = Result<T, Diagnostic>;

struct Parser<'t> {
    tokens: &'t [CypherToken],
    pos: usize,
    depth: usize,
    eof: Position,
}

impl<'t> Parser<'t> {
    fn peek(&self) -> Option<&'t CypherToken> {
        self.tokens.get(self.pos)
    }

    fn peek_at(&self, n: usize) -> Option<&'t CypherToken> {
        self.tokens.get(self.pos + n)
    }

    fn at_kw(&self, kw: &str) -> bool {
        self.peek().is_some_and(|t| t.is_keyword(kw))
    }

    fn at_sym(&self, sym: &str) -> bool {
        self.peek().is_some_and(|t| t.is_symbol(sym))
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        let hit = self.at_kw(kw);
        if hit {
            self.pos += 1;
        }
        hit
    }

    fn eat_sym(&mut self, sym: &str) -> bool {
        let hit = self.at_sym(sym);
        if hit {
            self.pos += 1;
        }
        hit
    }

    fn bump(&mut self) -> Option<&'t CypherToken> {
        let t = self.tokens.get(self.pos);
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn here(&self) -> Position {
        self.peek().map_or(self.eof, |t| t.position)
    }

    fn found(&self) -> String {
        match self.peek() {
            Some(t) => format!("'{}'", t.text),
            None => "end of input".into(),
        }
    }

    fn error(&self, expected: &[&str], context: &str) -> Diagnostic {
        let what = match expected {
            [one] => one.to_string(),
            many => format!("one of {}", many.join(", ")),
        };
        let ctx = if context.is_empty() {
            String::new()
        } else {
            format!(" {context}")
        };
        Diagnostic {
            position: self.here(),
            message: format!("expected {what}{ctx}, found {}", self.found()),
            expected: expected.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn unsupported(&self, what: &str) -> Diagnostic {
        Diagnostic::new(self.here(), format!("{what} is not supported"))
    }

    fn expect_sym(&mut self, sym: &str, context: &str) -> PResult<()> {
        if self.eat_sym(sym) {
            Ok(())
        } else {
            Err(self.error(&[&format!("'{sym}'")], context))
        }
    }

    fn expect_kw(&mut self, kw: &str, context: &str) -> PResult<()> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            Err(self.error(&[kw], context))
        }
    }

    fn enter(&mut self) -> PResult<()> {
        self.depth += 1;
        if self.depth > MAX_NESTING {
            return Err(Diagnostic::new(self.here(), "nesting too deep"));
        }
        Ok(())
    }

    fn leave(&mut self) {
        self.depth -= 1;
    }

    // -- names ---------------------------------------------------------------

    fn variable(&mut self, context: &str) -> PResult<String> {
        match self.peek() {
            Some(t) if t.kind == TokenKind::Identifier => {
                self.pos += 1;
                Ok(unquote_name(&t.text))
            }
            _ => Err(self.error(&["variable"], context)),
        }
    }

    fn at_variable(&self) -> bool {
        self.peek().is_some_and(|t| t.kind == TokenKind::Identifier)
    }

    /// Labels, types, property keys and map keys may be keywords.
    fn symbolic_name(&mut self, what: &str, context: &str) -> PResult<String> {
        match self.peek().and_then(|t| t.symbolic_name()) {
            Some(name) => {
                self.pos += 1;
                Ok(name)
            }
            None => Err(self.error(&[what], context)),
        }
    }

    // -- query structure -----------------------------------------------------

    fn query(&mut self) -> PResult<Query> {
        let first = self.single_query()?;
        let mut unions = Vec::new();
        while self.eat_kw("UNION") {
            let all = self.eat_kw("ALL");
            let query = self.single_query()?;
            unions.push(UnionPart { all, query });
        }
        if self.peek().is_some() {
            return Err(self.error(&["UNION", "end of input"], ""));
        }
        Ok(Query { first, unions })
    }

    fn single_query(&mut self) -> PResult<SingleQuery> {
        let mut clauses: Vec<Clause> = Vec::new();
        loop {
            match self.clause()? {
                Some(clause) => {
                    let is_return = matches!(clause, Clause::Return(_));
                    clauses.push(clause);
                    if is_return {
                        break;
                    }
                }
                None => {
                    let terminal = clauses.last().is_some_and(Clause::is_updating);
                    if terminal {
                        break;
                    }
                    let context = if clauses.is_empty() {
                        "at start of query"
                    } else {
                        "(a query must end with RETURN or an updating clause)"
                    };
                    return Err(self.error(CLAUSE_STARTS, context));
                }
            }
        }
        Ok(SingleQuery { clauses })
    }

    fn clause(&mut self) -> PResult<Option<Clause>> {
        let Some(tok) = self.peek() else {
            return Ok(None);
        };
        if tok.kind == TokenKind::Identifier {
            let upper = tok.text.to_ascii_uppercase();
            if upper == "FOREACH" {
                return Err(self.unsupported("FOREACH"));
            }
            if upper == "LOAD" {
                return Err(self.unsupported("LOAD CSV"));
            }
            return Ok(None);
        }
        if tok.kind != TokenKind::Keyword {
            return Ok(None);
        }
        let clause = match tok.text.to_ascii_uppercase().as_str() {
            "MATCH" => {
                self.pos += 1;
                self.match_clause(false)?
            }
            "OPTIONAL" => {
                self.pos += 1;
                self.expect_kw("MATCH", "after OPTIONAL")?;
                self.match_clause(true)?
            }
            "UNWIND" => {
                self.pos += 1;
                let expr = self.expr()?;
                self.expect_kw("AS", "in UNWIND")?;
                let alias = self.variable("after AS")?;
                Clause::Unwind { expr, alias }
            }
            "WITH" => {
                self.pos += 1;
                let projection = self.projection("WITH")?;
                let where_clause = self.opt_where()?;
                Clause::With {
                    projection,
                    where_clause,
                }
            }
            "RETURN" => {
                self.pos += 1;
                Clause::Return(self.projection("RETURN")?)
            }
            "CREATE" => {
                self.pos += 1;
                Clause::Create(self.pattern("after CREATE")?)
            }
            "MERGE" => {
                self.pos += 1;
                self.merge_clause()?
            }
            "SET" => {
                self.pos += 1;
                Clause::Set(self.set_items()?)
            }
            "DETACH" => {
                self.pos += 1;
                self.expect_kw("DELETE", "after DETACH")?;
                Clause::Delete {
                    detach: true,
                    exprs: self.expr_list("expression", "after DELETE")?,
                }
            }
            "DELETE" => {
                self.pos += 1;
                Clause::Delete {
                    detach: false,
                    exprs: self.expr_list("expression", "after DELETE")?,
                }
            }
            "REMOVE" => {
                self.pos += 1;
                Clause::Remove(self.remove_items()?)
            }
            "CALL" => {
                self.pos += 1;
                self.call_clause()?
            }
            _ => return Ok(None),
        };
        Ok(Some(clause))
    }

    fn match_clause(&mut self, optional: bool) -> PResult<Clause> {
        let pattern = self.pattern("after MATCH")?;
        let where_clause = self.opt_where()?;
        Ok(Clause::Match {
            optional,
            pattern,
            where_clause,
        })
    }

    fn opt_where(&mut self) -> PResult<Option<Expr>> {
        if self.eat_kw("WHERE") {
            if self.peek().is_none() {
                return Err(self.error(&["predicate"], "after WHERE"));
            }
            Ok(Some(self.expr()?))
        } else {
            Ok(None)
        }
    }

    fn merge_clause(&mut self) -> PResult<Clause> {
        let pattern = self.pattern_part("after MERGE")?;
        let mut actions = Vec::new();
        while self.eat_kw("ON") {
            let on_create = if self.eat_kw("CREATE") {
                true
            } else if self.eat_kw("MATCH") {
                false
            } else {
                return Err(self.error(&["CREATE", "MATCH"], "after ON"));
            };
            self.expect_kw("SET", "in MERGE action")?;
            actions.push(MergeAction {
                on_create,
                items: self.set_items()?,
            });
        }
        Ok(Clause::Merge { pattern, actions })
    }

    fn set_items(&mut self) -> PResult<Vec<SetItem>> {
        let mut items = vec![self.set_item()?];
        while self.eat_sym(",") {
            items.push(self.set_item()?);
        }
        Ok(items)
    }

    fn set_item(&mut self) -> PResult<SetItem> {
        let variable = self.variable("in SET item")?;
        if self.at_sym(".") {
            let keys = self.property_keys()?;
            self.expect_sym("=", "in SET item")?;
            let value = self.expr()?;
            Ok(SetItem::Property {
                variable,
                keys,
                value,
            })
        } else if self.eat_sym("=") {
            Ok(SetItem::Replace {
                variable,
                value: self.expr()?,
            })
        } else if self.eat_sym("+=") {
            Ok(SetItem::Append {
                variable,
                value: self.expr()?,
            })
        } else if self.at_sym(":") {
            Ok(SetItem::Labels {
                variable,
                labels: self.labels()?,
            })
        } else {
            Err(self.error(&["'.'", "'='", "'+='", "':'"], "in SET item"))
        }
    }

    fn remove_items(&mut self) -> PResult<Vec<RemoveItem>> {
        let mut items = Vec::new();
        loop {
            let variable = self.variable("in REMOVE item")?;
            if self.at_sym(".") {
                items.push(RemoveItem::Property {
                    variable,
                    keys: self.property_keys()?,
                });
            } else if self.at_sym(":") {
                items.push(RemoveItem::Labels {
                    variable,
                    labels: self.labels()?,
                });
            } else {
                return Err(self.error(&["'.'", "':'"], "in REMOVE item"));
            }
            if !self.eat_sym(",") {
                return Ok(items);
            }
        }
    }

    fn property_keys(&mut self) -> PResult<Vec<String>> {
        let mut keys = Vec::new();
        while self.eat_sym(".") {
            keys.push(self.symbolic_name("property key", "after '.'")?);
        }
        Ok(keys)
    }

    fn labels(&mut self) -> PResult<Vec<String>> {
        let mut labels = Vec::new();
        while self.eat_sym(":") {
            labels.push(self.symbolic_name("label", "after ':'")?);
        }
        Ok(labels)
    }

    fn call_clause(&mut self) -> PResult<Clause> {
        if self.at_sym("{") {
            return Err(self.unsupported("CALL { } subquery"));
        }
        let mut procedure = vec![self.symbolic_name("procedure name", "after CALL")?];
        while self.eat_sym(".") {
            procedure.push(self.symbolic_name("procedure name", "after '.'")?);
        }
        let args = if self.eat_sym("(") {
            let args = if self.at_sym(")") {
                Vec::new()
            } else {
                self.expr_list("argument", "in procedure call")?
            };
            self.expect_sym(")", "to close procedure arguments")?;
            Some(args)
        } else {
            None
        };
        let yields = if self.eat_kw("YIELD") {
            let mut items = Vec::new();
            if !self.eat_sym("*") {
                loop {
                    let name = self.symbolic_name("yield field", "after YIELD")?;
                    let alias = if self.eat_kw("AS") {
                        Some(self.variable("after AS")?)
                    } else {
                        None
                    };
                    items.push((name, alias));
                    if !self.eat_sym(",") {
                        break;
                    }
                }
            }
            let where_clause = self.opt_where()?;
            Some(YieldSpec {
                items,
                where_clause,
            })
        } else {
            None
        };
        Ok(Clause::Call(CallClause {
            procedure,
            args,
            yields,
        }))
    }

    fn projection(&mut self, clause: &str) -> PResult<Projection> {
        let distinct = self.eat_kw("DISTINCT");
        let star = self.eat_sym("*");
        let mut items = Vec::new();
        if !star || self.eat_sym(",") {
            if self.peek().is_none() || self.at_projection_end() {
                let what = if clause == "RETURN" {
                    "return item"
                } else {
                    "projection item"
                };
                return Err(self.error(&[what], &format!("after {clause}")));
            }
            loop {
                let expr = self.expr()?;
                let alias = if self.eat_kw("AS") {
                    Some(self.variable("after AS")?)
                } else {
                    None
                };
                items.push(ProjectionItem { expr, alias });
                if !self.eat_sym(",") {
                    break;
                }
            }
        }
        let mut order_by = Vec::new();
        if self.eat_kw("ORDER") {
            self.expect_kw("BY", "after ORDER")?;
            loop {
                let expr = self.expr()?;
                let order = if self.eat_kw("ASC") || self.eat_kw("ASCENDING") {
                    Some(SortOrder::Asc)
                } else if self.eat_kw("DESC") || self.eat_kw("DESCENDING") {
                    Some(SortOrder::Desc)
                } else {
                    None
                };
                order_by.push(SortItem { expr, order });
                if !self.eat_sym(",") {
                    break;
                }
            }
        }
        let skip = if self.eat_kw("SKIP") {
            Some(self.expr()?)
        } else {
            None
        };
        let limit = if self.eat_kw("LIMIT") {
            Some(self.expr()?)
        } else {
            None
        };
        Ok(Projection {
            distinct,
            star,
            items,
            order_by,
            skip,
            limit,
        })
    }

    fn at_projection_end(&self) -> bool {
        ["ORDER", "SKIP", "LIMIT", "UNION", "WHERE", "RETURN", "MATCH", "WITH"]
            .iter()
            .any(|kw| self.at_kw(kw))
    }

    fn expr_list(&mut self, what: &str, context: &str) -> PResult<Vec<Expr>> {
        if self.peek().is_none() {
            return Err(self.error(&[what], context));
        }
        let mut exprs = vec![self.expr()?];
        while self.eat_sym(",") {
            exprs.push(self.expr()?);
        }
        Ok(exprs)
    }

    // -- patterns ------------------------------------------------------------

    fn pattern(&mut self, context: &str) -> PResult<Vec<PatternPart>> {
        let mut parts = vec![self.pattern_part(context)?];
        while self.eat_sym(",") {
            parts.push(self.pattern_part("after ','")?);
        }
        Ok(parts)
    }

    fn pattern_part(&mut self, context: &str) -> PResult<PatternPart> {
        let variable = if self.at_variable() && self.peek_at(1).is_some_and(|t| t.is_symbol("=")) {
            let v = self.variable(context)?;
            self.pos += 1;
            Some(v)
        } else {
            None
        };
        if variable.is_some() && self.at_variable() && self.peek_at(1).is_some_and(|t| t.is_symbol("(")) {
            return Err(self.unsupported("path function in pattern"));
        }
        let start = self.node_pattern(context)?;
        let mut chain = Vec::new();
        while self.at_sym("-") || self.at_sym("<") {
            let rel = self.relationship_pattern()?;
            let node = self.node_pattern("after relationship")?;
            chain.push((rel, node));
        }
        Ok(PatternPart {
            variable,
            element: PatternElement { start, chain },
        })
    }

    fn node_pattern(&mut self, context: &str) -> PResult<NodePattern> {
        if !self.eat_sym("(") {
            return Err(self.error(&["node pattern '('"], context));
        }
        if self.at_sym("(") {
            return Err(self.unsupported("parenthesized path pattern"));
        }
        let variable = if self.at_variable() {
            Some(self.variable("in node pattern")?)
        } else {
            None
        };
        let labels = self.labels()?;
        let properties = self.opt_properties()?;
        self.expect_sym(")", "to close node pattern")?;
        Ok(NodePattern {
            variable,
            labels,
            properties,
        })
    }

    fn opt_properties(&mut self) -> PResult<Option<Expr>> {
        if self.at_sym("{") {
            self.bump();
            Ok(Some(self.map_literal()?))
        } else if self.peek().is_some_and(|t| t.kind == TokenKind::Parameter) {
            let t = self.bump().expect("peeked");
            Ok(Some(Expr::Parameter(param_name(&t.text))))
        } else {
            Ok(None)
        }
    }

    fn relationship_pattern(&mut self) -> PResult<RelationshipPattern> {
        let left = self.eat_sym("<");
        self.expect_sym("-", "in relationship pattern")?;
        let mut variable = None;
        let mut types = Vec::new();
        let mut length = None;
        let mut properties = None;
        if self.eat_sym("[") {
            if self.at_variable() {
                variable = Some(self.variable("in relationship pattern")?);
            }
            if self.eat_sym(":") {
                types.push(self.symbolic_name("relationship type", "after ':'")?);
                while self.eat_sym("|") {
                    self.eat_sym(":");
                    types.push(self.symbolic_name("relationship type", "after '|'")?);
                }
            }
            if self.eat_sym("*") {
                length = Some(self.var_length()?);
            }
            properties = self.opt_properties()?;
            self.expect_sym("]", "to close relationship pattern")?;
        }
        self.expect_sym("-", "in relationship pattern")?;
        let right = self.eat_sym(">");
        let direction = match (left, right) {
            (true, false) => Direction::Left,
            (false, true) => Direction::Right,
            _ => Direction::Undirected,
        };
        Ok(RelationshipPattern {
            variable,
            types,
            direction,
            length,
            properties,
        })
    }

    fn var_length(&mut self) -> PResult<VarLength> {
        let min = self.opt_u64()?;
        if self.eat_sym("..") {
            let max = self.opt_u64()?;
            Ok(VarLength {
                min,
                max,
                exact: false,
            })
        } else {
            Ok(VarLength {
                min,
                max: min,
                exact: min.is_some(),
            })
        }
    }

    fn opt_u64(&mut self) -> PResult<Option<u64>> {
        match self.peek() {
            Some(t) if t.kind == TokenKind::Integer => {
                let value = parse_int(&t.text)
                    .ok_or_else(|| Diagnostic::new(t.position, "integer out of range"))?;
                self.pos += 1;
                Ok(Some(value))
            }
            Some(t) if t.kind == TokenKind::Float => {
                Err(self.error(&["integer bound"], "in variable-length relationship"))
            }
            _ => Ok(None),
        }
    }

    // -- expressions ---------------------------------------------------------

    fn expr(&mut self) -> PResult<Expr> {
        self.enter()?;
        let e = self.or_expr();
        self.leave();
        e
    }

    fn binary_level(
        &mut self,
        ops: &[(&str, BinaryOp)],
        next: fn(&mut Self) -> PResult<Expr>,
    ) -> PResult<Expr> {
        let mut lhs = next(self)?;
        'outer: loop {
            for (tok, op) in ops {
                let hit = if tok.chars().all(|c| c.is_ascii_alphabetic()) {
                    self.eat_kw(tok)
                } else {
                    self.eat_sym(tok)
                };
                if hit {
                    let rhs = next(self)?;
                    lhs = Expr::Binary(*op, Box::new(lhs), Box::new(rhs));
                    continue 'outer;
                }
            }
            return Ok(lhs);
        }
    }

    fn or_expr(&mut self) -> PResult<Expr> {
        self.binary_level(&[("OR", BinaryOp::Or)], Self::xor_expr)
    }

    fn xor_expr(&mut self) -> PResult<Expr> {
        self.binary_level(&[("XOR", BinaryOp::Xor)], Self::and_expr)
    }

    fn and_expr(&mut self) -> PResult<Expr> {
        self.binary_level(&[("AND", BinaryOp::And)], Self::not_expr)
    }

    fn not_expr(&mut self) -> PResult<Expr> {
        let mut nots = 0;
        while self.eat_kw("NOT") {
            nots += 1;
        }
        let mut e = self.comparison()?;
        for _ in 0..nots {
            e = Expr::Unary(UnaryOp::Not, Box::new(e));
        }
        Ok(e)
    }

    fn comparison(&mut self) -> PResult<Expr> {
        if self.at_sym("=~") {
            return Err(self.unsupported("regular expression match '=~'"));
        }
        let e = self.binary_level(
            &[
                ("=", BinaryOp::Eq),
                ("<>", BinaryOp::Ne),
                ("<=", BinaryOp::Le),
                (">=", BinaryOp::Ge),
                ("<", BinaryOp::Lt),
                (">", BinaryOp::Gt),
            ],
            Self::additive,
        )?;
        if self.at_sym("=~") {
            return Err(self.unsupported("regular expression match '=~'"));
        }
        Ok(e)
    }

    fn additive(&mut self) -> PResult<Expr> {
        self.binary_level(&[("+", BinaryOp::Add), ("-", BinaryOp::Sub)], Self::multiplicative)
    }

    fn multiplicative(&mut self) -> PResult<Expr> {
        self.binary_level(
            &[("*", BinaryOp::Mul), ("/", BinaryOp::Div), ("%", BinaryOp::Mod)],
            Self::power,
        )
    }

    fn power(&mut self) -> PResult<Expr> {
        self.binary_level(&[("^", BinaryOp::Pow)], Self::unary)
    }

    fn unary(&mut self) -> PResult<Expr> {
        let mut ops = Vec::new();
        loop {
            if self.eat_sym("-") {
                ops.push(UnaryOp::Minus);
            } else if self.eat_sym("+") {
                ops.push(UnaryOp::Plus);
            } else {
                break;
            }
        }
        let mut e = self.postfix()?;
        for op in ops.into_iter().rev() {
            e = Expr::Unary(op, Box::new(e));
        }
        Ok(e)
    }

    fn postfix(&mut self) -> PResult<Expr> {
        let mut e = self.accessor()?;
        loop {
            let op = if self.at_kw("STARTS") {
                self.pos += 1;
                self.expect_kw("WITH", "after STARTS")?;
                BinaryOp::StartsWith
            } else if self.at_kw("ENDS") {
                self.pos += 1;
                self.expect_kw("WITH", "after ENDS")?;
                BinaryOp::EndsWith
            } else if self.eat_kw("CONTAINS") {
                BinaryOp::Contains
            } else if self.eat_kw("IN") {
                BinaryOp::In
            } else if self.eat_kw("IS") {
                let negated = self.eat_kw("NOT");
                self.expect_kw("NULL", if negated { "after IS NOT" } else { "after IS" })?;
                e = Expr::IsNull {
                    expr: Box::new(e),
                    negated,
                };
                continue;
            } else {
                return Ok(e);
            };
            let rhs = self.accessor()?;
            e = Expr::Binary(op, Box::new(e), Box::new(rhs));
        }
    }

    fn accessor(&mut self) -> PResult<Expr> {
        let mut e = self.atom()?;
        loop {
            if self.eat_sym(".") {
                let key = self.symbolic_name("property key", "after '.'")?;
                e = Expr::Property(Box::new(e), key);
            } else if self.eat_sym("[") {
                let index = self.expr()?;
                if self.at_sym("..") {
                    return Err(self.unsupported("list slicing"));
                }
                self.expect_sym("]", "to close index")?;
                e = Expr::Index(Box::new(e), Box::new(index));
            } else if self.at_sym(":") {
                return Err(self.unsupported("label predicate in expression"));
            } else {
                return Ok(e);
            }
        }
    }

    fn atom(&mut self) -> PResult<Expr> {
        const ATOMS: &[&str] = &[
            "literal",
            "parameter",
            "variable",
            "function call",
            "list",
            "map",
            "'('",
            "CASE",
        ];
        let Some(tok) = self.peek() else {
            return Err(self.error(ATOMS, ""));
        };
        match tok.kind {
            TokenKind::Integer => {
                self.pos += 1;
                Ok(Expr::Literal(Literal::Integer(tok.text.clone())))
            }
            TokenKind::Float => {
                self.pos += 1;
                Ok(Expr::Literal(Literal::Float(tok.text.clone())))
            }
            TokenKind::String => {
                self.pos += 1;
                Ok(Expr::Literal(Literal::String(tok.text.clone())))
            }
            TokenKind::Parameter => {
                self.pos += 1;
                Ok(Expr::Parameter(param_name(&tok.text)))
            }
            TokenKind::Keyword => {
                let upper = tok.text.to_ascii_uppercase();
                match upper.as_str() {
                    "TRUE" | "FALSE" => {
                        self.pos += 1;
                        Ok(Expr::Literal(Literal::Boolean(upper == "TRUE")))
                    }
                    "NULL" => {
                        self.pos += 1;
                        Ok(Expr::Literal(Literal::Null))
                    }
                    "CASE" => {
                        self.pos += 1;
                        self.case_expr()
                    }
                    _ => Err(self.error(ATOMS, "")),
                }
            }
            TokenKind::Identifier => self.identifier_atom(),
            TokenKind::Symbol => match tok.text.as_str() {
                "(" => {
                    self.pos += 1;
                    let e = self.expr()?;
                    self.expect_sym(")", "to close parenthesized expression")?;
                    Ok(e)
                }
                "[" => {
                    self.pos += 1;
                    self.list_literal()
                }
                "{" => {
                    self.pos += 1;
                    self.map_literal()
                }
                _ => Err(self.error(ATOMS, "")),
            },
        }
    }

    fn identifier_atom(&mut self) -> PResult<Expr> {
        let first = self.peek().expect("caller peeked");
        if first.text.eq_ignore_ascii_case("exists") && self.peek_at(1).is_some_and(|t| t.is_symbol("{")) {
            return Err(self.unsupported("EXISTS { } subquery"));
        }
        // a dotted name followed by '(' is a function call, otherwise a variable
        let mut n = 1;
        while self.peek_at(n).is_some_and(|t| t.is_symbol("."))
            && self.peek_at(n + 1).and_then(|t| t.symbolic_name()).is_some()
        {
            n += 2;
        }
        if !self.peek_at(n).is_some_and(|t| t.is_symbol("(")) {
            self.pos += 1;
            return Ok(Expr::Variable(unquote_name(&first.text)));
        }
        let mut name = Vec::new();
        for i in (0..n).step_by(2) {
            name.push(unquote_name(&self.tokens[self.pos + i].text));
        }
        self.pos += n + 1;
        self.enter()?;
        let call = self.function_args(name);
        self.leave();
        call
    }

    fn function_args(&mut self, name: Vec<String>) -> PResult<Expr> {
        let distinct = self.eat_kw("DISTINCT");
        let args = if !distinct && self.eat_sym("*") {
            FunctionArgs::Star
        } else if self.at_sym(")") && !distinct {
            FunctionArgs::List(Vec::new())
        } else {
            FunctionArgs::List(self.expr_list("argument", "in function call")?)
        };
        self.expect_sym(")", "to close function call")?;
        Ok(Expr::FunctionCall {
            name,
            distinct,
            args,
        })
    }

    fn list_literal(&mut self) -> PResult<Expr> {
        self.enter()?;
        let mut items = Vec::new();
        if !self.eat_sym("]") {
            loop {
                items.push(self.expr()?);
                if self.eat_sym("]") {
                    break;
                }
                if self.at_sym("|") || self.at_kw("WHERE") {
                    return Err(self.unsupported("list comprehension"));
                }
                if !self.eat_sym(",") {
                    return Err(self.error(&["','", "']'"], "in list literal"));
                }
            }
        }
        self.leave();
        Ok(Expr::List(items))
    }

    fn map_literal(&mut self) -> PResult<Expr> {
        self.enter()?;
        let mut entries = Vec::new();
        if !self.eat_sym("}") {
            loop {
                let key = self.symbolic_name("map key", "in map literal")?;
                self.expect_sym(":", "after map key")?;
                let value = self.expr()?;
                entries.push((key, value));
                if self.eat_sym("}") {
                    break;
                }
                if !self.eat_sym(",") {
                    return Err(self.error(&["','", "'}'"], "in map literal"));
                }
            }
        }
        self.leave();
        Ok(Expr::Map(entries))
    }

    fn case_expr(&mut self) -> PResult<Expr> {
        let subject = if self.at_kw("WHEN") {
            None
        } else {
            Some(Box::new(self.expr()?))
        };
        let mut alternatives = Vec::new();
        while self.eat_kw("WHEN") {
            let when = self.expr()?;
            self.expect_kw("THEN", "in CASE alternative")?;
            let then = self.expr()?;
            alternatives.push((when, then));
        }
        if alternatives.is_empty() {
            return Err(self.error(&["WHEN"], "in CASE expression"));
        }
        let default = if self.eat_kw("ELSE") {
            Some(Box::new(self.expr()?))
        } else {
            None
        };
        self.expect_kw("END", "to close CASE expression")?;
        Ok(Expr::Case {
            subject,
            alternatives,
            default,
        })
    }
}

fn param_name(text: &str) -> String {
    unquote_name(text.trim_start_matches('$'))
}

fn parse_int(text: &str) -> Option<u64> {
    match text.strip_prefix("0x").or_else(|| text.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16).ok(),
        None => text.parse().ok(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ok(q: &str) -> Query {
        parse(q).unwrap_or_else(|d| panic!("{q}: {}", d.message))
    }

    fn err(q: &str) -> Diagnostic {
        match parse(q) {
            Ok(ast) => panic!("accepted {q}: {ast}"),
            Err(d) => d,
        }
    }

    #[test]
    fn accepts_ordered_paged_query() {
        let q = ok("MATCH (p:Person)-[:ACTED_IN]->(m:Movie) RETURN m.title ORDER BY m.title SKIP 1 LIMIT 2");
        let Clause::Match { pattern, .. } = &q.first.clauses[0] else {
            panic!()
        };
        let (rel, node) = &pattern[0].element.chain[0];
        assert_eq!(rel.direction, Direction::Right);
        assert_eq!(rel.types, vec!["ACTED_IN"]);
        assert_eq!(node.labels, vec!["Movie"]);
    }

    #[test]
    fn rejects_truncated_return() {
        let d = err("MATCH (n) RETURN");
        assert!(d.message.contains("return item"), "{}", d.message);
        assert!(d.message.contains("after RETURN"));
        assert_eq!(d.position.offset, 16);
    }

    #[test]
    fn accepts_var_length_undirected_count() {
        let q = ok("MATCH (a)-[:R*1..3]-(b) WHERE a.x IS NOT NULL RETURN count(*)");
        let Clause::Match { pattern, where_clause, .. } = &q.first.clauses[0] else {
            panic!()
        };
        let rel = &pattern[0].element.chain[0].0;
        assert_eq!(rel.direction, Direction::Undirected);
        assert_eq!(
            rel.length,
            Some(VarLength {
                min: Some(1),
                max: Some(3),
                exact: false
            })
        );
        assert!(matches!(where_clause, Some(Expr::IsNull { negated: true, .. })));
    }

    #[test]
    fn left_arrow_and_type_alternation() {
        let q = ok("MATCH (m)<-[r:A|:B|C]-(p) RETURN r");
        let Clause::Match { pattern, .. } = &q.first.clauses[0] else {
            panic!()
        };
        let rel = &pattern[0].element.chain[0].0;
        assert_eq!(rel.direction, Direction::Left);
        assert_eq!(rel.types, vec!["A", "B", "C"]);
    }

    #[test]
    fn statements_may_end_in_updates() {
        ok("MERGE (n:Person {name: 'x'}) ON CREATE SET n.created = 1 ON MATCH SET n += {seen: true}");
        ok("MATCH (n) DETACH DELETE n");
        ok("CREATE (a)-[:R]->(b)");
        ok("MATCH (n) REMOVE n.x, n:Old");
        ok("MATCH (n) SET n:New, n.a.b = 1");
    }

    #[test]
    fn reading_query_must_end_in_return() {
        let d = err("MATCH (n)");
        assert!(d.expected.iter().any(|e| e == "RETURN"));
        err("MATCH (n) WITH n");
        err("CALL db.labels()");
    }

    #[test]
    fn nothing_may_follow_return() {
        err("MATCH (n) RETURN n MATCH (m) RETURN m");
        err("RETURN 1 2");
    }

    #[test]
    fn union_and_call() {
        ok("MATCH (a:A) RETURN a.x AS x UNION ALL MATCH (b:B) RETURN b.x AS x");
        ok("CALL db.labels() YIELD label WHERE label STARTS WITH 'P' RETURN label");
        ok("CALL db.labels() YIELD * RETURN *");
    }

    #[test]
    fn expression_forms() {
        ok("WITH [1, 2, 3] AS xs UNWIND xs AS x RETURN x ^ 2 % 3, -x, +x, xs[0], {a: 1, limit: 2}");
        ok("MATCH (n) WHERE NOT n.a = 1 XOR n.b <> 2 OR n.c <= 3 AND n.d >= 4 RETURN n");
        ok("MATCH (n) WHERE n.name ENDS WITH 's' AND n.name CONTAINS 'a' AND n.x IN [1, 2] RETURN n");
        ok("RETURN CASE WHEN 1 < 2 THEN 'a' ELSE 'b' END, CASE 1 WHEN 1 THEN 2 END");
        ok("MATCH (n) RETURN count(DISTINCT n.x), apoc.text.join(['a'], ','), toLower($q), $`p q`");
        ok("MATCH (n {name: $name}) RETURN n.`weird key` AS `w k`, 1.5e3, 0x1F, null, true");
        ok("MATCH (n:Order) RETURN n.order");
    }

    #[test]
    fn out_of_subset_constructs() {
        for q in [
            "CALL { MATCH (n) RETURN n } RETURN 1",
            "MATCH (n) FOREACH (x IN [1] | SET n.a = x)",
            "LOAD CSV FROM 'f' AS row RETURN row",
            "MATCH (n) WHERE EXISTS { MATCH (n)-->() } RETURN n",
            "RETURN [x IN [1, 2] | x * 2]",
            "RETURN [x IN [1, 2] WHERE x > 1]",
            "MATCH (n) WHERE n.name =~ 'A.*' RETURN n",
            "MATCH p = shortestPath((a)-[*]-(b)) RETURN p",
            "MATCH (n) WHERE n:Person RETURN n",
            "RETURN [1, 2, 3][0..2]",
            "MATCH ((a)-->(b)) RETURN a",
        ] {
            let d = err(q);
            assert!(!d.message.is_empty(), "{q}");
        }
    }

    #[test]
    fn deep_nesting_is_rejected_not_crashing() {
        let q = format!("RETURN {}1{}", "(".repeat(5000), ")".repeat(5000));
        assert!(err(&q).message.contains("nesting"));
        let q = format!("RETURN {}", "[".repeat(20000));
        err(&q);
        let q = format!("RETURN {}1", "NOT ".repeat(5000));
        ok(&q);
    }

    #[test]
    fn invalid_utf8_is_a_diagnostic() {
        let d = parse_bytes(b"RETURN '\xff'").unwrap_err();
        assert_eq!(d.position.offset, 8);
    }
}
