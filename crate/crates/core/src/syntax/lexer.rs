use serde::{Deserialize, Serialize};

/// Byte offset plus 1-based line and column (columns count characters).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Position {
    pub offset: usize,
    pub line: usize,
    pub column: usize,
}

impl Position {
    pub const START: Position = Position {
        offset: 0,
        line: 1,
        column: 1,
    };
}

impl std::fmt::Display for Position {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{} (offset {})", self.line, self.column, self.offset)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenKind {
    Keyword,
    Identifier,
    Parameter,
    Integer,
    Float,
    String,
    Symbol,
}

/// A lexed token. `text` is the exact source slice, quotes included.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CypherToken {
    pub kind: TokenKind,
    pub text: String,
    pub position: Position,
}

impl CypherToken {
    pub fn end_offset(&self) -> usize {
        self.position.offset + self.text.len()
    }

    pub fn is_keyword(&self, kw: &str) -> bool {
        self.kind == TokenKind::Keyword && self.text.eq_ignore_ascii_case(kw)
    }

    pub fn is_symbol(&self, sym: &str) -> bool {
        self.kind == TokenKind::Symbol && self.text == sym
    }

    /// Identifier or keyword text usable as a label, type or key, with backticks removed.
    pub fn symbolic_name(&self) -> Option<String> {
        match self.kind {
            TokenKind::Identifier | TokenKind::Keyword => Some(unquote_name(&self.text)),
            _ => None,
        }
    }
}

pub(crate) fn unquote_name(text: &str) -> String {
    match text.strip_prefix('`').and_then(|t| t.strip_suffix('`')) {
        Some(inner) => inner.replace("``", "`"),
        None => text.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexError {
    pub position: Position,
    pub message: String,
}

pub const KEYWORDS: &[&str] = &[
    "ALL", "AND", "AS", "ASC", "ASCENDING", "BY", "CALL", "CASE", "CONTAINS", "CREATE", "DELETE",
    "DESC", "DESCENDING", "DETACH", "DISTINCT", "ELSE", "END", "ENDS", "FALSE", "IN", "IS",
    "LIMIT", "MATCH", "MERGE", "NOT", "NULL", "ON", "OPTIONAL", "OR", "ORDER", "REMOVE", "RETURN",
    "SET", "SKIP", "STARTS", "THEN", "TRUE", "UNION", "UNWIND", "WHEN", "WHERE", "WITH", "XOR",
    "YIELD",
];

pub fn is_keyword(word: &str) -> bool {
    KEYWORDS.iter().any(|k| k.eq_ignore_ascii_case(word))
}

const MULTI_SYMBOLS: &[&str] = &["<>", "<=", ">=", "..", "+=", "=~", "!="];

struct Cursor<'a> {
    src: &'a str,
    offset: usize,
    line: usize,
    column: usize,
}

impl<'a> Cursor<'a> {
    fn position(&self) -> Position {
        Position {
            offset: self.offset,
            line: self.line,
            column: self.column,
        }
    }

    fn peek(&self) -> Option<char> {
        self.src[self.offset..].chars().next()
    }

    fn peek_second(&self) -> Option<char> {
        let mut it = self.src[self.offset..].chars();
        it.next();
        it.next()
    }

    fn rest(&self) -> &'a str {
        &self.src[self.offset..]
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.offset += c.len_utf8();
        if c == '\n' {
            self.line += 1;
            self.column = 1;
        } else {
            self.column += 1;
        }
        Some(c)
    }

    fn bump_while(&mut self, pred: impl Fn(char) -> bool) {
        while self.peek().is_some_and(&pred) {
            self.bump();
        }
    }
}

fn is_ident_start(c: char) -> bool {
    c == '_' || c.is_alphabetic()
}

fn is_ident_continue(c: char) -> bool {
    c == '_' || c.is_alphanumeric()
}

/// Position of the end of `text`, for end-of-input diagnostics.
pub fn end_position(text: &str) -> Position {
    let mut cur = Cursor {
        src: text,
        offset: 0,
        line: 1,
        column: 1,
    };
    while cur.bump().is_some() {}
    cur.position()
}

/// Splits `text` into tokens, skipping whitespace and comments.
pub fn tokenize(text: &str) -> Result<Vec<CypherToken>, LexError> {
    let mut cur = Cursor {
        src: text,
        offset: 0,
        line: 1,
        column: 1,
    };
    let mut tokens: Vec<CypherToken> = Vec::new();
    while let Some(c) = cur.peek() {
        if c.is_whitespace() {
            cur.bump();
            continue;
        }
        let start = cur.position();
        if cur.rest().starts_with("//") {
            cur.bump_while(|c| c != '\n');
            continue;
        }
        if cur.rest().starts_with("/*") {
            cur.bump();
            cur.bump();
            loop {
                if cur.rest().starts_with("*/") {
                    cur.bump();
                    cur.bump();
                    break;
                }
                if cur.bump().is_none() {
                    return Err(LexError {
                        position: start,
                        message: "unterminated block comment".into(),
                    });
                }
            }
            continue;
        }
        let kind = match c {
            '\'' | '"' => {
                cur.bump();
                lex_quoted(&mut cur, c, start)?;
                TokenKind::String
            }
            '`' => {
                cur.bump();
                lex_backtick(&mut cur, start)?;
                TokenKind::Identifier
            }
            '$' => {
                cur.bump();
                match cur.peek() {
                    Some('`') => {
                        cur.bump();
                        lex_backtick(&mut cur, start)?;
                        TokenKind::Parameter
                    }
                    Some(n) if is_ident_continue(n) => {
                        cur.bump_while(is_ident_continue);
                        TokenKind::Parameter
                    }
                    _ => TokenKind::Symbol,
                }
            }
            c if c.is_ascii_digit() => lex_number(&mut cur),
            c if is_ident_start(c) => {
                cur.bump_while(is_ident_continue);
                let word = &text[start.offset..cur.offset];
                let after_dot = tokens.last().is_some_and(|t| t.is_symbol("."));
                if is_keyword(word) && !after_dot {
                    TokenKind::Keyword
                } else {
                    TokenKind::Identifier
                }
            }
            _ => {
                if let Some(sym) = MULTI_SYMBOLS.iter().find(|s| cur.rest().starts_with(**s)) {
                    for _ in 0..sym.len() {
                        cur.bump();
                    }
                } else {
                    cur.bump();
                }
                TokenKind::Symbol
            }
        };
        tokens.push(CypherToken {
            kind,
            text: text[start.offset..cur.offset].to_string(),
            position: start,
        });
    }
    Ok(tokens)
}

fn lex_quoted(cur: &mut Cursor<'_>, quote: char, start: Position) -> Result<(), LexError> {
    loop {
        match cur.bump() {
            None => {
                return Err(LexError {
                    position: start,
                    message: "unterminated string literal".into(),
                })
            }
            Some('\\') => {
                if cur.bump().is_none() {
                    return Err(LexError {
                        position: start,
                        message: "unterminated string literal".into(),
                    });
                }
            }
            Some(c) if c == quote => return Ok(()),
            Some(_) => {}
        }
    }
}

fn lex_backtick(cur: &mut Cursor<'_>, start: Position) -> Result<(), LexError> {
    loop {
        match cur.bump() {
            None => {
                return Err(LexError {
                    position: start,
                    message: "unterminated backtick-quoted name".into(),
                })
            }
            Some('`') => {
                if cur.peek() == Some('`') {
                    cur.bump();
                } else {
                    return Ok(());
                }
            }
            Some(_) => {}
        }
    }
}

fn lex_number(cur: &mut Cursor<'_>) -> TokenKind {
    if cur.rest().starts_with("0x") || cur.rest().starts_with("0X") {
        cur.bump();
        cur.bump();
        cur.bump_while(|c| c.is_ascii_hexdigit());
        return TokenKind::Integer;
    }
    cur.bump_while(|c| c.is_ascii_digit());
    let mut kind = TokenKind::Integer;
    // `1..3` is a range, not a float
    if cur.peek() == Some('.') && cur.peek_second().is_some_and(|c| c.is_ascii_digit()) {
        cur.bump();
        cur.bump_while(|c| c.is_ascii_digit());
        kind = TokenKind::Float;
    }
    if matches!(cur.peek(), Some('e' | 'E')) {
        let rest = &cur.rest()[1..];
        let digits = rest.strip_prefix(['+', '-']).unwrap_or(rest);
        if digits.starts_with(|c: char| c.is_ascii_digit()) {
            cur.bump();
            if matches!(cur.peek(), Some('+' | '-')) {
                cur.bump();
            }
            cur.bump_while(|c| c.is_ascii_digit());
            kind = TokenKind::Float;
        }
    }
    kind
}
