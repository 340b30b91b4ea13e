//! Cypher lexing plus the two grammar validators: the naive token rules and the formal
//! subset parser.

pub mod ast;
pub mod lexer;
pub mod naive;
pub mod parser;

use serde::{Deserialize, Serialize};

use crate::trace::GrammarVariant;
pub use lexer::{tokenize, CypherToken, Position, TokenKind};
pub use naive::naive_validate;
pub use parser::{parse, parse_bytes};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub position: Position,
    pub message: String,
    /// Token descriptions the parser would have accepted; empty for non-parser diagnostics.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub expected: Vec<String>,
}

impl Diagnostic {
    pub fn new(position: Position, message: impl Into<String>) -> Self {
        Self {
            position,
            message: message.into(),
            expected: Vec::new(),
        }
    }
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.position, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntaxVerdict {
    pub accepted: bool,
    pub diagnostics: Vec<Diagnostic>,
}

impl SyntaxVerdict {
    pub fn accept() -> Self {
        Self {
            accepted: true,
            diagnostics: Vec::new(),
        }
    }

    /// Panics in debug builds if `diagnostics` is empty.
    pub fn reject(diagnostics: Vec<Diagnostic>) -> Self {
        debug_assert!(!diagnostics.is_empty());
        Self {
            accepted: false,
            diagnostics,
        }
    }

    pub fn from_diagnostics(diagnostics: Vec<Diagnostic>) -> Self {
        Self {
            accepted: diagnostics.is_empty(),
            diagnostics,
        }
    }
}

pub(crate) fn utf8_diagnostic(bytes: &[u8], err: std::str::Utf8Error) -> Diagnostic {
    let valid = err.valid_up_to();
    // the prefix is valid by construction
    let prefix = std::str::from_utf8(&bytes[..valid]).unwrap_or_default();
    Diagnostic::new(lexer::end_position(prefix), "invalid UTF-8 byte sequence")
}

pub fn formal_validate(text: &str) -> SyntaxVerdict {
    match parse(text) {
        Ok(_) => SyntaxVerdict::accept(),
        Err(d) => SyntaxVerdict::reject(vec![d]),
    }
}

/// Runs the validator selected by `variant`; `None` accepts everything.
pub fn validate(text: &str, variant: GrammarVariant) -> SyntaxVerdict {
    match variant {
        GrammarVariant::None => SyntaxVerdict::accept(),
        GrammarVariant::Naive => naive_validate(text),
        GrammarVariant::Formal => formal_validate(text),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rejection<T> {
    pub candidate: T,
    pub diagnostics: Vec<Diagnostic>,
}

/// Splits candidates into survivors (original order) and rejections with their diagnostics.
pub fn grammar_filter<T: AsRef<str>>(
    candidates: Vec<T>,
    variant: GrammarVariant,
) -> (Vec<T>, Vec<Rejection<T>>) {
    let mut kept = Vec::new();
    let mut rejected = Vec::new();
    for candidate in candidates {
        let verdict = validate(candidate.as_ref(), variant);
        if verdict.accepted {
            kept.push(candidate);
        } else {
            rejected.push(Rejection {
                candidate,
                diagnostics: verdict.diagnostics,
            });
        }
    }
    (kept, rejected)
}
