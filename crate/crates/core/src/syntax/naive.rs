//! Lightweight token-level checks: bracket balance, repeated clause keywords and the
//! presence of at least one clause.

use super::lexer::{tokenize, CypherToken, TokenKind};
use super::{Diagnostic, SyntaxVerdict};

/// Keywords that may not appear twice in a row.
pub const CLAUSE_KEYWORDS: &[&str] = &[
    "MATCH", "RETURN", "WITH", "WHERE", "CREATE", "MERGE", "DELETE", "SET", "REMOVE", "UNWIND",
    "CALL", "LIMIT", "SKIP", "UNION",
];

/// At least one of these must be present.
pub const REQUIRED_KEYWORDS: &[&str] = &["MATCH", "CREATE", "RETURN", "WITH"];

pub fn naive_validate(text: &str) -> SyntaxVerdict {
    let tokens = match tokenize(text) {
        Ok(tokens) => tokens,
        Err(e) => return SyntaxVerdict::reject(vec![Diagnostic::new(e.position, e.message)]),
    };
    let mut diagnostics = Vec::new();
    if let Err(d) = check_brackets(&tokens) {
        diagnostics.push(d);
    }
    diagnostics.extend(repeated_keywords(&tokens));
    if !tokens.iter().any(|t| REQUIRED_KEYWORDS.iter().any(|k| t.is_keyword(k))) {
        diagnostics.push(Diagnostic::new(
            tokens.first().map_or(super::lexer::Position::START, |t| t.position),
            "no MATCH, CREATE, RETURN or WITH clause found",
        ));
    }
    SyntaxVerdict::from_diagnostics(diagnostics)
}

pub fn naive_validate_bytes(bytes: &[u8]) -> SyntaxVerdict {
    match std::str::from_utf8(bytes) {
        Ok(text) => naive_validate(text),
        Err(e) => SyntaxVerdict::reject(vec![super::utf8_diagnostic(bytes, e)]),
    }
}

/// First bracket error on a token stream: a mismatched closer, or the innermost unclosed opener.
pub fn check_brackets(tokens: &[CypherToken]) -> Result<(), Diagnostic> {
    let mut stack: Vec<&CypherToken> = Vec::new();
    for tok in tokens.iter().filter(|t| t.kind == TokenKind::Symbol) {
        match tok.text.as_str() {
            "(" | "[" | "{" => stack.push(tok),
            ")" | "]" | "}" => {
                let want = match tok.text.as_str() {
                    ")" => "(",
                    "]" => "[",
                    _ => "{",
                };
                match stack.pop() {
                    Some(open) if open.text == want => {}
                    Some(open) => {
                        return Err(Diagnostic::new(
                            tok.position,
                            format!(
                                "'{}' does not close '{}' opened at {}",
                                tok.text, open.text, open.position
                            ),
                        ))
                    }
                    None => {
                        return Err(Diagnostic::new(
                            tok.position,
                            format!("unmatched closing '{}'", tok.text),
                        ))
                    }
                }
            }
            _ => {}
        }
    }
    match stack.pop() {
        Some(open) => Err(Diagnostic::new(
            open.position,
            format!("unclosed '{}'", open.text),
        )),
        None => Ok(()),
    }
}

fn repeated_keywords(tokens: &[CypherToken]) -> Vec<Diagnostic> {
    tokens
        .windows(2)
        .filter_map(|pair| {
            let kw = CLAUSE_KEYWORDS.iter().find(|k| pair[0].is_keyword(k))?;
            pair[1].is_keyword(kw).then(|| {
                Diagnostic::new(pair[1].position, format!("repeated clause keyword {kw}"))
            })
        })
        .collect()
}
