//! Vote keys and the final vote over surviving candidates.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::syntax::lexer::{tokenize, TokenKind};
use crate::trace::VoteMode;

/// Canonical form used to decide whether two candidates are the same answer.
///
/// Keywords are uppercased; every other token is kept byte-for-byte. Tokens that were
/// separated by whitespace or a comment get exactly one space between them. Text that
/// does not lex is returned unchanged.
pub fn vote_key(text: &str) -> String {
    let Ok(tokens) = tokenize(text) else {
        return text.to_string();
    };
    let mut key = String::with_capacity(text.len());
    let mut prev_end: Option<usize> = None;
    for tok in &tokens {
        if let Some(end) = prev_end {
            if tok.position.offset > end {
                key.push(' ');
            }
        }
        if tok.kind == TokenKind::Keyword {
            key.push_str(&tok.text.to_ascii_uppercase());
        } else {
            key.push_str(&tok.text);
        }
        prev_end = Some(tok.end_offset());
    }
    key
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteCandidate {
    pub trace_id: String,
    /// Post-processed query text.
    pub text: String,
    pub mean_confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// `None` when every candidate was filtered out.
    pub query: Option<String>,
    pub vote_key: Option<String>,
    pub support_count: usize,
    pub total_confidence: f64,
    pub contributors: Vec<String>,
}

impl Prediction {
    pub fn empty() -> Self {
        Self {
            query: None,
            vote_key: None,
            support_count: 0,
            total_confidence: 0.0,
            contributors: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.query.is_none()
    }
}

struct Bucket<'a> {
    members: Vec<&'a VoteCandidate>,
}

impl Bucket<'_> {
    /// Summed in sorted order so the total does not depend on input order.
    fn total_confidence(&self) -> f64 {
        let mut cs: Vec<f64> = self.members.iter().map(|c| c.mean_confidence).collect();
        cs.sort_by(f64::total_cmp);
        cs.iter().sum()
    }

    fn score(&self, mode: VoteMode) -> f64 {
        match mode {
            VoteMode::Majority => self.members.len() as f64,
            VoteMode::ConfidenceWeighted => self.total_confidence(),
        }
    }
}

/// Picks the key with the highest score, breaking ties by total confidence and then by the
/// smaller key. The winning text is that of its most confident contributor.
pub fn vote(candidates: &[VoteCandidate], mode: VoteMode) -> Prediction {
    let mut buckets: BTreeMap<String, Bucket> = BTreeMap::new();
    for c in candidates {
        buckets
            .entry(vote_key(&c.text))
            .or_insert_with(|| Bucket { members: Vec::new() })
            .members
            .push(c);
    }
    // BTreeMap iterates keys ascending, so keeping the first maximum favours the smaller key
    let mut best: Option<(&String, &Bucket, f64, f64)> = None;
    for (key, bucket) in &buckets {
        let score = bucket.score(mode);
        let total = bucket.total_confidence();
        let better = match &best {
            None => true,
            Some((_, _, s, t)) => score
                .total_cmp(s)
                .then(total.total_cmp(t))
                == Ordering::Greater,
        };
        if better {
            best = Some((key, bucket, score, total));
        }
    }
    let Some((key, bucket, _, total)) = best else {
        return Prediction::empty();
    };
    let representative = bucket
        .members
        .iter()
        .max_by(|a, b| {
            a.mean_confidence
                .total_cmp(&b.mean_confidence)
                .then_with(|| b.text.cmp(&a.text))
                .then_with(|| b.trace_id.cmp(&a.trace_id))
        })
        .expect("bucket is non-empty");
    let mut contributors: Vec<String> = bucket.members.iter().map(|c| c.trace_id.clone()).collect();
    contributors.sort();
    Prediction {
        query: Some(representative.text.clone()),
        vote_key: Some(key.clone()),
        support_count: bucket.members.len(),
        total_confidence: total,
        contributors,
    }
}
