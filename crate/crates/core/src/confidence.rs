//! Token, group and trace confidence, offline keep-ratio filtering and simulated
//! online early termination.
//!
//! Token confidence is the negated mean of the recorded top-k log-probabilities, so a
//! peaked distribution scores high. Group confidence is a sliding-window mean over token
//! confidences, and a trace is ranked by its weakest group.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{CandidateTrace, TokenStep};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfidenceError {
    #[error("no log-probabilities supplied")]
    EmptyStep,
    #[error("no token confidences supplied")]
    EmptyTrace,
    #[error("window size must be positive")]
    ZeroWindow,
}

// Slack applied before rounding up so that e.g. 0.07 * 100 keeps 7, not 8.
const CEIL_SLACK: f64 = 1e-9;

fn ceil_count(x: f64) -> usize {
    (x - CEIL_SLACK).ceil().max(0.0) as usize
}

/// `-(1/k) * sum(logprobs)`
pub fn token_confidence(logprobs: &[f64]) -> Result<f64, ConfidenceError> {
    if logprobs.is_empty() {
        return Err(ConfidenceError::EmptyStep);
    }
    let sum: f64 = logprobs.iter().sum();
    // -0.0 for a certain token reads oddly in reports
    Ok((-sum / logprobs.len() as f64).max(0.0))
}

pub fn step_confidence(step: &TokenStep) -> f64 {
    // TokenStep guarantees a non-empty list
    token_confidence(step.topk_logprobs()).unwrap_or(0.0)
}

/// Sliding-window means; a single overall mean when the trace is no longer than the window.
pub fn group_confidences(token_confs: &[f64], window: usize) -> Result<Vec<f64>, ConfidenceError> {
    if window == 0 {
        return Err(ConfidenceError::ZeroWindow);
    }
    if token_confs.is_empty() {
        return Err(ConfidenceError::EmptyTrace);
    }
    if token_confs.len() <= window {
        return Ok(vec![mean(token_confs)]);
    }
    Ok(token_confs.windows(window).map(mean).collect())
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceConfidence {
    pub token_confidences: Vec<f64>,
    pub group_confidences: Vec<f64>,
    pub lowest_group: f64,
    pub mean_confidence: f64,
}

impl TraceConfidence {
    /// Scores a trace. A trace without tokens (failed generation) scores zero everywhere.
    pub fn from_trace(trace: &CandidateTrace, window: usize) -> Result<Self, ConfidenceError> {
        let token_confidences: Vec<f64> = trace.tokens.iter().map(step_confidence).collect();
        Self::from_token_confidences(token_confidences, window)
    }

    pub fn from_token_confidences(
        token_confidences: Vec<f64>,
        window: usize,
    ) -> Result<Self, ConfidenceError> {
        if token_confidences.is_empty() {
            if window == 0 {
                return Err(ConfidenceError::ZeroWindow);
            }
            return Ok(Self {
                token_confidences,
                group_confidences: vec![0.0],
                lowest_group: 0.0,
                mean_confidence: 0.0,
            });
        }
        let group_confidences = group_confidences(&token_confidences, window)?;
        let lowest_group = group_confidences
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        let mean_confidence = mean(&token_confidences);
        Ok(Self {
            token_confidences,
            group_confidences,
            lowest_group,
            mean_confidence,
        })
    }
}

/// Number of candidates kept out of `n` at keep ratio `eta`; at least one when `n > 0`.
pub fn keep_count(n: usize, eta: f64) -> usize {
    if n == 0 {
        return 0;
    }
    ceil_count(eta * n as f64).clamp(1, n)
}

/// Indices (ascending) of the `ceil(eta * N)` highest scores. Equal scores favour the
/// earlier index.
pub fn offline_filter(scores: &[f64], eta: f64) -> Vec<usize> {
    let k = keep_count(scores.len(), eta);
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut kept = order[..k].to_vec();
    kept.sort_unstable();
    kept
}

/// Nearest-rank `(1 - eta)` quantile of the warmup scores.
pub fn calibrate_threshold(warmup_scores: &[f64], eta: f64) -> Result<f64, ConfidenceError> {
    if warmup_scores.is_empty() {
        return Err(ConfidenceError::EmptyTrace);
    }
    let mut sorted = warmup_scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ceil_count((1.0 - eta) * sorted.len() as f64).clamp(1, sorted.len());
    Ok(sorted[rank - 1])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum OnlineOutcome {
    Kept,
    /// `position` is the index of the token at which the failing window completed.
    Terminated { position: usize },
}

impl OnlineOutcome {
    pub fn is_kept(&self) -> bool {
        matches!(self, OnlineOutcome::Kept)
    }

    /// Tokens that a live decoder would not have produced.
    pub fn tokens_saved(&self, total_tokens: usize) -> usize {
        match *self {
            OnlineOutcome::Kept => 0,
            OnlineOutcome::Terminated { position } => total_tokens.saturating_sub(position + 1),
        }
    }
}

/// Replays a recorded trace, stopping at the first group whose mean falls below `threshold`.
pub fn online_simulate(
    token_confs: &[f64],
    window: usize,
    threshold: f64,
) -> Result<OnlineOutcome, ConfidenceError> {
    let groups = group_confidences(token_confs, window)?;
    let span = window.min(token_confs.len());
    Ok(groups
        .iter()
        .position(|&g| g < threshold)
        .map_or(OnlineOutcome::Kept, |i| OnlineOutcome::Terminated {
            position: i + span - 1,
        }))
}
