use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Correct predictions on one session's evaluation set.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionEval {
    pub correct: usize,
    pub total: usize,
}

/// Accuracy in percent over the union of the given evaluation sets.
pub fn cumulative_accuracy(per_session: &[SessionEval]) -> Result<f64> {
    if per_session.is_empty() {
        return Err(Error::protocol("no session results to aggregate"));
    }
    if let Some(t) = per_session.iter().position(|s| s.total == 0) {
        return Err(Error::protocol(format!("session {t} has no evaluation results")));
    }
    if per_session.iter().any(|s| s.correct > s.total) {
        return Err(Error::protocol("more correct predictions than examples"));
    }
    let correct: usize = per_session.iter().map(|s| s.correct).sum();
    let total: usize = per_session.iter().map(|s| s.total).sum();
    Ok(100.0 * correct as f64 / total as f64)
}

/// Per-session accuracies with the dropping rate and their mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionMetrics {
    /// `A_0..A_T` in percent.
    pub session_accuracies: Vec<f64>,
    /// `A_0 - A_T`.
    pub pd: f64,
    /// Mean of all session accuracies.
    pub avg: f64,
}

pub fn summarize(session_accuracies: &[f64]) -> Result<SessionMetrics> {
    let (first, last) = match (session_accuracies.first(), session_accuracies.last()) {
        (Some(&f), Some(&l)) => (f, l),
        _ => return Err(Error::protocol("no session accuracies to summarize")),
    };
    if session_accuracies
        .iter()
        .any(|a| !(0.0..=100.0).contains(a))
    {
        return Err(Error::protocol("accuracies must be percentages in [0, 100]"));
    }
    Ok(SessionMetrics {
        session_accuracies: session_accuracies.to_vec(),
        pd: first - last,
        avg: session_accuracies.iter().sum::<f64>() / session_accuracies.len() as f64,
    })
}

/// Two-decimal rounding used when reporting.
pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}
