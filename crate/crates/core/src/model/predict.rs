use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dialogue::{AnswerKind, PassageBatch};
use crate::error::{Error, Result};

/// The chosen answer for one question.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub answer_type: AnswerKind,
    /// Inclusive token indices, for span answers.
    pub span: Option<(usize, usize)>,
    pub probability: f64,
    pub answer_text: String,
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&x| libm::exp(x - max)).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Best candidate over spans `(i, j)` with `i ≤ j < i + max_span_len`
/// scored `P^S_i·P^E_j`, and the three classes scored `P^S_c·P^E_c`.
///
/// Candidates are visited by start, then end, then yes/no/unknown, and only
/// a strictly larger score replaces the current best.
pub fn predict_indices(start: &[f64], end: &[f64], max_span_len: usize) -> Result<(AnswerKind, usize, usize, f64)> {
    if start.len() != end.len() || start.len() < 4 {
        return Err(Error::Dimension(format!(
            "start/end logits of length {} and {} (need equal lengths of at least 4)",
            start.len(),
            end.len()
        )));
    }
    if start.iter().chain(end).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite answer logits".into()));
    }
    let m = start.len() - 3;
    let ps = softmax(start);
    let pe = softmax(end);
    let mut best = (AnswerKind::Span, 0, 0, f64::NEG_INFINITY);
    for i in 0..m {
        for j in i..m.min(i + max_span_len) {
            let p = ps[i] * pe[j];
            if p > best.3 {
                best = (AnswerKind::Span, i, j, p);
            }
        }
    }
    for (c, kind) in [AnswerKind::Yes, AnswerKind::No, AnswerKind::Unknown].into_iter().enumerate() {
        let p = ps[m + c] * pe[m + c];
        if p > best.3 {
            best = (kind, m + c, m + c, p);
        }
    }
    Ok(best)
}

pub fn predict(start: &[f64], end: &[f64], batch: &PassageBatch, max_span_len: usize) -> Result<Prediction> {
    let (kind, i, j, p) = predict_indices(start, end, max_span_len)?;
    if start.len() - 3 != batch.context.len() {
        return Err(Error::Dimension(format!(
            "{} logits for a passage of {} tokens",
            start.len(),
            batch.context.len()
        )));
    }
    Ok(match kind {
        AnswerKind::Span => {
            Prediction { answer_type: kind, span: Some((i, j)), probability: p, answer_text: batch.span_text(i, j) }
        }
        _ => Prediction { answer_type: kind, span: None, probability: p, answer_text: kind.as_str().into() },
    })
}
