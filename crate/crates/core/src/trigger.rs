//! Start/end pointer heads over the dialogue tokens.

use std::ops::Range;

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::corpus::Span;
use crate::math::{log_sum_exp, softmax, MASKED_LOGIT};
use crate::{Error, Result};

pub const DEFAULT_MAX_SPAN_LEN: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointerParams {
    pub w_start: Array1<f64>,
    pub b_start: f64,
    pub w_end: Array1<f64>,
    pub b_end: f64,
}

impl PointerParams {
    pub fn zeros(d: usize) -> Self {
        PointerParams {
            w_start: Array1::zeros(d),
            b_start: 0.0,
            w_end: Array1::zeros(d),
            b_end: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointerScores {
    pub start_logits: Array1<f64>,
    pub end_logits: Array1<f64>,
    /// Positions eligible for a pointer; all others hold [`MASKED_LOGIT`].
    pub region: Range<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriggerSpan {
    pub start: usize,
    pub end: usize,
    pub score: f64,
}

impl TriggerSpan {
    pub fn span(&self) -> Span {
        Span::new(self.start, self.end)
    }
}

/// `w · h_i + b` for every row, masked outside `region`.
pub fn score_pointers(hidden: ArrayView2<f64>, params: &PointerParams, region: Range<usize>) -> PointerScores {
    let mask = |mut logits: Array1<f64>| {
        for (i, z) in logits.iter_mut().enumerate() {
            if !region.contains(&i) {
                *z = MASKED_LOGIT;
            }
        }
        logits
    };
    PointerScores {
        start_logits: mask(hidden.dot(&params.w_start) + params.b_start),
        end_logits: mask(hidden.dot(&params.w_end) + params.b_end),
        region,
    }
}

/// Loss value and its gradient with respect to both logit vectors.
#[derive(Debug, Clone)]
pub struct TriggerLoss {
    pub value: f64,
    pub d_start: Array1<f64>,
    pub d_end: Array1<f64>,
}

/// Cross-entropy of the start softmax at the gold start plus that of the end
/// softmax at the gold end. Without a gold span the loss is masked to zero.
pub fn trigger_loss(scores: &PointerScores, gold: Option<Span>) -> Result<TriggerLoss> {
    let len = scores.start_logits.len();
    let Some(gold) = gold else {
        return Ok(TriggerLoss {
            value: 0.0,
            d_start: Array1::zeros(len),
            d_end: Array1::zeros(len),
        });
    };
    if gold.start > gold.end || gold.end >= len {
        return Err(Error::invalid(format!(
            "gold trigger [{}, {}] outside a sequence of {len} tokens",
            gold.start, gold.end
        )));
    }
    if !scores.region.contains(&gold.start) || !scores.region.contains(&gold.end) {
        return Err(Error::invalid(format!(
            "gold trigger [{}, {}] outside the dialogue region {:?}",
            gold.start, gold.end, scores.region
        )));
    }
    let ce = |logits: &Array1<f64>, target: usize| {
        let value = log_sum_exp(logits.view()) - logits[target];
        let mut grad = softmax(logits.view());
        grad[target] -= 1.0;
        (value, grad)
    };
    let (ls, d_start) = ce(&scores.start_logits, gold.start);
    let (le, d_end) = ce(&scores.end_logits, gold.end);
    Ok(TriggerLoss {
        value: ls + le,
        d_start,
        d_end,
    })
}

/// Backpropagates logit gradients into the pointer parameters and hidden states.
pub fn pointer_backward(
    hidden: ArrayView2<f64>,
    params: &PointerParams,
    d_start: &Array1<f64>,
    d_end: &Array1<f64>,
    grads: &mut PointerParams,
    d_hidden: &mut Array2<f64>,
) {
    grads.w_start += &hidden.t().dot(d_start);
    grads.w_end += &hidden.t().dot(d_end);
    grads.b_start += d_start.sum();
    grads.b_end += d_end.sum();
    for (i, mut row) in d_hidden.rows_mut().into_iter().enumerate() {
        row.scaled_add(d_start[i], &params.w_start);
        row.scaled_add(d_end[i], &params.w_end);
    }
}

/// Best `(i, j)` by `start_i + end_j` with `i ≤ j`, `j − i < max_span_len`,
/// both inside the region. Ties go to the smallest `i`, then smallest `j`.
pub fn decode_span(scores: &PointerScores, max_span_len: usize) -> Result<TriggerSpan> {
    if max_span_len == 0 {
        return Err(Error::invalid("max_span_len must be at least 1"));
    }
    let region = scores.region.clone();
    if region.is_empty() {
        return Err(Error::invalid("cannot decode a span from an empty dialogue region"));
    }
    let mut best: Option<TriggerSpan> = None;
    for i in region.clone() {
        let last = (i + max_span_len).min(region.end);
        for j in i..last {
            let score = scores.start_logits[i] + scores.end_logits[j];
            if best.is_none_or(|b| score > b.score) {
                best = Some(TriggerSpan { start: i, end: j, score });
            }
        }
    }
    Ok(best.expect("region is non-empty"))
}
