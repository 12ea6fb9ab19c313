use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{AnonymizedDialogue, Tokenizer, CLS, SEP};
use crate::{Error, Result};

/// Inclusive token-index interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end);
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn indices(&self) -> std::ops::RangeInclusive<usize> {
        self.start..=self.end
    }
}

/// `[CLS] dialogue [SEP] a1 [CLS] a2` as tokens, with landmark positions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedInput {
    pub tokens: Vec<String>,
    /// Token interval covering the rewritten dialogue.
    pub dialogue_region: Range<usize>,
    pub cls1_index: usize,
    pub sep_index: usize,
    pub cls2_index: usize,
    pub gold_trigger: Option<Span>,
    /// Dialogue tokens dropped to respect `max_len`.
    pub truncated: usize,
}

impl TokenizedInput {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn in_dialogue(&self, span: Span) -> bool {
        span.start <= span.end
            && self.dialogue_region.contains(&span.start)
            && self.dialogue_region.contains(&span.end)
    }

    pub fn span_text(&self, span: Span) -> String {
        self.tokens[span.start..=span.end].join(" ")
    }
}

/// Builds the encoder input from an anonymized dialogue. Each turn renders as
/// `speaker : utterance`. When the sequence exceeds `max_len`, tokens are
/// dropped from the end of the dialogue; the markers and the argument suffix
/// are always kept.
pub fn build_input_sequence(
    dialogue: &AnonymizedDialogue,
    tokenizer: &impl Tokenizer,
    max_len: usize,
) -> Result<TokenizedInput> {
    let arg1 = tokenizer.tokenize(&dialogue.arg1);
    let arg2 = tokenizer.tokenize(&dialogue.arg2);
    let fixed = 3 + arg1.len() + arg2.len();
    if fixed > max_len {
        return Err(Error::SuffixTooLong {
            needed: fixed,
            max_len,
        });
    }

    let mut body: Vec<String> = Vec::new();
    for turn in &dialogue.turns {
        body.extend(tokenizer.tokenize(&turn.speaker));
        body.push(":".to_string());
        body.extend(tokenizer.tokenize(&turn.text));
    }
    let budget = max_len - fixed;
    let truncated = body.len().saturating_sub(budget);
    body.truncate(budget);

    let mut tokens = Vec::with_capacity(fixed + body.len());
    tokens.push(CLS.to_string());
    tokens.extend(body);
    let sep_index = tokens.len();
    tokens.push(SEP.to_string());
    tokens.extend(arg1);
    let cls2_index = tokens.len();
    tokens.push(CLS.to_string());
    tokens.extend(arg2);

    Ok(TokenizedInput {
        dialogue_region: 1..sep_index,
        cls1_index: 0,
        sep_index,
        cls2_index,
        gold_trigger: None,
        truncated,
        tokens,
    })
}

/// Finds the first occurrence of the trigger's tokens inside the dialogue region.
pub fn align_trigger(
    trigger_text: &str,
    input: &TokenizedInput,
    tokenizer: &impl Tokenizer,
) -> Option<Span> {
    let needle = tokenizer.tokenize(trigger_text);
    if needle.is_empty() {
        return None;
    }
    let region = &input.tokens[input.dialogue_region.clone()];
    region
        .windows(needle.len())
        .position(|w| w == needle.as_slice())
        .map(|offset| {
            let start = input.dialogue_region.start + offset;
            Span::new(start, start + needle.len() - 1)
        })
}
