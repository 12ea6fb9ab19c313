use serde::{Deserialize, Serialize};

use super::step::{argmax, inference_feature};
use super::{classify, Model};
use crate::corpus::{anonymize_speakers, build_input_sequence, DialogueInstance, TokenizedInput, Tokenizer};
use crate::trigger::{decode_span, score_pointers, TriggerSpan};
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationPrediction {
    pub relation: String,
    pub relation_index: usize,
    pub distribution: Vec<f64>,
    pub trigger: TriggerSpan,
    pub trigger_text: String,
    /// Raw start and end pointer logits, kept for inspection.
    #[serde(skip)]
    pub pointer_logits: Option<(Vec<f64>, Vec<f64>)>,
}

/// Encode, decode a trigger span, fuse, classify. The knowledge path is never run.
pub fn predict_example(model: &Model, input: &TokenizedInput) -> Result<RelationPrediction> {
    let params = &model.params;
    let ids = model.vocab.ids(&input.tokens);
    let (enc, _) = params.encoder.encode_ids(&ids, input.cls1_index, input.cls2_index)?;
    let scores = score_pointers(enc.hidden.view(), &params.pointers, input.dialogue_region.clone());
    let span = decode_span(&scores, model.options.max_span_len)?;
    let fused = inference_feature(model, enc.hidden.view(), span.span(), &enc.cls1, &enc.cls2)?;
    let dist = classify(
        enc.cls1.view(),
        fused.view(),
        enc.cls2.view(),
        params.classifier_weight.view(),
        params.classifier_bias.view(),
    )?;
    let best = argmax(&dist);
    Ok(RelationPrediction {
        relation: model.relations.label(best).to_string(),
        relation_index: best,
        distribution: dist.to_vec(),
        trigger: span,
        trigger_text: input.span_text(span.span()),
        pointer_logits: Some((scores.start_logits.to_vec(), scores.end_logits.to_vec())),
    })
}

pub fn predict(model: &Model, instance: &DialogueInstance, tokenizer: &impl Tokenizer) -> Result<RelationPrediction> {
    let input = build_input_sequence(&anonymize_speakers(instance), tokenizer, model.options.max_len)?;
    predict_example(model, &input)
}
