use ndarray::{s, Array1, Array2, ArrayView2};

use super::{classify, total_loss, Example, FusionMode, GuidanceScope, KnowledgeIds, Model, ModelParameters, TrainConfig};
use crate::corpus::Span;
use crate::fusion::{attend, attend_backward, gate_fuse, gate_fuse_backward, mean_pool, Attended};
use crate::knowledge::{fuse_knowledge, guidance_loss};
use crate::trigger::{decode_span, pointer_backward, score_pointers, trigger_loss};
use crate::Result;

/// Where the knowledge phrase vectors come from during a training step.
#[derive(Debug, Clone, Copy)]
pub enum KnowledgeSource<'a> {
    /// Re-encode every phrase with the current weights; gradients flow into the encoder.
    Encode(&'a KnowledgeIds),
    /// Precomputed phrase vectors per relation, treated as constants.
    Cached(&'a [Array2<f64>]),
}

#[derive(Debug, Clone, Copy)]
pub struct ForwardOptions<'a> {
    pub config: &'a TrainConfig,
    pub knowledge: Option<KnowledgeSource<'a>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub relation: f64,
    pub trigger: f64,
    pub knowledge: f64,
    pub total: f64,
    /// Argmax of the class distribution equals the target.
    pub correct: bool,
}

#[allow(clippy::large_enum_variant)]
enum TriggerFeature {
    Gate {
        context: Attended,
        argument: Attended,
        first: Array1<f64>,
        second: Array1<f64>,
    },
    Mean,
}

/// Training-mode loss for one example. When `grads` is given, the gradient
/// of the weighted total is accumulated into it.
pub fn example_loss(
    model: &Model,
    ex: &Example,
    opts: &ForwardOptions<'_>,
    grads: Option<&mut ModelParameters>,
) -> Result<LossTerms> {
    let params = &model.params;
    let config = opts.config;
    let input = &ex.input;
    let (enc, trace) = params.encoder.encode_ids(&ex.ids, input.cls1_index, input.cls2_index)?;
    let hidden = enc.hidden.view();

    let scores = score_pointers(hidden, &params.pointers, input.dialogue_region.clone());
    let lt = trigger_loss(&scores, ex.trigger)?;

    let span = match ex.trigger {
        Some(gold) if config.gold_span_fusion => gold,
        _ => decode_span(&scores, model.options.max_span_len)?.span(),
    };
    let values = hidden.slice(s![span.start..=span.end, ..]);
    let (fused, feature) = trigger_feature(model, values, &enc.cls1, &enc.cls2)?;

    let probs = classify(
        enc.cls1.view(),
        fused.view(),
        enc.cls2.view(),
        params.classifier_weight.view(),
        params.classifier_bias.view(),
    )?;
    let lr = -probs[ex.relation].ln();
    let correct = argmax(&probs) == ex.relation;

    let guided = config.lambda_k > 0.0
        && (ex.trigger.is_some() || config.guidance_scope == GuidanceScope::All);
    let knowledge = match (guided, opts.knowledge) {
        (true, Some(source)) => {
            let (phrases, traces) = match source {
                KnowledgeSource::Encode(ids) => {
                    let set = &ids.phrases[ex.relation];
                    let mut rows = Array2::zeros((set.len(), params.d_h()));
                    let mut traces = Vec::with_capacity(set.len());
                    for (i, phrase) in set.iter().enumerate() {
                        let (v, t) = params.encoder.encode_phrase_ids(phrase)?;
                        rows.row_mut(i).assign(&v);
                        traces.push(t);
                    }
                    (rows, traces)
                }
                KnowledgeSource::Cached(vectors) => (vectors[ex.relation].clone(), Vec::new()),
            };
            let feat = fuse_knowledge(phrases.view(), enc.cls1.view(), enc.cls2.view(), params.mu_k.view())?;
            let lk = guidance_loss(feat.value.view(), fused.view())?;
            Some((phrases, traces, feat, lk))
        }
        _ => None,
    };
    let lk = knowledge.as_ref().map_or(0.0, |k| k.3);
    let terms = LossTerms {
        relation: lr,
        trigger: lt.value,
        knowledge: lk,
        total: total_loss(lr, lt.value, lk, config),
        correct,
    };
    let Some(grads) = grads else {
        return Ok(terms);
    };

    let d = params.d_h();
    let mut d_hidden = Array2::<f64>::zeros(enc.hidden.raw_dim());

    // relation classifier
    let mut dz = probs * config.lambda_r;
    dz[ex.relation] -= config.lambda_r;
    let x = ndarray::concatenate(ndarray::Axis(0), &[enc.cls1.view(), fused.view(), enc.cls2.view()])
        .expect("equal widths");
    grads.classifier_weight += &dz
        .view()
        .insert_axis(ndarray::Axis(1))
        .dot(&x.view().insert_axis(ndarray::Axis(0)));
    grads.classifier_bias += &dz;
    let dx = params.classifier_weight.t().dot(&dz);
    let mut d_cls1 = dx.slice(s![..d]).to_owned();
    let mut d_fused = dx.slice(s![d..2 * d]).to_owned();
    let mut d_cls2 = dx.slice(s![2 * d..]).to_owned();

    // knowledge guidance
    if let Some((phrases, traces, feat, _)) = &knowledge {
        let diff = (&feat.value - &fused) * (2.0 * config.lambda_k);
        d_fused -= &diff;
        if !config.stop_grad_knowledge {
            let kg = feat.backward(phrases.view(), enc.cls1.view(), enc.cls2.view(), params.mu_k.view(), diff.view());
            d_cls1 += &kg.d_cls1;
            d_cls2 += &kg.d_cls2;
            grads.mu_k += &kg.d_mu;
            for (i, trace) in traces.iter().enumerate() {
                let mut dh = Array2::zeros((trace.len(), d));
                dh.row_mut(0).assign(&kg.d_phrases.row(i));
                params.encoder.backward(trace, dh, &mut grads.encoder);
            }
        }
    }

    // trigger feature
    let d_values = match &feature {
        TriggerFeature::Gate {
            context,
            argument,
            first,
            second,
        } => {
            let (d_first, d_second, d_mu) = gate_fuse_backward(first.view(), second.view(), params.mu_t.view(), d_fused.view());
            grads.mu_t += &d_mu;
            if model.options.literal_attention {
                d_cls1 += &d_first;
                d_cls2 += &d_second;
                None
            } else {
                let (dv1, dq1) = attend_backward(values, enc.cls1.view(), context, d_first.view());
                let (dv2, dq2) = attend_backward(values, enc.cls2.view(), argument, d_second.view());
                d_cls1 += &dq1;
                d_cls2 += &dq2;
                Some(dv1 + dv2)
            }
        }
        TriggerFeature::Mean => {
            let m = values.nrows() as f64;
            let mut dv = Array2::zeros(values.raw_dim());
            for mut row in dv.rows_mut() {
                row.scaled_add(1.0 / m, &d_fused);
            }
            Some(dv)
        }
    };
    if let Some(dv) = d_values {
        let mut rows = d_hidden.slice_mut(s![span.start..=span.end, ..]);
        rows += &dv;
    }
    {
        let mut row = d_hidden.row_mut(input.cls1_index);
        row += &d_cls1;
    }
    {
        let mut row = d_hidden.row_mut(input.cls2_index);
        row += &d_cls2;
    }

    // pointers
    if ex.trigger.is_some() && config.lambda_t > 0.0 {
        let ds = lt.d_start * config.lambda_t;
        let de = lt.d_end * config.lambda_t;
        pointer_backward(hidden, &params.pointers, &ds, &de, &mut grads.pointers, &mut d_hidden);
    }

    params.encoder.backward(&trace, d_hidden, &mut grads.encoder);
    Ok(terms)
}

fn trigger_feature(
    model: &Model,
    values: ArrayView2<f64>,
    cls1: &Array1<f64>,
    cls2: &Array1<f64>,
) -> Result<(Array1<f64>, TriggerFeature)> {
    match model.options.fusion {
        FusionMode::MeanPool => Ok((mean_pool(values)?, TriggerFeature::Mean)),
        FusionMode::Gate => {
            let context = attend(values, cls1.view())?;
            let argument = attend(values, cls2.view())?;
            let (first, second) = if model.options.literal_attention {
                (cls1 * context.weights.sum(), cls2 * argument.weights.sum())
            } else {
                (context.output.clone(), argument.output.clone())
            };
            let fused = gate_fuse(first.view(), second.view(), model.params.mu_t.view())?;
            Ok((
                fused,
                TriggerFeature::Gate {
                    context,
                    argument,
                    first,
                    second,
                },
            ))
        }
    }
}

/// Inference-mode trigger feature for an explicit span.
pub(crate) fn inference_feature(
    model: &Model,
    hidden: ArrayView2<f64>,
    span: Span,
    cls1: &Array1<f64>,
    cls2: &Array1<f64>,
) -> Result<Array1<f64>> {
    let values = hidden.slice(s![span.start..=span.end, ..]);
    Ok(trigger_feature(model, values, cls1, cls2)?.0)
}

pub(crate) fn argmax(values: &Array1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
