use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::step::{ForwardOptions, KnowledgeSource};
use super::{build_examples, build_vocab, example_loss, AdamW, Example, KnowledgeIds, Model, ModelOptions, TrainConfig};
use crate::corpus::{DialogueInstance, IngestReport, RelationSet, Tokenizer};
use crate::encoder::EncoderConfig;
use crate::knowledge::KnowledgeLexicon;
use crate::{Error, Result};

/// Mean loss terms and training accuracy over one pass through the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub relation_loss: f64,
    pub trigger_loss: f64,
    pub knowledge_loss: f64,
    pub total_loss: f64,
    pub train_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub steps: u64,
}

/// Mini-batch AdamW over seeded shuffles of `examples`. Gradients are
/// averaged over each batch. `on_epoch` sees every epoch's log as it ends.
pub fn train(
    model: &mut Model,
    examples: &[Example],
    knowledge: Option<&KnowledgeIds>,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainLog> {
    config.validate()?;
    if examples.is_empty() {
        return Err(Error::invalid("training corpus is empty"));
    }
    if config.lambda_k > 0.0 && knowledge.is_none() {
        return Err(Error::invalid("lambda_k > 0 requires a knowledge lexicon"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut optimizer = AdamW::new(
        config.learning_rate,
        config.beta1,
        config.beta2,
        config.adam_eps,
        config.weight_decay,
    );
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut log = TrainLog::default();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let cached: Option<Vec<Array2<f64>>> = match knowledge {
            Some(ids) if config.cache_knowledge && config.lambda_k > 0.0 => Some(encode_all(model, ids)?),
            _ => None,
        };
        let source = match (&cached, knowledge) {
            (Some(vectors), _) => Some(KnowledgeSource::Cached(vectors)),
            (None, Some(ids)) if config.lambda_k > 0.0 => Some(KnowledgeSource::Encode(ids)),
            _ => None,
        };
        let opts = ForwardOptions {
            config,
            knowledge: source,
        };

        let mut sums = [0.0f64; 4];
        let mut correct = 0usize;
        for batch in order.chunks(config.batch_size) {
            let mut grads = model.params.zeros_like();
            for &i in batch {
                let ex = &examples[i];
                let terms = example_loss(model, ex, &opts, Some(&mut grads))?;
                if !terms.total.is_finite() {
                    return Err(Error::NonFinite {
                        index: ex.instance,
                        label: ex.label(&model.relations),
                    });
                }
                sums[0] += terms.relation;
                sums[1] += terms.trigger;
                sums[2] += terms.knowledge;
                sums[3] += terms.total;
                correct += usize::from(terms.correct);
            }
            scale(&mut grads, 1.0 / batch.len() as f64);
            if !grads.is_finite() {
                let ex = &examples[batch[0]];
                return Err(Error::NonFinite {
                    index: ex.instance,
                    label: ex.label(&model.relations),
                });
            }
            optimizer.update(&mut model.params, &grads);
        }
        let n = examples.len() as f64;
        let entry = EpochLog {
            epoch,
            relation_loss: sums[0] / n,
            trigger_loss: sums[1] / n,
            knowledge_loss: sums[2] / n,
            total_loss: sums[3] / n,
            train_accuracy: correct as f64 / n,
        };
        on_epoch(&entry);
        log.epochs.push(entry);
    }
    log.steps = optimizer.steps();
    Ok(log)
}

fn scale(grads: &mut super::ModelParameters, factor: f64) {
    for t in grads.tensors_mut() {
        t.iter_mut().for_each(|v| *v *= factor);
    }
}

fn encode_all(model: &Model, ids: &KnowledgeIds) -> Result<Vec<Array2<f64>>> {
    let d = model.params.d_h();
    ids.phrases
        .iter()
        .map(|set| {
            let mut rows = Array2::zeros((set.len(), d));
            for (i, phrase) in set.iter().enumerate() {
                rows.row_mut(i).assign(&model.params.encoder.encode_phrase_ids(phrase)?.0);
            }
            Ok(rows)
        })
        .collect()
}

/// Output of [`fit`].
#[derive(Debug, Clone)]
pub struct Fitted {
    pub model: Model,
    pub log: TrainLog,
    pub report: IngestReport,
}

/// Builds the vocabulary from `instances` (plus lexicon phrases), initializes
/// a model and trains it. The lexicon is only consulted when `λ_k > 0`.
#[allow(clippy::too_many_arguments)]
pub fn fit(
    instances: &[DialogueInstance],
    relations: &RelationSet,
    lexicon: Option<&KnowledgeLexicon>,
    encoder: EncoderConfig,
    options: ModelOptions,
    config: &TrainConfig,
    tokenizer: &impl Tokenizer,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<Fitted> {
    let lexicon = lexicon.filter(|_| config.lambda_k > 0.0);
    let vocab = build_vocab(instances, lexicon, tokenizer, options.max_len)?;
    let mut model = Model::new(encoder, vocab, relations.clone(), options)?;
    let (examples, report) =
        build_examples(instances, relations, &model.vocab, tokenizer, model.options.max_len, true)?;
    let knowledge = lexicon
        .map(|lex| KnowledgeIds::new(lex, relations, &model.vocab, tokenizer))
        .transpose()?;
    let log = train(&mut model, &examples, knowledge.as_ref(), config, on_epoch)?;
    Ok(Fitted { model, log, report })
}
