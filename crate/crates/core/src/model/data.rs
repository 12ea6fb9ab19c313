use crate::corpus::{
    align_trigger, build_input_sequence, DialogueInstance, IngestReport, RelationSet, Span, TokenizedInput, Tokenizer,
};
use crate::encoder::{phrase_ids, Vocab};
use crate::knowledge::KnowledgeLexicon;
use crate::Result;

/// One model input with its supervision.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    /// Position of the source instance in the loaded corpus.
    pub instance: usize,
    pub input: TokenizedInput,
    pub ids: Vec<usize>,
    /// Target class for the relation loss.
    pub relation: usize,
    /// Every gold class of the source instance.
    pub golds: Vec<usize>,
    pub trigger: Option<Span>,
}

impl Example {
    pub fn label(&self, relations: &RelationSet) -> String {
        format!("instance {} / {}", self.instance, relations.label(self.relation))
    }
}

/// Tokenizes and aligns instances. With `expand`, an instance carrying
/// several relations yields one example per relation; otherwise one example
/// per instance targeting its first relation.
pub fn build_examples(
    instances: &[DialogueInstance],
    relations: &RelationSet,
    vocab: &Vocab,
    tokenizer: &impl Tokenizer,
    max_len: usize,
    expand: bool,
) -> Result<(Vec<Example>, IngestReport)> {
    let mut report = IngestReport {
        instances: instances.len(),
        ..Default::default()
    };
    let mut examples = Vec::new();
    for (index, inst) in instances.iter().enumerate() {
        inst.validate(relations)?;
        let base = build_input_sequence(&crate::corpus::anonymize_speakers(inst), tokenizer, max_len)?;
        if base.truncated > 0 {
            report.truncated_inputs += 1;
        }
        let ids = vocab.ids(&base.tokens);
        let golds = inst
            .relations
            .iter()
            .map(|r| relations.index_of(r))
            .collect::<Result<Vec<_>>>()?;
        let slots = if expand { golds.len() } else { 1 };
        for slot in 0..slots {
            let trigger_text = &inst.triggers[slot];
            let trigger = if trigger_text.trim().is_empty() {
                report.empty_triggers += 1;
                None
            } else {
                let span = align_trigger(trigger_text, &base, tokenizer);
                if span.is_some() {
                    report.aligned_triggers += 1;
                } else {
                    report.unaligned_triggers += 1;
                }
                span
            };
            let mut input = base.clone();
            input.gold_trigger = trigger;
            examples.push(Example {
                instance: index,
                input,
                ids: ids.clone(),
                relation: golds[slot],
                golds: golds.clone(),
                trigger,
            });
        }
    }
    report.training_examples = examples.len();
    Ok((examples, report))
}

/// Vocabulary over the constructed inputs and any lexicon phrases.
pub fn build_vocab(
    instances: &[DialogueInstance],
    lexicon: Option<&KnowledgeLexicon>,
    tokenizer: &impl Tokenizer,
    max_len: usize,
) -> Result<Vocab> {
    let mut tokens: Vec<String> = Vec::new();
    for inst in instances {
        let input = build_input_sequence(&crate::corpus::anonymize_speakers(inst), tokenizer, max_len)?;
        tokens.extend(input.tokens);
    }
    if let Some(lexicon) = lexicon {
        for (_, phrases) in lexicon.iter() {
            for phrase in phrases {
                tokens.extend(tokenizer.tokenize(phrase));
            }
        }
    }
    Ok(Vocab::build(tokens.iter().map(String::as_str)))
}

/// Knowledge phrases as encoder ids (`[CLS]` first), indexed by relation id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnowledgeIds {
    pub phrases: Vec<Vec<Vec<usize>>>,
}

impl KnowledgeIds {
    pub fn new(
        lexicon: &KnowledgeLexicon,
        relations: &RelationSet,
        vocab: &Vocab,
        tokenizer: &impl Tokenizer,
    ) -> Result<Self> {
        let phrases = lexicon
            .tokenized(relations, tokenizer)
            .into_iter()
            .map(|set| set.iter().map(|p| phrase_ids(p, vocab)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        Ok(KnowledgeIds { phrases })
    }
}
