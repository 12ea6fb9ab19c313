//! Per-relation knowledge lexicon and the label-aware guidance target.
//!
//! For the gold relation, every lexicon phrase is encoded with the shared
//! encoder. Each phrase vector is multiplied componentwise with a pooled
//! vector. The componentwise maximum over phrases gives a context-aware
//! (`[CLS]₁`) and an argument-aware (`[CLS]₂`) view. A learned gate fuses the
//! two views into the target that the fused trigger feature is pulled toward.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::corpus::{RelationSet, Tokenizer};
use crate::encoder::{EncoderParams, Vocab};
use crate::fusion::{gate_fuse, gate_fuse_backward};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KnowledgeLexicon {
    entries: BTreeMap<String, Vec<String>>,
}

impl KnowledgeLexicon {
    /// Checks the entries against the relation set: every relation needs a
    /// non-empty list of non-empty phrases, and no extra labels are allowed.
    pub fn new(entries: BTreeMap<String, Vec<String>>, relations: &RelationSet) -> Result<Self> {
        for (label, phrases) in &entries {
            if relations.index_of(label).is_err() {
                return Err(Error::Lexicon(format!("relation `{label}` is not in the relation set")));
            }
            if phrases.is_empty() {
                return Err(Error::Lexicon(format!("relation `{label}` has an empty knowledge list")));
            }
            if phrases.iter().any(|p| p.trim().is_empty()) {
                return Err(Error::Lexicon(format!("relation `{label}` has an empty phrase")));
            }
        }
        if let Some(missing) = relations.labels().iter().find(|l| !entries.contains_key(*l)) {
            return Err(Error::Lexicon(format!("relation `{missing}` has no knowledge entry")));
        }
        Ok(KnowledgeLexicon { entries })
    }

    /// JSON object mapping each relation label to its list of phrases.
    pub fn parse(text: &str, relations: &RelationSet) -> Result<Self> {
        Self::new(serde_json::from_str(text)?, relations)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.entries).expect("lexicon always serializes")
    }

    pub fn phrases(&self, relation: &str) -> Result<&[String]> {
        self.entries
            .get(relation)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownRelation(relation.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[String])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Phrases of every relation tokenized, indexed by relation id.
    pub fn tokenized(&self, relations: &RelationSet, tokenizer: &impl Tokenizer) -> Vec<Vec<Vec<String>>> {
        relations
            .labels()
            .iter()
            .map(|label| {
                self.entries[label]
                    .iter()
                    .map(|p| tokenizer.tokenize(p))
                    .filter(|t| !t.is_empty())
                    .collect()
            })
            .collect()
    }
}

pub fn load_lexicon(path: impl AsRef<Path>, relations: &RelationSet) -> Result<KnowledgeLexicon> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    KnowledgeLexicon::parse(&text, relations)
}

/// Fused label-knowledge feature together with what `backward` needs.
#[derive(Debug, Clone)]
pub struct KnowledgeFeature {
    pub value: Array1<f64>,
    pub context_view: Array1<f64>,
    pub argument_view: Array1<f64>,
    context_argmax: Vec<usize>,
    argument_argmax: Vec<usize>,
}

pub struct KnowledgeGrads {
    pub d_phrases: Array2<f64>,
    pub d_cls1: Array1<f64>,
    pub d_cls2: Array1<f64>,
    pub d_mu: Array1<f64>,
}

fn componentwise_max(phrases: ArrayView2<f64>, pooled: ArrayView1<f64>) -> (Array1<f64>, Vec<usize>) {
    let d = pooled.len();
    let mut best = Array1::from_elem(d, f64::NEG_INFINITY);
    let mut argmax = vec![0; d];
    for (i, row) in phrases.rows().into_iter().enumerate() {
        for j in 0..d {
            let v = row[j] * pooled[j];
            if v > best[j] {
                best[j] = v;
                argmax[j] = i;
            }
        }
    }
    (best, argmax)
}

/// Builds the knowledge feature from already-encoded phrase vectors (one per row).
pub fn fuse_knowledge(
    phrases: ArrayView2<f64>,
    cls1: ArrayView1<f64>,
    cls2: ArrayView1<f64>,
    mu_k: ArrayView1<f64>,
) -> Result<KnowledgeFeature> {
    if phrases.nrows() == 0 {
        return Err(Error::invalid("knowledge set is empty"));
    }
    let d = mu_k.len();
    if phrases.ncols() != d || cls1.len() != d || cls2.len() != d {
        return Err(Error::invalid("knowledge vectors and pooled vectors differ in width"));
    }
    let (context_view, context_argmax) = componentwise_max(phrases, cls1);
    let (argument_view, argument_argmax) = componentwise_max(phrases, cls2);
    let value = gate_fuse(context_view.view(), argument_view.view(), mu_k)?;
    Ok(KnowledgeFeature {
        value,
        context_view,
        argument_view,
        context_argmax,
        argument_argmax,
    })
}

impl KnowledgeFeature {
    pub fn backward(
        &self,
        phrases: ArrayView2<f64>,
        cls1: ArrayView1<f64>,
        cls2: ArrayView1<f64>,
        mu_k: ArrayView1<f64>,
        d_value: ArrayView1<f64>,
    ) -> KnowledgeGrads {
        let (d_ctx, d_arg, d_mu) =
            gate_fuse_backward(self.context_view.view(), self.argument_view.view(), mu_k, d_value);
        let mut d_phrases = Array2::zeros(phrases.raw_dim());
        let mut d_cls1 = Array1::zeros(cls1.len());
        let mut d_cls2 = Array1::zeros(cls2.len());
        for j in 0..cls1.len() {
            let i = self.context_argmax[j];
            d_phrases[[i, j]] += d_ctx[j] * cls1[j];
            d_cls1[j] += d_ctx[j] * phrases[[i, j]];
            let i = self.argument_argmax[j];
            d_phrases[[i, j]] += d_arg[j] * cls2[j];
            d_cls2[j] += d_arg[j] * phrases[[i, j]];
        }
        KnowledgeGrads {
            d_phrases,
            d_cls1,
            d_cls2,
            d_mu,
        }
    }
}

/// Smallest gap between the winning and runner-up products over all
/// components of both views; infinite for a single phrase. Finite-difference
/// checks are only meaningful when this exceeds the perturbation effect.
pub fn max_tie_gap(phrases: ArrayView2<f64>, cls1: ArrayView1<f64>, cls2: ArrayView1<f64>) -> f64 {
    let mut gap = f64::INFINITY;
    for pooled in [cls1, cls2] {
        for j in 0..pooled.len() {
            let mut vals: Vec<f64> = phrases.column(j).iter().map(|v| v * pooled[j]).collect();
            vals.sort_by(|a, b| b.total_cmp(a));
            if vals.len() > 1 {
                gap = gap.min(vals[0] - vals[1]);
            }
        }
    }
    gap
}

/// Encodes the relation's phrases with the shared encoder and fuses them.
#[allow(clippy::too_many_arguments)]
pub fn knowledge_feature(
    relation: &str,
    lexicon: &KnowledgeLexicon,
    tokenizer: &impl Tokenizer,
    encoder: &EncoderParams,
    vocab: &Vocab,
    cls1: ArrayView1<f64>,
    cls2: ArrayView1<f64>,
    mu_k: ArrayView1<f64>,
) -> Result<KnowledgeFeature> {
    let phrases = encode_knowledge(lexicon.phrases(relation)?, tokenizer, encoder, vocab)?;
    fuse_knowledge(phrases.view(), cls1, cls2, mu_k)
}

/// One row per phrase, each the `[CLS]` output of encoding that phrase alone.
pub fn encode_knowledge(
    phrases: &[String],
    tokenizer: &impl Tokenizer,
    encoder: &EncoderParams,
    vocab: &Vocab,
) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((phrases.len(), encoder.d_h()));
    for (i, phrase) in phrases.iter().enumerate() {
        let vec = encoder.encode_phrase(&tokenizer.tokenize(phrase), vocab)?;
        out.row_mut(i).assign(&vec);
    }
    Ok(out)
}

/// `Σ_j (knowledge_j − trigger_j)²`.
pub fn guidance_loss(knowledge: ArrayView1<f64>, trigger: ArrayView1<f64>) -> Result<f64> {
    if knowledge.len() != trigger.len() {
        return Err(Error::invalid(format!(
            "guidance inputs differ in length: {} vs {}",
            knowledge.len(),
            trigger.len()
        )));
    }
    Ok(knowledge
        .iter()
        .zip(trigger.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum())
}
