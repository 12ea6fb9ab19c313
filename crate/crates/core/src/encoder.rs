//! Reference contextual encoder.
//!
//! Token plus learned position embeddings, followed by `layers` blocks of
//! single-head scaled dot-product self-attention, each wrapped in a residual
//! connection and layer normalization. Knowledge phrases go through the very
//! same weights ([`EncoderParams::encode_phrase`]).

use std::collections::HashMap;

use ndarray::{s, Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{TokenizedInput, CLS, SPECIAL_TOKENS, UNK};
use crate::math::{softmax_rows, uniform_matrix};
use crate::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const INIT_SCALE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub d_h: usize,
    pub layers: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            d_h: 64,
            layers: 2,
            vocab_size: SPECIAL_TOKENS.len(),
            max_positions: 512,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_h == 0 || !self.d_h.is_multiple_of(2) {
            return Err(Error::invalid(format!("d_h must be positive and even, got {}", self.d_h)));
        }
        if self.layers == 0 {
            return Err(Error::invalid("encoder needs at least one layer"));
        }
        if self.vocab_size < SPECIAL_TOKENS.len() || self.max_positions == 0 {
            return Err(Error::invalid("vocabulary or position table too small"));
        }
        Ok(())
    }
}

/// Token ↔ id table. Special tokens always occupy the first ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocab {
    /// Specials followed by `tokens` in first-seen order.
    pub fn build<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Self {
        let mut vocab = Vocab::from(Vec::new());
        for tok in SPECIAL_TOKENS.into_iter().chain(tokens) {
            if !vocab.ids.contains_key(tok) {
                vocab.ids.insert(tok.to_string(), vocab.tokens.len());
                vocab.tokens.push(tok.to_string());
            }
        }
        vocab
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Unknown tokens map to the reserved `[UNK]` id.
    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or_else(|| self.ids[UNK])
    }

    pub fn ids<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let ids = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocab { tokens, ids }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub query: Array2<f64>,
    pub key: Array2<f64>,
    pub value: Array2<f64>,
    pub output: Array2<f64>,
    pub norm_gain: Array1<f64>,
    pub norm_bias: Array1<f64>,
}

impl LayerParams {
    fn zeros(d: usize) -> Self {
        LayerParams {
            query: Array2::zeros((d, d)),
            key: Array2::zeros((d, d)),
            value: Array2::zeros((d, d)),
            output: Array2::zeros((d, d)),
            norm_gain: Array1::zeros(d),
            norm_bias: Array1::zeros(d),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub token_embedding: Array2<f64>,
    pub position_embedding: Array2<f64>,
    pub layers: Vec<LayerParams>,
}

/// Per-token hidden states plus the two pooled `[CLS]` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSequence {
    pub hidden: Array2<f64>,
    pub cls1: Array1<f64>,
    pub cls2: Array1<f64>,
}

/// Intermediate activations of one forward pass, consumed by `backward`.
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    ids: Vec<usize>,
    layers: Vec<LayerTrace>,
}

#[derive(Debug, Clone)]
struct LayerTrace {
    input: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    attn: Array2<f64>,
    context: Array2<f64>,
    normalized: Array2<f64>,
    inv_std: Array1<f64>,
}

impl EncoderTrace {
    /// Number of encoded tokens.
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

impl EncoderParams {
    /// Uniform `[-0.05, 0.05]` embeddings and projections drawn from `config.seed`;
    /// layer-norm gain 1 and bias 0.
    pub fn init(config: &EncoderConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.d_h;
        let token_embedding = uniform_matrix(config.vocab_size, d, INIT_SCALE, &mut rng);
        let position_embedding = uniform_matrix(config.max_positions, d, INIT_SCALE, &mut rng);
        let layers = (0..config.layers)
            .map(|_| LayerParams {
                query: uniform_matrix(d, d, INIT_SCALE, &mut rng),
                key: uniform_matrix(d, d, INIT_SCALE, &mut rng),
                value: uniform_matrix(d, d, INIT_SCALE, &mut rng),
                output: uniform_matrix(d, d, INIT_SCALE, &mut rng),
                norm_gain: Array1::ones(d),
                norm_bias: Array1::zeros(d),
            })
            .collect();
        EncoderParams {
            token_embedding,
            position_embedding,
            layers,
        }
    }

    pub fn zeros_like(&self) -> Self {
        EncoderParams {
            token_embedding: Array2::zeros(self.token_embedding.raw_dim()),
            position_embedding: Array2::zeros(self.position_embedding.raw_dim()),
            layers: self.layers.iter().map(|_| LayerParams::zeros(self.d_h())).collect(),
        }
    }

    pub fn d_h(&self) -> usize {
        self.token_embedding.ncols()
    }

    pub fn max_positions(&self) -> usize {
        self.position_embedding.nrows()
    }

    pub fn vocab_size(&self) -> usize {
        self.token_embedding.nrows()
    }

    pub fn forward(&self, ids: &[usize]) -> Result<(Array2<f64>, EncoderTrace)> {
        if ids.len() > self.max_positions() {
            return Err(Error::SequenceTooLong {
                len: ids.len(),
                max: self.max_positions(),
            });
        }
        if let Some(&bad) = ids.iter().find(|&&id| id >= self.vocab_size()) {
            return Err(Error::invalid(format!("token id {bad} outside vocabulary")));
        }
        let d = self.d_h();
        let len = ids.len();
        let mut x = Array2::zeros((len, d));
        for (i, &id) in ids.iter().enumerate() {
            let mut row = x.row_mut(i);
            row += &self.token_embedding.row(id);
            row += &self.position_embedding.row(i);
        }
        let scale = 1.0 / (d as f64).sqrt();
        let mut traces = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let q = x.dot(&layer.query);
            let k = x.dot(&layer.key);
            let v = x.dot(&layer.value);
            let mut attn = q.dot(&k.t()) * scale;
            softmax_rows(&mut attn);
            let context = attn.dot(&v);
            let residual = &x + &context.dot(&layer.output);

            let mean = residual.mean_axis(Axis(1)).expect("non-empty rows");
            let centered = &residual - &mean.view().insert_axis(Axis(1));
            let var = centered.mapv(|c| c * c).mean_axis(Axis(1)).expect("non-empty rows");
            let inv_std = var.mapv(|v| 1.0 / (v + LAYER_NORM_EPS).sqrt());
            let normalized = &centered * &inv_std.view().insert_axis(Axis(1));
            let out = &normalized * &layer.norm_gain + &layer.norm_bias;

            traces.push(LayerTrace {
                input: std::mem::replace(&mut x, out),
                q,
                k,
                v,
                attn,
                context,
                normalized,
                inv_std,
            });
        }
        Ok((
            x,
            EncoderTrace {
                ids: ids.to_vec(),
                layers: traces,
            },
        ))
    }

    /// Accumulates parameter gradients of a scalar whose gradient with
    /// respect to the hidden states is `d_hidden`.
    pub fn backward(&self, trace: &EncoderTrace, d_hidden: Array2<f64>, grads: &mut EncoderParams) {
        let scale = 1.0 / (self.d_h() as f64).sqrt();
        let mut dy = d_hidden;
        for ((layer, t), g) in self
            .layers
            .iter()
            .zip(&trace.layers)
            .zip(grads.layers.iter_mut())
            .rev()
        {
            g.norm_gain += &(&dy * &t.normalized).sum_axis(Axis(0));
            g.norm_bias += &dy.sum_axis(Axis(0));
            let dxhat = &dy * &layer.norm_gain;
            let mean_dxhat = dxhat.mean_axis(Axis(1)).expect("non-empty rows");
            let mean_dxhat_xhat = (&dxhat * &t.normalized).mean_axis(Axis(1)).expect("non-empty rows");
            let projected = &t.normalized * &mean_dxhat_xhat.view().insert_axis(Axis(1));
            let d_residual = (dxhat - mean_dxhat.view().insert_axis(Axis(1)) - projected)
                * t.inv_std.view().insert_axis(Axis(1));

            g.output += &t.context.t().dot(&d_residual);
            let d_context = d_residual.dot(&layer.output.t());
            let d_attn = d_context.dot(&t.v.t());
            let dv = t.attn.t().dot(&d_context);
            let row_dot = (&d_attn * &t.attn).sum_axis(Axis(1));
            let d_scores = (&d_attn - &row_dot.view().insert_axis(Axis(1))) * &t.attn * scale;
            let dq = d_scores.dot(&t.k);
            let dk = d_scores.t().dot(&t.q);

            g.query += &t.input.t().dot(&dq);
            g.key += &t.input.t().dot(&dk);
            g.value += &t.input.t().dot(&dv);
            dy = d_residual
                + dq.dot(&layer.query.t())
                + dk.dot(&layer.key.t())
                + dv.dot(&layer.value.t());
        }
        for (i, &id) in trace.ids.iter().enumerate() {
            let row = dy.row(i);
            let mut tok = grads.token_embedding.row_mut(id);
            tok += &row;
            let mut pos = grads.position_embedding.row_mut(i);
            pos += &row;
        }
    }

    pub fn encode_ids(&self, ids: &[usize], cls1_index: usize, cls2_index: usize) -> Result<(EncodedSequence, EncoderTrace)> {
        let (hidden, trace) = self.forward(ids)?;
        let encoded = EncodedSequence {
            cls1: hidden.row(cls1_index).to_owned(),
            cls2: hidden.row(cls2_index).to_owned(),
            hidden,
        };
        Ok((encoded, trace))
    }

    pub fn encode(&self, input: &TokenizedInput, vocab: &Vocab) -> Result<EncodedSequence> {
        let ids = vocab.ids(&input.tokens);
        Ok(self.encode_ids(&ids, input.cls1_index, input.cls2_index)?.0)
    }

    /// Encodes `[CLS] phrase` and returns the start-marker row.
    pub fn encode_phrase<S: AsRef<str>>(&self, phrase: &[S], vocab: &Vocab) -> Result<Array1<f64>> {
        let ids = phrase_ids(phrase, vocab)?;
        let (hidden, _) = self.forward(&ids)?;
        Ok(hidden.row(0).to_owned())
    }

    /// Same as [`encode_phrase`](Self::encode_phrase) on pre-mapped ids, keeping the trace.
    pub fn encode_phrase_ids(&self, ids: &[usize]) -> Result<(Array1<f64>, EncoderTrace)> {
        let (hidden, trace) = self.forward(ids)?;
        Ok((hidden.slice(s![0, ..]).to_owned(), trace))
    }
}

/// `[CLS]` followed by the phrase tokens, as ids.
pub fn phrase_ids<S: AsRef<str>>(phrase: &[S], vocab: &Vocab) -> Result<Vec<usize>> {
    if phrase.is_empty() {
        return Err(Error::invalid("cannot encode an empty phrase"));
    }
    let mut ids = Vec::with_capacity(phrase.len() + 1);
    ids.push(vocab.id(CLS));
    ids.extend(vocab.ids(phrase));
    Ok(ids)
}
