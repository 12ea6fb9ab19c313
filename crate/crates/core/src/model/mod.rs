//! Relation classifier, multi-task loss, training loop, prediction and checkpoints.

mod checkpoint;
mod data;
mod optim;
mod params;
mod predict;
mod step;
mod train;

use ndarray::{concatenate, Array1, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::corpus::RelationSet;
use crate::encoder::{EncoderConfig, Vocab};
use crate::math::softmax;
use crate::trigger::DEFAULT_MAX_SPAN_LEN;
use crate::{Error, Result};

pub use checkpoint::{
    from_bytes, load_checkpoint, load_checkpoint_expecting, save_checkpoint, to_bytes, CHECKPOINT_MAGIC, FORMAT_VERSION,
};
pub use data::{build_examples, build_vocab, Example, KnowledgeIds};
pub use optim::AdamW;
pub use params::{ModelParameters, ParamGroup, TensorView};
pub use predict::{predict, predict_example, RelationPrediction};
pub use step::{example_loss, ForwardOptions, KnowledgeSource, LossTerms};
pub use train::{fit, train, EpochLog, Fitted, TrainLog};

/// How the two trigger views become one feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionMode {
    /// Query-conditioned attention under both pooled vectors, then the sigmoid gate.
    #[default]
    Gate,
    /// Plain average of the trigger tokens (fusion ablation).
    MeanPool,
}

impl std::fmt::Display for FusionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FusionMode::Gate => "adaptive-gate",
            FusionMode::MeanPool => "mean-pool",
        })
    }
}

/// Architecture switches that change the forward pass.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelOptions {
    pub max_len: usize,
    pub max_span_len: usize,
    pub fusion: FusionMode,
    /// Weight the pooled vector itself instead of the trigger tokens, so
    /// each view collapses to `[CLS]`; kept for comparison only.
    pub literal_attention: bool,
}

impl Default for ModelOptions {
    fn default() -> Self {
        ModelOptions {
            max_len: 512,
            max_span_len: DEFAULT_MAX_SPAN_LEN,
            fusion: FusionMode::Gate,
            literal_attention: false,
        }
    }
}

/// Which training instances receive the knowledge-guidance loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GuidanceScope {
    /// Only instances with an aligned gold trigger.
    #[default]
    GoldTriggers,
    /// Every instance; the decoded span stands in when no gold trigger exists.
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lambda_r: f64,
    pub lambda_t: f64,
    pub lambda_k: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Feed the gold trigger tokens to the fusion step when available.
    pub gold_span_fusion: bool,
    pub guidance_scope: GuidanceScope,
    /// Treat the knowledge feature as a constant target.
    pub stop_grad_knowledge: bool,
    /// Encode knowledge phrases once per epoch without gradient.
    pub cache_knowledge: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_r: 1.0,
            lambda_t: 0.3,
            lambda_k: 0.1,
            learning_rate: 3e-5,
            batch_size: 12,
            epochs: 10,
            seed: 0,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            gold_span_fusion: true,
            guidance_scope: GuidanceScope::GoldTriggers,
            stop_grad_knowledge: false,
            cache_knowledge: false,
        }
    }
}

impl TrainConfig {
    // negated comparisons also reject NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_r > 0.0) {
            return Err(Error::invalid("lambda_r must be positive"));
        }
        if self.lambda_t < 0.0 || self.lambda_k < 0.0 {
            return Err(Error::invalid("loss weights must be non-negative"));
        }
        if self.batch_size == 0 || !(self.learning_rate > 0.0) {
            return Err(Error::invalid("batch_size and learning_rate must be positive"));
        }
        Ok(())
    }
}

/// Parameters together with everything needed to run them on raw dialogues.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub params: ModelParameters,
    pub encoder_config: EncoderConfig,
    pub vocab: Vocab,
    pub relations: RelationSet,
    pub options: ModelOptions,
}

impl Model {
    /// Freshly initialized model; `encoder_config.vocab_size` is taken from `vocab`.
    pub fn new(mut encoder_config: EncoderConfig, vocab: Vocab, relations: RelationSet, options: ModelOptions) -> Result<Self> {
        encoder_config.vocab_size = vocab.len();
        encoder_config.validate()?;
        if options.max_len > encoder_config.max_positions {
            return Err(Error::invalid(format!(
                "max_len {} exceeds the encoder's {} positions",
                options.max_len, encoder_config.max_positions
            )));
        }
        Ok(Model {
            params: ModelParameters::init(&encoder_config, relations.len()),
            encoder_config,
            vocab,
            relations,
            options,
        })
    }
}

/// `softmax(W · (cls1 ⊕ trigger ⊕ cls2) + b)`.
pub fn classify(
    cls1: ArrayView1<f64>,
    trigger: ArrayView1<f64>,
    cls2: ArrayView1<f64>,
    weight: ArrayView2<f64>,
    bias: ArrayView1<f64>,
) -> Result<Array1<f64>> {
    let d = cls1.len();
    if trigger.len() != d || cls2.len() != d {
        return Err(Error::invalid("classifier inputs differ in width"));
    }
    if weight.ncols() != 3 * d || weight.nrows() != bias.len() {
        return Err(Error::Shape {
            tensor: "classifier.weight".into(),
            expected: vec![bias.len(), 3 * d],
            found: weight.shape().to_vec(),
        });
    }
    let x = concatenate(Axis(0), &[cls1, trigger, cls2]).expect("equal-width vectors concatenate");
    Ok(softmax((weight.dot(&x) + bias).view()))
}

/// `λ_r·L_r + λ_t·L_t + λ_k·L_k`.
pub fn total_loss(relation: f64, trigger: f64, knowledge: f64, config: &TrainConfig) -> f64 {
    config.lambda_r * relation + config.lambda_t * trigger + config.lambda_k * knowledge
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[test]
    fn zero_classifier_is_uniform() {
        let v = array![0.3, -0.2];
        let p = classify(v.view(), v.view(), v.view(), Array2::zeros((4, 6)).view(), Array1::zeros(4).view()).unwrap();
        assert!(p.iter().all(|&x| (x - 0.25).abs() < 1e-15));
    }

    #[test]
    fn bias_shift_invariance() {
        let v = array![0.3, -0.2];
        let w = Array2::from_shape_fn((3, 6), |(i, j)| (i as f64 - j as f64) * 0.1);
        let b = array![0.1, -0.4, 0.2];
        let p = classify(v.view(), v.view(), v.view(), w.view(), b.view()).unwrap();
        let q = classify(v.view(), v.view(), v.view(), w.view(), (&b + 7.5).view()).unwrap();
        for (a, b) in p.iter().zip(q.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn three_way_softmax_values() {
        let v = array![0.0];
        let p = classify(v.view(), v.view(), v.view(), Array2::zeros((3, 3)).view(), array![1.0, 0.0, -1.0].view())
            .unwrap();
        let expected = [0.665_240_955_774_821_5, 0.244_728_471_054_797_6, 0.090_030_573_170_380_46];
        for (a, b) in p.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((p.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn classifier_shape_mismatch() {
        let v = array![0.0, 1.0];
        assert!(classify(v.view(), v.view(), v.view(), Array2::zeros((3, 5)).view(), Array1::zeros(3).view()).is_err());
        assert!(classify(v.view(), array![1.0].view(), v.view(), Array2::zeros((3, 6)).view(), Array1::zeros(3).view())
            .is_err());
    }

    #[test]
    fn weighted_loss_sum() {
        let cfg = TrainConfig::default();
        assert!((total_loss(1.0, 2.0, 3.0, &cfg) - 1.9).abs() < 1e-12);
        let cfg = TrainConfig {
            lambda_t: 0.0,
            lambda_k: 0.0,
            ..TrainConfig::default()
        };
        assert_eq!(total_loss(0.7, 5.0, 9.0, &cfg), 0.7);
    }

    #[test]
    fn default_hyperparameters() {
        let cfg = TrainConfig::default();
        assert_eq!((cfg.lambda_r, cfg.lambda_t, cfg.lambda_k), (1.0, 0.3, 0.1));
        assert_eq!(cfg.learning_rate, 3e-5);
        assert_eq!(cfg.batch_size, 12);
        assert!(TrainConfig { lambda_r: 0.0, ..cfg }.validate().is_err());
    }
}
