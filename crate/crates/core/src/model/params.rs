use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderConfig, EncoderParams, INIT_SCALE};
use crate::math::{uniform_matrix, uniform_vector};
use crate::trigger::PointerParams;

/// Every trainable tensor of the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParameters {
    pub encoder: EncoderParams,
    pub pointers: PointerParams,
    /// Gate logits fusing the context-aware and argument-aware trigger views.
    pub mu_t: Array1<f64>,
    /// Gate logits fusing the two knowledge views.
    pub mu_k: Array1<f64>,
    /// `n × 3·d_h`.
    pub classifier_weight: Array2<f64>,
    pub classifier_bias: Array1<f64>,
}

/// Parameter groups reported separately by the gradient check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Encoder,
    Pointers,
    MuT,
    MuK,
    Classifier,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 5] = [
        ParamGroup::Encoder,
        ParamGroup::Pointers,
        ParamGroup::MuT,
        ParamGroup::MuK,
        ParamGroup::Classifier,
    ];

    pub fn of(tensor_name: &str) -> ParamGroup {
        match tensor_name {
            n if n.starts_with("encoder.") => ParamGroup::Encoder,
            n if n.starts_with("pointer.") => ParamGroup::Pointers,
            "fusion.mu_t" => ParamGroup::MuT,
            "fusion.mu_k" => ParamGroup::MuK,
            _ => ParamGroup::Classifier,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Encoder => "encoder",
            ParamGroup::Pointers => "pointers",
            ParamGroup::MuT => "mu_t",
            ParamGroup::MuK => "mu_k",
            ParamGroup::Classifier => "classifier",
        }
    }
}

impl std::fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Read-only view of one named tensor.
pub struct TensorView<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

impl ModelParameters {
    /// Fresh parameters: encoder and classifier weights and pointer vectors
    /// uniform in `[-0.05, 0.05]`, biases and both gates zero.
    pub fn init(config: &EncoderConfig, num_relations: usize) -> Self {
        let encoder = EncoderParams::init(config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
        let d = config.d_h;
        ModelParameters {
            encoder,
            pointers: PointerParams {
                w_start: uniform_vector(d, INIT_SCALE, &mut rng),
                b_start: 0.0,
                w_end: uniform_vector(d, INIT_SCALE, &mut rng),
                b_end: 0.0,
            },
            mu_t: Array1::zeros(d),
            mu_k: Array1::zeros(d),
            classifier_weight: uniform_matrix(num_relations, 3 * d, INIT_SCALE, &mut rng),
            classifier_bias: Array1::zeros(num_relations),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let d = self.d_h();
        ModelParameters {
            encoder: self.encoder.zeros_like(),
            pointers: PointerParams::zeros(d),
            mu_t: Array1::zeros(d),
            mu_k: Array1::zeros(d),
            classifier_weight: Array2::zeros(self.classifier_weight.raw_dim()),
            classifier_bias: Array1::zeros(self.classifier_bias.len()),
        }
    }

    pub fn d_h(&self) -> usize {
        self.encoder.d_h()
    }

    pub fn num_relations(&self) -> usize {
        self.classifier_bias.len()
    }

    /// All tensors in a fixed order, with dotted names.
    pub fn tensors(&self) -> Vec<TensorView<'_>> {
        fn view<'a>(name: String, shape: &[usize], data: &'a [f64]) -> TensorView<'a> {
            TensorView {
                name,
                shape: shape.to_vec(),
                data,
            }
        }
        let std = "parameters are always in standard layout";
        let mut out = vec![
            view(
                "encoder.token_embedding".into(),
                self.encoder.token_embedding.shape(),
                self.encoder.token_embedding.as_slice().expect(std),
            ),
            view(
                "encoder.position_embedding".into(),
                self.encoder.position_embedding.shape(),
                self.encoder.position_embedding.as_slice().expect(std),
            ),
        ];
        for (i, layer) in self.encoder.layers.iter().enumerate() {
            for (field, arr) in [
                ("query", &layer.query),
                ("key", &layer.key),
                ("value", &layer.value),
                ("output", &layer.output),
            ] {
                out.push(view(format!("encoder.layer{i}.{field}"), arr.shape(), arr.as_slice().expect(std)));
            }
            for (field, arr) in [("norm_gain", &layer.norm_gain), ("norm_bias", &layer.norm_bias)] {
                out.push(view(format!("encoder.layer{i}.{field}"), arr.shape(), arr.as_slice().expect(std)));
            }
        }
        let p = &self.pointers;
        out.push(view("pointer.w_start".into(), p.w_start.shape(), p.w_start.as_slice().expect(std)));
        out.push(view("pointer.b_start".into(), &[1], std::slice::from_ref(&p.b_start)));
        out.push(view("pointer.w_end".into(), p.w_end.shape(), p.w_end.as_slice().expect(std)));
        out.push(view("pointer.b_end".into(), &[1], std::slice::from_ref(&p.b_end)));
        out.push(view("fusion.mu_t".into(), self.mu_t.shape(), self.mu_t.as_slice().expect(std)));
        out.push(view("fusion.mu_k".into(), self.mu_k.shape(), self.mu_k.as_slice().expect(std)));
        out.push(view(
            "classifier.weight".into(),
            self.classifier_weight.shape(),
            self.classifier_weight.as_slice().expect(std),
        ));
        out.push(view(
            "classifier.bias".into(),
            self.classifier_bias.shape(),
            self.classifier_bias.as_slice().expect(std),
        ));
        out
    }

    /// Mutable slices in the same order as [`tensors`](Self::tensors).
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let std = "parameters are always in standard layout";
        let mut out: Vec<&mut [f64]> = vec![
            self.encoder.token_embedding.as_slice_mut().expect(std),
            self.encoder.position_embedding.as_slice_mut().expect(std),
        ];
        for layer in self.encoder.layers.iter_mut() {
            out.push(layer.query.as_slice_mut().expect(std));
            out.push(layer.key.as_slice_mut().expect(std));
            out.push(layer.value.as_slice_mut().expect(std));
            out.push(layer.output.as_slice_mut().expect(std));
            out.push(layer.norm_gain.as_slice_mut().expect(std));
            out.push(layer.norm_bias.as_slice_mut().expect(std));
        }
        let p = &mut self.pointers;
        out.push(p.w_start.as_slice_mut().expect(std));
        out.push(std::slice::from_mut(&mut p.b_start));
        out.push(p.w_end.as_slice_mut().expect(std));
        out.push(std::slice::from_mut(&mut p.b_end));
        out.push(self.mu_t.as_slice_mut().expect(std));
        out.push(self.mu_k.as_slice_mut().expect(std));
        out.push(self.classifier_weight.as_slice_mut().expect(std));
        out.push(self.classifier_bias.as_slice_mut().expect(std));
        out
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// `self += scale · other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &ModelParameters, scale: f64) {
        let src = other.tensors();
        for (dst, src) in self.tensors_mut().into_iter().zip(src) {
            for (d, s) in dst.iter_mut().zip(src.data) {
                *d += scale * s;
            }
        }
    }
}
