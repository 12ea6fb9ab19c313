//! Central-difference verification of every analytic gradient.
//!
//! The check perturbs each parameter value by `±step`, re-evaluates the
//! weighted training loss of one example, and compares the resulting slope
//! with the backward pass. Errors are aggregated per [`ParamGroup`] as
//! `‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂)`.

use std::collections::BTreeMap;
use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::corpus::{BasicTokenizer, DialogueInstance, RelationSet, Turn};
use crate::encoder::EncoderConfig;
use crate::knowledge::{max_tie_gap, KnowledgeLexicon};
use crate::model::{
    build_examples, build_vocab, example_loss, Example, ForwardOptions, KnowledgeIds, KnowledgeSource, Model, ModelOptions,
    ModelParameters, ParamGroup, TrainConfig,
};
use crate::{Error, Result};

pub const DEFAULT_STEP: f64 = 1e-4;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Test hook: perturb the analytic gradient of this group before comparing.
    pub corrupt: Option<ParamGroup>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: DEFAULT_STEP,
            tolerance: DEFAULT_TOLERANCE,
            corrupt: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupResult {
    pub group: ParamGroup,
    pub values: usize,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
    pub relative_error: f64,
    pub max_abs_error: f64,
    /// Whether the loss depends on this group at all in the checked configuration.
    pub exercised: bool,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub step: f64,
    pub tolerance: f64,
    pub loss: f64,
    pub groups: Vec<GroupResult>,
    /// Smallest winner/runner-up gap in the knowledge max; see [`max_tie_gap`].
    pub knowledge_tie_gap: Option<f64>,
    pub seconds: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.passed)
    }

    pub fn all_exercised(&self) -> bool {
        self.groups.iter().all(|g| g.exercised)
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "gradient check: central differences, step {:e}, tolerance {:e}, loss {:.6}\n",
            self.step, self.tolerance, self.loss
        );
        out.push_str(&format!(
            "{:<12} {:>7} {:>12} {:>12} {:>12}  result\n",
            "group", "values", "|analytic|", "rel.err", "max.abs"
        ));
        for g in &self.groups {
            out.push_str(&format!(
                "{:<12} {:>7} {:>12.4e} {:>12.4e} {:>12.4e}  {}\n",
                g.group.name(),
                g.values,
                g.analytic_norm,
                g.relative_error,
                g.max_abs_error,
                match (g.passed, g.exercised) {
                    (false, _) => "FAIL",
                    (true, true) => "PASS",
                    (true, false) => "PASS (unused)",
                }
            ));
        }
        if let Some(gap) = self.knowledge_tie_gap {
            out.push_str(&format!("knowledge max tie gap: {gap:.3e}\n"));
        }
        out.push_str(&format!("elapsed: {:.2}s\n", self.seconds));
        out
    }
}

/// Compares the backward pass with central differences on one example.
pub fn check_gradients(
    model: &Model,
    example: &Example,
    knowledge: Option<&KnowledgeIds>,
    config: &TrainConfig,
    options: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let started = Instant::now();
    let opts = ForwardOptions {
        config,
        knowledge: knowledge.map(KnowledgeSource::Encode),
    };
    let mut analytic = model.params.zeros_like();
    let loss = example_loss(model, example, &opts, Some(&mut analytic))?.total;
    if let Some(group) = options.corrupt {
        corrupt(&mut analytic, group);
    }

    let mut probe = model.clone();
    let shapes: Vec<(String, usize)> = model.params.tensors().into_iter().map(|t| (t.name, t.data.len())).collect();
    let analytic_views = analytic.tensors();
    let mut acc: BTreeMap<ParamGroup, [f64; 5]> = BTreeMap::new();
    for (t, (name, len)) in shapes.iter().enumerate() {
        let group = ParamGroup::of(name);
        let entry = acc.entry(group).or_insert([0.0; 5]);
        for i in 0..*len {
            let original = probe.params.tensors_mut()[t][i];
            probe.params.tensors_mut()[t][i] = original + options.step;
            let plus = example_loss(&probe, example, &opts, None)?.total;
            probe.params.tensors_mut()[t][i] = original - options.step;
            let minus = example_loss(&probe, example, &opts, None)?.total;
            probe.params.tensors_mut()[t][i] = original;

            let numeric = (plus - minus) / (2.0 * options.step);
            let a = analytic_views[t].data[i];
            entry[0] += (a - numeric).powi(2);
            entry[1] += a * a;
            entry[2] += numeric * numeric;
            entry[3] = entry[3].max((a - numeric).abs());
            entry[4] += 1.0;
        }
    }

    let groups = ParamGroup::ALL
        .iter()
        .map(|&group| {
            let [diff, an, nn, max_abs, count] = acc.get(&group).copied().unwrap_or([0.0; 5]);
            let (an, nn) = (an.sqrt(), nn.sqrt());
            let denom = an.max(nn);
            let exercised = denom > 0.0;
            let relative_error = if exercised { diff.sqrt() / denom } else { 0.0 };
            GroupResult {
                group,
                values: count as usize,
                analytic_norm: an,
                numeric_norm: nn,
                relative_error,
                max_abs_error: max_abs,
                exercised,
                passed: relative_error < options.tolerance,
            }
        })
        .collect();

    let knowledge_tie_gap = match knowledge {
        Some(ids) if config.lambda_k > 0.0 => {
            let (enc, _) =
                model.params.encoder.encode_ids(&example.ids, example.input.cls1_index, example.input.cls2_index)?;
            let set = &ids.phrases[example.relation];
            let mut rows = Array2::zeros((set.len(), model.params.d_h()));
            for (i, p) in set.iter().enumerate() {
                rows.row_mut(i).assign(&model.params.encoder.encode_phrase_ids(p)?.0);
            }
            Some(max_tie_gap(rows.view(), enc.cls1.view(), enc.cls2.view()))
        }
        _ => None,
    };

    Ok(GradCheckReport {
        step: options.step,
        tolerance: options.tolerance,
        loss,
        groups,
        knowledge_tie_gap,
        seconds: started.elapsed().as_secs_f64(),
    })
}

fn corrupt(grads: &mut ModelParameters, group: ParamGroup) {
    let names: Vec<String> = grads.tensors().into_iter().map(|t| t.name).collect();
    for (name, slot) in names.iter().zip(grads.tensors_mut()) {
        if ParamGroup::of(name) == group {
            for (i, v) in slot.iter_mut().enumerate() {
                *v = *v * 1.5 + 1e-3 * (i as f64 + 1.0);
            }
        }
    }
}

/// A fixed tiny problem touching every parameter group: a short dialogue
/// with an aligned gold trigger, three relations, and a multi-phrase lexicon.
pub struct TinyProblem {
    pub model: Model,
    pub example: Example,
    pub knowledge: KnowledgeIds,
    pub lexicon: KnowledgeLexicon,
    pub config: TrainConfig,
}

pub fn tiny_problem(d_h: usize, layers: usize, seed: u64) -> Result<TinyProblem> {
    let relations = RelationSet::parse("per:girl/boyfriend\nper:spouse\nper:friends\n")?;
    let lexicon = KnowledgeLexicon::parse(
        r#"{
            "per:girl/boyfriend": ["girlfriend", "engagement", "love", "couple together"],
            "per:spouse": ["wife", "married"],
            "per:friends": ["friend", "buddy"]
        }"#,
        &relations,
    )?;
    let instance = DialogueInstance {
        turns: vec![
            Turn::new("Ross", "hey Monica look"),
            Turn::new("Monica", "is that an engagement ring ?"),
            Turn::new("Joey", "wow"),
        ],
        arg1: "Ross".into(),
        arg2: "Monica".into(),
        relations: vec!["per:girl/boyfriend".into()],
        triggers: vec!["engagement ring".into()],
        relation_ids: vec![],
    };
    let tokenizer = BasicTokenizer;
    let options = ModelOptions {
        max_len: 64,
        ..Default::default()
    };
    let vocab = build_vocab(std::slice::from_ref(&instance), Some(&lexicon), &tokenizer, options.max_len)?;
    let encoder = EncoderConfig {
        d_h,
        layers,
        vocab_size: vocab.len(),
        max_positions: 64,
        seed,
    };
    let model = Model::new(encoder, vocab, relations, options)?;
    let (mut examples, _) = build_examples(
        std::slice::from_ref(&instance),
        &model.relations,
        &model.vocab,
        &tokenizer,
        model.options.max_len,
        true,
    )?;
    let example = examples.pop().ok_or_else(|| Error::invalid("tiny problem has no example"))?;
    if example.trigger.is_none() {
        return Err(Error::invalid("tiny problem trigger failed to align"));
    }
    let knowledge = KnowledgeIds::new(&lexicon, &model.relations, &model.vocab, &tokenizer)?;
    Ok(TinyProblem {
        model,
        example,
        knowledge,
        lexicon,
        config: TrainConfig::default(),
    })
}
