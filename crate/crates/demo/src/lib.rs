//! Browser bindings. Every export takes plain strings or numbers and returns
//! a JSON string; errors come back as `{"error": "..."}`.

use ndarray::{Array1, Array2};
use serde::Serialize;
use serde_json::json;
use wasm_bindgen::prelude::*;

use dre::corpus::{anonymize_speakers, build_input_sequence, BasicTokenizer, DialogueInstance, Turn};
use dre::encoder::EncoderConfig;
use dre::fusion::{attend, gate_fuse};
use dre::model::{fit, predict, Model, ModelOptions, TrainConfig};
use dre::synth::{generate, SynthConfig};

fn respond(result: Result<serde_json::Value, String>) -> String {
    match result {
        Ok(v) => v.to_string(),
        Err(e) => json!({ "error": e }).to_string(),
    }
}

/// One `speaker: utterance` per non-blank line.
pub fn parse_turns(text: &str) -> Result<Vec<Turn>, String> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            let (speaker, utterance) = line
                .split_once(':')
                .ok_or_else(|| format!("line {} has no `speaker:` prefix", i + 1))?;
            Ok(Turn::new(speaker.trim(), utterance.trim()))
        })
        .collect()
}

fn instance(dialogue: &str, arg1: &str, arg2: &str) -> Result<DialogueInstance, String> {
    let turns = parse_turns(dialogue)?;
    if turns.is_empty() {
        return Err("the dialogue is empty".into());
    }
    Ok(DialogueInstance {
        turns,
        arg1: arg1.trim().into(),
        arg2: arg2.trim().into(),
        relations: vec![],
        triggers: vec![],
        relation_ids: vec![],
    })
}

pub fn input_sequence(dialogue: &str, arg1: &str, arg2: &str, max_len: usize) -> Result<serde_json::Value, String> {
    let anon = anonymize_speakers(&instance(dialogue, arg1, arg2)?);
    let input = build_input_sequence(&anon, &BasicTokenizer, max_len).map_err(|e| e.to_string())?;
    Ok(json!({
        "turns": anon.turns,
        "arg1": anon.arg1,
        "arg2": anon.arg2,
        "tokens": input.tokens,
        "dialogue_start": input.dialogue_region.start,
        "dialogue_end": input.dialogue_region.end,
        "cls1": input.cls1_index,
        "sep": input.sep_index,
        "cls2": input.cls2_index,
        "truncated": input.truncated,
    }))
}

#[derive(Serialize)]
struct Fused {
    weights: Vec<f64>,
    attended: Vec<f64>,
    mean: Vec<f64>,
    gated: Vec<f64>,
}

/// `triggers` is a JSON matrix of trigger token vectors; the query and the
/// pre-sigmoid gate are vectors of the same width. The gate mixes the
/// attended vector with the query.
pub fn fusion_explorer(triggers: &str, query: &str, gate: &str) -> Result<serde_json::Value, String> {
    let rows: Vec<Vec<f64>> = serde_json::from_str(triggers).map_err(|e| format!("trigger vectors: {e}"))?;
    let query: Vec<f64> = serde_json::from_str(query).map_err(|e| format!("query: {e}"))?;
    let mu: Vec<f64> = serde_json::from_str(gate).map_err(|e| format!("gate: {e}"))?;
    let width = query.len();
    if rows.iter().any(|r| r.len() != width) {
        return Err(format!("every trigger vector needs {width} components"));
    }
    let t = Array2::from_shape_vec((rows.len(), width), rows.concat()).map_err(|e| e.to_string())?;
    let q = Array1::from(query);
    let a = attend(t.view(), q.view()).map_err(|e| e.to_string())?;
    let mean = t.mean_axis(ndarray::Axis(0)).ok_or("no trigger vectors")?;
    let gated = gate_fuse(a.output.view(), q.view(), Array1::from(mu).view()).map_err(|e| e.to_string())?;
    serde_json::to_value(Fused {
        weights: a.weights.to_vec(),
        attended: a.output.to_vec(),
        mean: mean.to_vec(),
        gated: gated.to_vec(),
    })
    .map_err(|e| e.to_string())
}

/// A small model trained in the page on a generated corpus.
#[wasm_bindgen]
pub struct DemoModel {
    model: Model,
    log: Vec<serde_json::Value>,
}

impl DemoModel {
    pub fn train(seed: u64, size: usize, epochs: usize) -> Result<DemoModel, String> {
        let corpus = generate(seed, size, &SynthConfig::default()).map_err(|e| e.to_string())?;
        let encoder = EncoderConfig {
            d_h: 16,
            layers: 1,
            seed,
            ..Default::default()
        };
        let config = TrainConfig {
            learning_rate: 1e-3,
            epochs,
            seed,
            ..Default::default()
        };
        let mut log = Vec::new();
        let fitted = fit(
            &corpus.instances,
            &corpus.relations,
            Some(&corpus.lexicon),
            encoder,
            ModelOptions::default(),
            &config,
            &BasicTokenizer,
            |e| log.push(json!({ "epoch": e.epoch, "loss": e.total_loss, "accuracy": e.train_accuracy })),
        )
        .map_err(|e| e.to_string())?;
        Ok(DemoModel { model: fitted.model, log })
    }

    pub fn predict_dialogue(&self, dialogue: &str, arg1: &str, arg2: &str) -> Result<serde_json::Value, String> {
        let p = predict(&self.model, &instance(dialogue, arg1, arg2)?, &BasicTokenizer).map_err(|e| e.to_string())?;
        let ranked: Vec<_> = self
            .model
            .relations
            .labels()
            .iter()
            .zip(&p.distribution)
            .map(|(r, q)| json!({ "relation": r, "probability": q }))
            .collect();
        Ok(json!({
            "relation": p.relation,
            "trigger": p.trigger_text,
            "trigger_start": p.trigger.start,
            "trigger_end": p.trigger.end,
            "distribution": ranked,
        }))
    }
}

#[wasm_bindgen]
impl DemoModel {
    /// Trains on `size` generated dialogues; throws on invalid settings.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, size: u32, epochs: u32) -> Result<DemoModel, JsError> {
        DemoModel::train(seed.into(), size as usize, epochs as usize).map_err(|e| JsError::new(&e))
    }

    #[wasm_bindgen(js_name = trainLog)]
    pub fn train_log(&self) -> String {
        serde_json::Value::from(self.log.clone()).to_string()
    }

    pub fn predict(&self, dialogue: &str, arg1: &str, arg2: &str) -> String {
        respond(self.predict_dialogue(dialogue, arg1, arg2))
    }
}

#[wasm_bindgen(js_name = inputSequence)]
pub fn input_sequence_js(dialogue: &str, arg1: &str, arg2: &str, max_len: u32) -> String {
    respond(input_sequence(dialogue, arg1, arg2, max_len as usize))
}

#[wasm_bindgen(js_name = fusionExplorer)]
pub fn fusion_explorer_js(triggers: &str, query: &str, gate: &str) -> String {
    respond(fusion_explorer(triggers, query, gate))
}
