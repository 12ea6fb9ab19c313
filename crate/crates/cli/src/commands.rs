use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use dre::corpus::{load_dialogre, parse_dialogre_unlabeled, to_dialogre_json, BasicTokenizer, DialogueInstance, RelationSet};
use dre::eval::evaluate;
use dre::gradcheck::{check_gradients, tiny_problem, GradCheckOptions};
use dre::knowledge::{load_lexicon, KnowledgeLexicon};
use dre::model::{fit, load_checkpoint, predict, save_checkpoint, Model, FORMAT_VERSION};
use dre::synth::{generate, SynthConfig};

use crate::config::RunConfig;
use crate::Failure;

fn require<'a>(path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, Failure> {
    let path = path
        .as_deref()
        .ok_or_else(|| Failure::Validation(format!("`{key}` is not set")))?;
    if !path.exists() {
        return Err(Failure::Validation(format!("{key} {} does not exist", path.display())));
    }
    Ok(path)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    std::fs::write(path, contents).map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    write(path, serde_json::to_string_pretty(value).expect("outputs serialize") + "\n")
}

/// An output record: provenance first, then the payload under `key`.
fn stamped(meta: &BTreeMap<String, String>, key: &str, payload: impl Serialize) -> serde_json::Value {
    json!({ "metadata": meta, key: payload })
}

fn checkpoint_path(config: &RunConfig, flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| config.paths.checkpoint.clone())
        .unwrap_or_else(|| config.paths.output_dir.join("model.ckpt"))
}

fn load_model(config: &RunConfig, flag: Option<&Path>) -> Result<(Model, BTreeMap<String, String>), Failure> {
    let path = checkpoint_path(config, flag);
    if !path.exists() {
        return Err(Failure::Validation(format!("checkpoint {} does not exist", path.display())));
    }
    let (model, meta) = load_checkpoint(&path)?;
    if let Some(rel_path) = &config.paths.relations {
        let relations = RelationSet::load(rel_path)?;
        if relations != model.relations {
            return Err(Failure::Validation(format!(
                "relation set {} differs from the checkpoint's ({} vs {} labels or different order)",
                rel_path.display(),
                relations.len(),
                model.relations.len()
            )));
        }
    }
    Ok((model, meta))
}

pub fn train(config: &RunConfig, checkpoint: Option<&Path>) -> Result<(), Failure> {
    let data = require(&config.paths.train, "paths.train")?;
    let relations = RelationSet::load(require(&config.paths.relations, "paths.relations")?)?;
    let train_config = config.train_config();
    let lexicon: Option<KnowledgeLexicon> = if train_config.lambda_k > 0.0 {
        let path = config.paths.lexicon.as_deref().ok_or_else(|| {
            Failure::Validation(
                "lambda_k > 0 needs a knowledge lexicon: set `paths.lexicon` or `ablation.disable_knowledge`".into(),
            )
        })?;
        if !path.exists() {
            return Err(Failure::Validation(format!("paths.lexicon {} does not exist", path.display())));
        }
        Some(load_lexicon(path, &relations)?)
    } else {
        None
    };
    let instances = load_dialogre(data, &relations)?;
    let meta = config.metadata("train");
    let out = config.output_dir()?.to_path_buf();

    let fitted = fit(
        &instances,
        &relations,
        lexicon.as_ref(),
        config.encoder.clone(),
        config.model_options(),
        &train_config,
        &BasicTokenizer,
        |e| {
            eprintln!(
                "epoch {:>4}  total {:.4}  relation {:.4}  trigger {:.4}  knowledge {:.4}  accuracy {:.3}",
                e.epoch, e.total_loss, e.relation_loss, e.trigger_loss, e.knowledge_loss, e.train_accuracy
            )
        },
    )?;

    let ckpt = checkpoint_path(config, checkpoint);
    if let Some(parent) = ckpt.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", parent.display())))?;
    }
    save_checkpoint(&fitted.model, &meta, &ckpt)?;
    write_json(&out.join("train_log.json"), &stamped(&meta, "epochs", &fitted.log.epochs))?;
    write_json(&out.join("ingest_report.json"), &stamped(&meta, "ingest", &fitted.report))?;
    println!("checkpoint: {}", ckpt.display());
    Ok(())
}

pub fn eval(config: &RunConfig, checkpoint: Option<&Path>, split: &str) -> Result<(), Failure> {
    let (model, train_meta) = load_model(config, checkpoint)?;
    let data = match split {
        "test" => require(&config.paths.test, "paths.test")?,
        "dev" => require(&config.paths.dev, "paths.dev")?,
        "train" => require(&config.paths.train, "paths.train")?,
        other => return Err(Failure::Validation(format!("unknown split `{other}` (train, dev or test)"))),
    };
    let instances = load_dialogre(data, &model.relations)?;
    if instances.is_empty() {
        return Err(Failure::Validation(format!("{} holds no instances", data.display())));
    }
    let mut report = evaluate(&model, &instances, &BasicTokenizer)?;
    let mut meta = config.metadata("eval");
    // the forward pass follows the checkpoint, not the current config
    meta.insert("fusion".into(), model.options.fusion.to_string());
    meta.insert("literal_attention".into(), model.options.literal_attention.to_string());
    meta.insert("split".into(), split.into());
    if let Some(hash) = train_meta.get("config_hash") {
        meta.insert("train_config_hash".into(), hash.clone());
    }
    if let Some(k) = train_meta.get("knowledge") {
        meta.insert("knowledge".into(), k.clone());
    }
    report.metadata = meta;
    let out = config.output_dir()?;
    write(&out.join("eval_report.txt"), report.to_table())?;
    write(&out.join("eval_report.json"), report.to_json() + "\n")?;
    print!("{}", report.to_table());
    Ok(())
}

#[derive(Serialize)]
struct Probability {
    relation: String,
    probability: f64,
}

#[derive(Serialize)]
struct PredictionRecord {
    instance: usize,
    arg1: String,
    arg2: String,
    relation: String,
    confidence: f64,
    trigger_text: String,
    trigger_start: usize,
    trigger_end: usize,
    /// Every relation in checkpoint order.
    distribution: Vec<Probability>,
}

pub fn predict_file(config: &RunConfig, checkpoint: Option<&Path>, input: &Path) -> Result<(), Failure> {
    if !input.exists() {
        return Err(Failure::Validation(format!("input {} does not exist", input.display())));
    }
    let (model, _) = load_model(config, checkpoint)?;
    let text = std::fs::read_to_string(input).map_err(|e| Failure::Runtime(format!("cannot read {}: {e}", input.display())))?;
    let instances: Vec<DialogueInstance> = parse_dialogre_unlabeled(&text)?;
    let mut records = Vec::with_capacity(instances.len());
    for (i, inst) in instances.iter().enumerate() {
        let p = predict(&model, inst, &BasicTokenizer)?;
        records.push(PredictionRecord {
            instance: i,
            arg1: inst.arg1.clone(),
            arg2: inst.arg2.clone(),
            relation: p.relation,
            confidence: p.distribution[p.relation_index],
            trigger_text: p.trigger_text,
            trigger_start: p.trigger.start,
            trigger_end: p.trigger.end,
            distribution: model
                .relations
                .labels()
                .iter()
                .zip(&p.distribution)
                .map(|(r, &probability)| Probability {
                    relation: r.clone(),
                    probability,
                })
                .collect(),
        });
    }
    let mut meta = config.metadata("predict");
    meta.insert("fusion".into(), model.options.fusion.to_string());
    let path = config.output_dir()?.join("predictions.json");
    write_json(&path, &stamped(&meta, "predictions", &records))?;
    println!("{} predictions: {}", records.len(), path.display());
    Ok(())
}

pub fn gradcheck(config: &RunConfig) -> Result<bool, Failure> {
    let g = &config.gradcheck;
    let mut problem = tiny_problem(g.d_h, g.layers, g.seed)?;
    problem.model.options.fusion = config.model_options().fusion;
    problem.model.options.literal_attention = config.ablation.literal_attention;
    problem.config = config.train_config();
    let options = GradCheckOptions {
        step: g.step,
        tolerance: g.tolerance,
        corrupt: None,
    };
    let report = check_gradients(&problem.model, &problem.example, Some(&problem.knowledge), &problem.config, &options)?;
    let meta = config.metadata("gradcheck");
    write_json(&config.output_dir()?.join("gradcheck.json"), &stamped(&meta, "report", &report))?;
    print!("{}", report.to_table());
    Ok(report.passed())
}

pub fn synth(config: &RunConfig, seed: u64, size: usize, evidence_after_prefix: Option<f64>) -> Result<(), Failure> {
    let synth = SynthConfig {
        evidence_after_prefix,
        ..Default::default()
    };
    let corpus = generate(seed, size, &synth)?;
    let out = config.output_dir()?;
    write(&out.join("train.json"), to_dialogre_json(&corpus.instances) + "\n")?;
    write(&out.join("relations.txt"), corpus.relations.to_lines())?;
    write(&out.join("lexicon.json"), corpus.lexicon.to_json() + "\n")?;

    // a ready-to-run config for the generated files
    let mut run = RunConfig::default();
    run.paths.train = Some("train.json".into());
    run.paths.dev = Some("train.json".into());
    run.paths.test = Some("train.json".into());
    run.paths.relations = Some("relations.txt".into());
    run.paths.lexicon = Some("lexicon.json".into());
    run.paths.output_dir = ".".into();
    run.train.learning_rate = 1e-3;
    let mut toml_text = format!(
        "# generated by `dre synth --seed {seed} --size {size}`; format version {FORMAT_VERSION}\n"
    );
    toml_text.push_str(&toml::to_string(&run).expect("config serializes"));
    write(&out.join("run.toml"), toml_text)?;

    let mut meta = config.metadata("synth");
    meta.insert("seed".into(), seed.to_string());
    meta.insert("size".into(), size.to_string());
    meta.insert(
        "evidence_after_prefix".into(),
        evidence_after_prefix.map_or("unset".into(), |f| f.to_string()),
    );
    let files = ["train.json", "relations.txt", "lexicon.json", "run.toml"];
    write_json(&out.join("synth_manifest.json"), &stamped(&meta, "files", files))?;
    println!("{size} instances: {}", out.display());
    Ok(())
}
