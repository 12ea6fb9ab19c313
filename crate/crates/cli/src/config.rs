use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use dre::encoder::EncoderConfig;
use dre::gradcheck::{DEFAULT_STEP, DEFAULT_TOLERANCE};
use dre::model::{FusionMode, ModelOptions, TrainConfig, FORMAT_VERSION};

use crate::Failure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub relations: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            train: None,
            dev: None,
            test: None,
            relations: None,
            lexicon: None,
            checkpoint: None,
            output_dir: PathBuf::from("dre-out"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    /// Mean-pool the trigger tokens instead of the attention gate.
    pub disable_fusion: bool,
    /// Force `λ_k = 0`; no lexicon is needed.
    pub disable_knowledge: bool,
    /// Collapse both attention views to their pooled vectors.
    pub literal_attention: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub max_len: usize,
    pub max_span_len: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let o = ModelOptions::default();
        ModelSection {
            max_len: o.max_len,
            max_span_len: o.max_span_len,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckSection {
    pub d_h: usize,
    pub layers: usize,
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
}

impl Default for GradcheckSection {
    fn default() -> Self {
        GradcheckSection {
            d_h: 8,
            layers: 2,
            seed: 11,
            step: DEFAULT_STEP,
            tolerance: DEFAULT_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub train: TrainConfig,
    pub encoder: EncoderConfig,
    pub model: ModelSection,
    pub ablation: Ablation,
    pub gradcheck: GradcheckSection,
}

fn to_table<T: Serialize>(value: &T) -> toml::Table {
    toml::Table::try_from(value).expect("config sections serialize to TOML tables")
}

/// Rejects keys the typed sections would silently ignore.
fn check_keys(table: &toml::Table, reference: &toml::Table, prefix: &str) -> Result<(), Failure> {
    for (key, value) in table {
        let name = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
        match (value, reference.get(key)) {
            (toml::Value::Table(inner), Some(toml::Value::Table(known))) => check_keys(inner, known, &name)?,
            (_, Some(_)) => {}
            // optional paths are absent from the serialized defaults
            (_, None) if prefix == "paths" => {}
            (_, None) => return Err(Failure::Validation(format!("unknown configuration key `{name}`"))),
        }
    }
    Ok(())
}

fn parse_override(item: &str) -> Result<(Vec<String>, toml::Value), Failure> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| Failure::Validation(format!("override `{item}` is not of the form key=value")))?;
    let key: Vec<String> = key.trim().split('.').map(str::to_string).collect();
    if key.iter().any(String::is_empty) {
        return Err(Failure::Validation(format!("override `{item}` has an empty key segment")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((key, value))
}

fn set_path(table: &mut toml::Table, key: &[String], value: toml::Value) -> Result<(), Failure> {
    let (last, parents) = key.split_last().expect("non-empty key");
    let mut cur = table;
    for part in parents {
        cur = match cur.entry(part.clone()).or_insert_with(|| toml::Value::Table(toml::Table::new())) {
            toml::Value::Table(t) => t,
            _ => return Err(Failure::Validation(format!("`{}` is not a section", key.join(".")))),
        };
    }
    cur.insert(last.clone(), value);
    Ok(())
}

impl RunConfig {
    /// Reads the optional config file, resolves its relative paths against
    /// the file's directory, then applies `key=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, Failure> {
        let reference = to_table(&RunConfig::default());
        let mut config = match path {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Failure::Validation(format!("cannot read config {}: {e}", path.display())))?;
                let table: toml::Table = toml::from_str(&text)
                    .map_err(|e| Failure::Validation(format!("invalid config {}: {e}", path.display())))?;
                check_keys(&table, &reference, "")?;
                let mut config: RunConfig = table
                    .try_into()
                    .map_err(|e| Failure::Validation(format!("invalid config {}: {e}", path.display())))?;
                config.resolve_relative_to(path.parent().unwrap_or(Path::new(".")));
                config
            }
            None => RunConfig::default(),
        };
        if !overrides.is_empty() {
            let mut table = to_table(&config);
            for item in overrides {
                let (key, value) = parse_override(item)?;
                let mut probe = toml::Table::new();
                set_path(&mut probe, &key, value.clone())?;
                check_keys(&probe, &reference, "")?;
                set_path(&mut table, &key, value)?;
            }
            config = table
                .try_into()
                .map_err(|e| Failure::Validation(format!("invalid override: {e}")))?;
        }
        Ok(config)
    }

    fn resolve_relative_to(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let paths = &mut self.paths;
        for p in [
            &mut paths.train,
            &mut paths.dev,
            &mut paths.test,
            &mut paths.relations,
            &mut paths.lexicon,
            &mut paths.checkpoint,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        fix(&mut paths.output_dir);
    }

    /// Leading 16 hex digits of SHA-256 over the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }

    pub fn model_options(&self) -> ModelOptions {
        ModelOptions {
            max_len: self.model.max_len,
            max_span_len: self.model.max_span_len,
            fusion: if self.ablation.disable_fusion {
                FusionMode::MeanPool
            } else {
                FusionMode::Gate
            },
            literal_attention: self.ablation.literal_attention,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let mut t = self.train.clone();
        if self.ablation.disable_knowledge {
            t.lambda_k = 0.0;
        }
        t
    }

    pub fn uses_knowledge(&self) -> bool {
        self.train_config().lambda_k > 0.0
    }

    /// Provenance recorded in every output file.
    pub fn metadata(&self, command: &str) -> BTreeMap<String, String> {
        let options = self.model_options();
        BTreeMap::from([
            ("command".into(), command.into()),
            ("config_hash".into(), self.hash()),
            ("format_version".into(), FORMAT_VERSION.to_string()),
            ("fusion".into(), options.fusion.to_string()),
            (
                "knowledge".into(),
                if self.uses_knowledge() { "enabled" } else { "disabled" }.into(),
            ),
            ("literal_attention".into(), options.literal_attention.to_string()),
        ])
    }

    pub fn output_dir(&self) -> Result<&Path, Failure> {
        std::fs::create_dir_all(&self.paths.output_dir).map_err(|e| {
            Failure::Runtime(format!("cannot create output directory {}: {e}", self.paths.output_dir.display()))
        })?;
        Ok(&self.paths.output_dir)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_apply_and_typos_are_rejected() {
        let c = RunConfig::load(None, &["train.epochs=3".into(), "ablation.disable_fusion=true".into()]).unwrap();
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.model_options().fusion, FusionMode::MeanPool);
        let c = RunConfig::load(None, &["paths.train=data/x.json".into()]).unwrap();
        assert_eq!(c.paths.train.unwrap(), PathBuf::from("data/x.json"));
        assert!(matches!(
            RunConfig::load(None, &["train.epoch=3".into()]),
            Err(Failure::Validation(_))
        ));
        assert!(RunConfig::load(None, &["train.epochs".into()]).is_err());
        assert!(RunConfig::load(None, &["train.epochs=many".into()]).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.ablation.disable_knowledge = true;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
        assert!(!b.uses_knowledge());
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[paths]\ntrain = \"train.json\"\n[train]\nepochs = 2\n").unwrap();
        let c = RunConfig::load(Some(&path), &[]).unwrap();
        assert_eq!(c.paths.train.unwrap(), dir.path().join("train.json"));
        assert_eq!(c.train.epochs, 2);
        std::fs::write(&path, "[train]\nepochs = 2\nwarmup = 4\n").unwrap();
        assert!(RunConfig::load(Some(&path), &[]).is_err());
    }
}
