//! Run configuration: JSON file, dotted overrides, data loading and output
//! directory handling.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use irrgn::data::{gen_synthetic, load_records, DialogueExample, MutualRecord, SyntheticSpec, Vocabulary};
use irrgn::train::{prepare, TrainConfig};
use irrgn::ModelConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// MuTual-format training data (file or directory). When both paths are
    /// absent the synthetic task is generated instead.
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub synthetic: SyntheticSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// `model.seed` doubles as the run seed: it fixes initialization and
    /// the shuffling order.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: toy_model(),
            train: TrainConfig { batch_size: 8, ..TrainConfig::default() },
            data: DataConfig::default(),
            out: PathBuf::from("runs/default"),
        }
    }
}

/// The desk-scale model trained by default.
pub fn toy_model() -> ModelConfig {
    ModelConfig { d: 32, heads: 4, encoder_layers: 2, ffn_mult: 2, n_proj: 8, ..ModelConfig::default() }
}

/// Pull `--a.b value` and `--a.b=value` pairs out of `args`; everything else
/// is returned untouched for clap.
pub fn split_overrides(args: Vec<String>) -> Result<(Vec<String>, Vec<(String, String)>)> {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let dotted = arg.strip_prefix("--").filter(|k| k.split('=').next().is_some_and(|k| k.contains('.')));
        match dotted {
            Some(body) => match body.split_once('=') {
                Some((k, v)) => overrides.push((k.to_string(), v.to_string())),
                None => {
                    let v = it.next().with_context(|| format!("missing value for --{body}"))?;
                    overrides.push((body.to_string(), v));
                }
            },
            None => rest.push(arg),
        }
    }
    Ok((rest, overrides))
}

/// Set `path` (dot separated) in a JSON tree. The value is parsed as JSON
/// when possible and kept as a string otherwise.
pub fn set_dotted(root: &mut Value, path: &str, raw: &str) -> Result<()> {
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let mut keys = path.split('.').peekable();
    while let Some(key) = keys.next() {
        let obj = match node {
            Value::Object(map) => map,
            _ => bail!("cannot set `{path}`: `{key}` is inside a non-object value"),
        };
        if keys.peek().is_none() {
            obj.insert(key.to_string(), value);
            return Ok(());
        }
        node = obj.entry(key.to_string()).or_insert_with(|| Value::Object(Default::default()));
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
    }
    bail!("empty override key")
}

impl RunConfig {
    /// Defaults, then the JSON file, then dotted overrides.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut tree = serde_json::to_value(RunConfig::default())?;
        if let Some(path) = file {
            let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            let user: Value = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
            merge(&mut tree, user);
        }
        for (k, v) in overrides {
            set_dotted(&mut tree, k, v)?;
        }
        let cfg: RunConfig = serde_json::from_value(tree).context("invalid run configuration")?;
        cfg.model.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?)
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Raw train and validation records.
pub fn load_splits(data: &DataConfig) -> Result<(Vec<MutualRecord>, Vec<MutualRecord>)> {
    match (&data.train, &data.val) {
        (Some(t), Some(v)) => Ok((load_records(t)?, load_records(v)?)),
        (None, None) => {
            let corpus = gen_synthetic(&data.synthetic)?;
            Ok((corpus.train, corpus.val))
        }
        _ => bail!("data.train and data.val must be given together"),
    }
}

/// Tokenized, length-limited splits and the vocabulary built on train.
pub struct Dataset {
    pub vocab: Vocabulary,
    pub train: Vec<DialogueExample>,
    pub val: Vec<DialogueExample>,
}

impl Dataset {
    pub fn build(cfg: &RunConfig) -> Result<Self> {
        let (train, val) = load_splits(&cfg.data)?;
        let vocab = Vocabulary::from_records(&train);
        Self::with_vocab(cfg, vocab, &train, &val)
    }

    pub fn with_vocab(cfg: &RunConfig, vocab: Vocabulary, train: &[MutualRecord], val: &[MutualRecord]) -> Result<Self> {
        let train = prepare(&DialogueExample::from_records(train, &vocab)?, &cfg.model);
        let val = prepare(&DialogueExample::from_records(val, &vocab)?, &cfg.model);
        Ok(Dataset { vocab, train, val })
    }
}

/// Create `dir`, which must not exist or be empty. A populated sibling is
/// renamed into place so a half-created directory is never observed.
pub fn create_out_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        if fs::read_dir(dir)?.next().is_some() {
            bail!("output directory {} already exists and is not empty", dir.display());
        }
        return Ok(());
    }
    let parent = dir.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(parent)?;
    let name = dir.file_name().context("output path has no final component")?.to_string_lossy();
    let staging = parent.join(format!(".{name}.partial-{}", std::process::id()));
    fs::create_dir_all(&staging)?;
    fs::rename(&staging, dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(())
}

pub const CONFIG_FILE: &str = "config.json";
pub const VOCAB_FILE: &str = "vocab.json";
pub const LOG_FILE: &str = "log.jsonl";
pub const CHECKPOINT_FILE: &str = "best.ckpt";

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_are_split_out() {
        let args = ["irrgn", "train", "--model.d", "16", "--seed", "3", "--train.lr=0.5"].map(String::from).to_vec();
        let (rest, ov) = split_overrides(args).unwrap();
        assert_eq!(rest, ["irrgn", "train", "--seed", "3"]);
        assert_eq!(ov, [("model.d".to_string(), "16".to_string()), ("train.lr".to_string(), "0.5".to_string())]);
        assert!(split_overrides(vec!["--model.d".into()]).is_err());
    }

    #[test]
    fn dotted_values_reach_the_config() {
        let ov = [("model.d".to_string(), "16".to_string()), ("model.mode".to_string(), "hard".to_string())];
        let cfg = RunConfig::resolve(None, &ov).unwrap();
        assert_eq!(cfg.model.d, 16);
        assert_eq!(cfg.model.mode, irrgn::ArcMode::Hard);
        assert_eq!(cfg.model.heads, toy_model().heads);
        assert!(RunConfig::resolve(None, &[("model.nope".into(), "1".into())]).is_err());
    }

    #[test]
    fn file_then_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"model": {"seed": 4, "arc_types": 5}, "train": {"epochs": 2}}"#).unwrap();
        let cfg = RunConfig::resolve(Some(&path), &[("train.epochs".into(), "3".into())]).unwrap();
        assert_eq!((cfg.model.seed, cfg.model.arc_types, cfg.train.epochs), (4, 5, 3));
        assert_eq!(cfg.model.d, toy_model().d);
    }

    #[test]
    fn out_dir_must_be_fresh() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("a/b");
        create_out_dir(&out).unwrap();
        assert!(out.is_dir());
        fs::write(out.join("x"), "1").unwrap();
        assert!(create_out_dir(&out).is_err());
    }
}
