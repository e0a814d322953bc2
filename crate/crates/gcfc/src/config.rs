//! Sectioned run configuration (`[data]`, `[model]`, `[train]`, `[ablate]`).
//!
//! Resolution order, later wins: built-in defaults, the `GCFC_SEED`
//! environment variable, the config file, then `--set section.key=value`
//! overrides. Every key must already exist in the defaults and keep the
//! type of its default value.

use std::fmt::Write as _;
use std::path::Path;

use gcfc_core::ablation::{AblationOptions, Splits};
use gcfc_core::corpus::{generate_synthetic, split_corpus, Corpus, SplitScheme, SyntheticConfig};
use gcfc_core::paircc::ModelConfig;
use gcfc_core::trainer::TrainConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::corpus_io::read_corpus;
use crate::error::{Error, Result};

pub const SEED_ENV: &str = "GCFC_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    Sequential,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// JSONL corpus path; empty selects the synthetic generator.
    pub corpus: String,
    pub seed: u64,
    pub split: SplitKind,
    pub train_fraction: f64,
    pub valid_fraction: f64,
    pub synthetic: SyntheticConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            corpus: String::new(),
            seed: 0,
            split: SplitKind::Sequential,
            train_fraction: 0.72,
            valid_fraction: 0.08,
            synthetic: SyntheticConfig::default(),
        }
    }
}

impl DataConfig {
    pub fn scheme(&self) -> SplitScheme {
        match self.split {
            SplitKind::Sequential => SplitScheme::Sequential8010,
            SplitKind::Random => SplitScheme::Random {
                train: self.train_fraction,
                valid: self.valid_fraction,
            },
        }
    }

    /// The configured corpus file, or a freshly generated synthetic corpus.
    pub fn load(&self) -> Result<Corpus> {
        if self.corpus.is_empty() {
            Ok(generate_synthetic(&self.synthetic, self.seed)?)
        } else {
            read_corpus(Path::new(&self.corpus))
        }
    }

    pub fn split(&self, corpus: &Corpus) -> Result<Splits> {
        let (train, valid, test) = split_corpus(corpus, self.scheme(), self.seed)?;
        Ok(Splits { train, valid, test })
    }
}

/// Optimizer settings; the model lives in its own section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub patience: usize,
    pub detach_auxiliary: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            weight_decay: t.weight_decay,
            seed: t.seed,
            patience: t.patience,
            detach_auxiliary: t.detach_auxiliary,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub ablate: AblationOptions,
}

impl RunConfig {
    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            model: self.model.clone(),
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            weight_decay: t.weight_decay,
            seed: t.seed,
            patience: t.patience,
            detach_auxiliary: t.detach_auxiliary,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        let d = &self.data;
        if d.split == SplitKind::Random
            && !(d.train_fraction > 0.0 && d.valid_fraction >= 0.0 && d.train_fraction + d.valid_fraction <= 1.0)
        {
            return Err(Error::Config(format!(
                "data.train_fraction {} and data.valid_fraction {} do not form a split",
                d.train_fraction, d.valid_fraction
            )));
        }
        if d.corpus.is_empty() {
            // Surface generator errors before any work starts.
            let probe = SyntheticConfig {
                dialogues: 1,
                ..d.synthetic.clone()
            };
            generate_synthetic(&probe, 0)?;
        }
        if self.ablate.seeds.is_empty() {
            return Err(Error::Config("ablate.seeds must not be empty".into()));
        }
        if self.ablate.depths.contains(&0) {
            return Err(Error::Config("ablate.depths must be positive".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configuration serializes to TOML")
    }
}

fn defaults_table() -> Table {
    Table::try_from(RunConfig::default()).expect("defaults serialize to a TOML table")
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::String(_) => "string",
        Value::Integer(_) => "integer",
        Value::Float(_) => "float",
        Value::Boolean(_) => "boolean",
        Value::Datetime(_) => "datetime",
        Value::Array(_) => "array",
        Value::Table(_) => "table",
    }
}

/// `new` coerced to the type of `old`, or an error naming `key`.
fn coerce(key: &str, old: &Value, new: Value) -> Result<Value> {
    match (old, new) {
        (Value::Float(_), Value::Integer(i)) => Ok(Value::Float(i as f64)),
        (Value::Table(_), _) => Err(Error::Config(format!("'{key}' is a section, not a value"))),
        (o, n) if std::mem::discriminant(o) == std::mem::discriminant(&n) => Ok(n),
        (o, n) => Err(Error::Config(format!(
            "'{key}' expects a {}, got {} {}",
            type_name(o),
            type_name(&n),
            n
        ))),
    }
}

fn merge(base: &mut Table, incoming: Table, prefix: &str) -> Result<()> {
    for (k, v) in incoming {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        let slot = base
            .get_mut(&k)
            .ok_or_else(|| Error::Config(format!("unknown configuration key '{key}'")))?;
        match (slot, v) {
            (Value::Table(b), Value::Table(t)) => merge(b, t, &key)?,
            (slot, v) => *slot = coerce(&key, slot, v)?,
        }
    }
    Ok(())
}

fn parse_override_value(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Apply one `section.key=value` override.
pub fn apply_override(table: &mut Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{spec}' is not of the form key=value")))?;
    let key = key.trim();
    let path: Vec<&str> = key.split('.').collect();
    let (last, sections) = path.split_last().expect("split yields at least one part");
    let mut node = &mut *table;
    for (depth, part) in sections.iter().enumerate() {
        node = match node.get_mut(*part) {
            Some(Value::Table(t)) => t,
            _ => {
                return Err(Error::Config(format!(
                    "unknown configuration key '{key}' (no section '{}')",
                    path[..=depth].join(".")
                )))
            }
        };
    }
    let slot = node
        .get_mut(*last)
        .ok_or_else(|| Error::Config(format!("unknown configuration key '{key}'")))?;
    *slot = coerce(key, slot, parse_override_value(raw.trim()))?;
    Ok(())
}

fn section<T: DeserializeOwned>(table: &mut Table, name: &str) -> Result<T> {
    let v = table.remove(name).expect("defaults contain every section");
    T::deserialize(v).map_err(|e| Error::Config(format!("[{name}]: {}", e.message())))
}

/// Resolve and validate a configuration. `env_seed` is the raw value of
/// `GCFC_SEED`, if set; it seeds both the data and the training run.
pub fn resolve(file: Option<&Path>, overrides: &[String], env_seed: Option<&str>) -> Result<RunConfig> {
    let mut table = defaults_table();
    if let Some(raw) = env_seed {
        let seed: u64 = raw
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{SEED_ENV}='{raw}' is not an unsigned integer")))?;
        for s in ["data.seed", "train.seed"] {
            apply_override(&mut table, &format!("{s}={seed}"))?;
        }
    }
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| Error::read(path, e))?;
        let parsed: Table = toml::from_str(&text).map_err(|e| {
            let line = e
                .span()
                .map_or(0, |s| text[..s.start.min(text.len())].matches('\n').count() + 1);
            Error::parse(path, line, e.message().to_string())
        })?;
        merge(&mut table, parsed, "").map_err(|e| match e {
            Error::Config(msg) => Error::parse(path, 0, msg),
            other => other,
        })?;
    }
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let config = RunConfig {
        data: section(&mut table, "data")?,
        model: section(&mut table, "model")?,
        train: section(&mut table, "train")?,
        ablate: section(&mut table, "ablate")?,
    };
    config.validate()?;
    Ok(config)
}

const DESCRIPTIONS: &[(&str, &str)] = &[
    (
        "ablate.depths",
        "GAT-MLP layers per stage compared by the skip_vs_depth study",
    ),
    (
        "ablate.seeds",
        "Seeds every ablation cell is trained with; reports average over them",
    ),
    (
        "ablate.window_max",
        "Largest j = k of the window_sweep study (steps of 2 from 0)",
    ),
    ("data.corpus", "JSONL corpus file; empty uses the synthetic generator"),
    ("data.seed", "Synthetic generator seed and random-split seed"),
    (
        "data.split",
        "`sequential` (first 80% train with its last tenth held out, rest test) or `random`",
    ),
    ("data.synthetic.dialogues", "Number of synthetic dialogues"),
    ("data.synthetic.dims.a", "Acoustic feature width"),
    ("data.synthetic.dims.t", "Text feature width"),
    ("data.synthetic.dims.v", "Visual feature width"),
    ("data.synthetic.max_len", "Longest synthetic dialogue (utterances)"),
    ("data.synthetic.min_len", "Shortest synthetic dialogue (utterances)"),
    (
        "data.synthetic.noise",
        "Standard deviation of the Gaussian noise on every feature",
    ),
    ("data.synthetic.signal", "Magnitude of the planted latent-bit signal"),
    ("data.synthetic.speakers", "Speakers per synthetic dialogue"),
    ("data.train_fraction", "Training share of a random split"),
    ("data.valid_fraction", "Validation share of a random split"),
    (
        "model.direction",
        "`future_as_in_edge` (future context flows into each node) or `literal`",
    ),
    ("model.dropout", "Dropout rate"),
    (
        "model.edge_type_embedding",
        "Add edge-type embeddings to the attention input",
    ),
    (
        "model.head_merge",
        "`average` or `concat_project` for combining attention heads",
    ),
    ("model.heads", "Attention heads per GAT-MLP layer"),
    ("model.layers", "GAT-MLP layers per fusion stage"),
    ("model.modalities", "Modalities used, e.g. `A+V+T`, `T`, `A+T`"),
    (
        "model.norm_position",
        "`post` (normalize after the residual sum) or `pre`",
    ),
    (
        "model.separate_loss",
        "Auxiliary classification loss on each modality-specific subspace",
    ),
    (
        "model.shared_loss",
        "Auxiliary classification loss on the shared subspace",
    ),
    (
        "model.skip_connection",
        "Residual connections around both GAT-MLP sublayers",
    ),
    (
        "model.speaker_embedding",
        "Add speaker embeddings to the encoded features",
    ),
    ("model.speaker_ratio", "Weight of the speaker embedding, in [0, 1]"),
    ("model.use_feedforward", "Keep the feed-forward sublayer"),
    ("model.use_multigat", "Keep the graph-attention sublayer"),
    ("model.width", "Hidden width d"),
    ("model.window.future", "Future context window k"),
    ("model.window.past", "Past context window j"),
    ("train.batch_size", "Dialogues per optimizer step"),
    (
        "train.detach_auxiliary",
        "Train on the main loss only (auxiliary terms reported, not optimized)",
    ),
    ("train.epochs", "Maximum number of epochs"),
    ("train.learning_rate", "AdamW learning rate"),
    (
        "train.patience",
        "Epochs without validation weighted-F1 gain before stopping; 0 disables",
    ),
    ("train.seed", "Initialization, shuffling and dropout seed"),
    ("train.weight_decay", "AdamW decoupled weight decay"),
];

fn flatten(table: &Table, prefix: &str, out: &mut Vec<(String, String)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            Value::Table(t) => flatten(t, &key, out),
            other => out.push((key, other.to_string())),
        }
    }
}

/// Every configuration key with its default value, flattened and sorted.
pub fn default_keys() -> Vec<(String, String)> {
    let mut out = Vec::new();
    flatten(&defaults_table(), "", &mut out);
    out.sort();
    out
}

pub fn description(key: &str) -> Option<&'static str> {
    DESCRIPTIONS.iter().find(|(k, _)| *k == key).map(|(_, d)| *d)
}

/// The configuration reference page (markdown).
pub fn reference() -> String {
    let mut s = String::from(
        "# Configuration reference\n\n\
         Generated from the built-in defaults. Values are resolved in this order, later wins:\n\
         defaults, the `GCFC_SEED` environment variable (sets `data.seed` and `train.seed`),\n\
         the `--config` file, then `--set section.key=value` overrides.\n",
    );
    let mut current = String::new();
    for (key, default) in default_keys() {
        let section = key.split('.').next().unwrap_or_default().to_string();
        if section != current {
            let _ = write!(
                s,
                "\n## [{section}]\n\n| key | default | description |\n|---|---|---|\n"
            );
            current = section;
        }
        let _ = writeln!(
            s,
            "| `{key}` | `{default}` | {} |",
            description(&key).unwrap_or("(undocumented)")
        );
    }
    s
}
