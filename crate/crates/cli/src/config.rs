//! Run configuration: flag values merged with an optional JSON file, and
//! written into every output directory.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use mac_core::model::ModelConfig;
use mac_core::train::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Default, Args)]
pub struct ModelArgs {
    /// Embedding width D.
    #[arg(long)]
    pub embed_dim: Option<usize>,
    /// Mamba expansion factor S.
    #[arg(long)]
    pub expand: Option<usize>,
    /// SSM state size N.
    #[arg(long)]
    pub states: Option<usize>,
    /// Attention layers L per stack.
    #[arg(long)]
    pub layers: Option<usize>,
    /// Attention heads H.
    #[arg(long)]
    pub heads: Option<usize>,
    /// Huber threshold δ.
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub conv_width: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Initial learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub decay_rate: Option<f64>,
    #[arg(long)]
    pub decay_every: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

impl ModelArgs {
    pub fn apply(&self, c: &mut ModelConfig) {
        if let Some(v) = self.embed_dim {
            c.embed_dim = v;
        }
        if let Some(v) = self.expand {
            c.expand = v;
        }
        if let Some(v) = self.states {
            c.state_dim = v;
        }
        if let Some(v) = self.layers {
            c.attn_layers = v;
        }
        if let Some(v) = self.heads {
            c.attn_heads = v;
        }
        if let Some(v) = self.delta {
            c.huber_delta = v;
        }
        if let Some(v) = self.conv_width {
            c.conv_width = v;
        }
    }
}

impl TrainArgs {
    pub fn apply(&self, c: &mut TrainConfig) {
        if let Some(v) = self.epochs {
            c.epochs = v;
        }
        if let Some(v) = self.lr {
            c.lr0 = v;
        }
        if let Some(v) = self.decay_rate {
            c.decay_rate = v;
        }
        if let Some(v) = self.decay_every {
            c.decay_every = v;
        }
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
    }
}

/// Everything a run used, serialised as `run_config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<PathBuf>,
    pub out: PathBuf,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Command-specific settings.
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub options: Value,
}

fn merge(base: &mut Value, over: &Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                merge(b.entry(k.clone()).or_insert(Value::Null), v);
            }
        }
        (b, o) => *b = o.clone(),
    }
}

impl RunConfig {
    /// Applies a JSON override file on top of the flag-derived values.
    /// Recognised keys are `seed`, `model` and `train`.
    pub fn with_overrides(mut self, path: Option<&Path>) -> Result<Self> {
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            let over: Value = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
            if let Some(obj) = over.as_object() {
                if let Some(unknown) = obj.keys().find(|k| !["seed", "model", "train"].contains(&k.as_str())) {
                    anyhow::bail!("config {}: unknown key {unknown:?}", path.display());
                }
            } else {
                anyhow::bail!("config {}: expected a JSON object", path.display());
            }
            let mut model = serde_json::to_value(&self.model)?;
            let mut train = serde_json::to_value(&self.train)?;
            if let Some(m) = over.get("model") {
                merge(&mut model, m);
            }
            if let Some(t) = over.get("train") {
                merge(&mut train, t);
            }
            self.model = serde_json::from_value(model).context("invalid model section")?;
            self.train = serde_json::from_value(train).context("invalid train section")?;
            if let Some(s) = over.get("seed") {
                self.seed = s.as_u64().context("seed must be a non-negative integer")?;
            }
        }
        self.train.seed = self.seed;
        self.model.validate()?;
        self.train.validate()?;
        Ok(self)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join("run_config.json"), self)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}
