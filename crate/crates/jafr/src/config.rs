//! Experiment configuration: JSON or `key = value` text, with dotted-path
//! overrides layered on top (flags beat file contents).

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::nn::ModelSpec;
use crate::trainer::TrainConfig;

/// Everything a training run needs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainJob {
    pub tag: String,
    /// Dataset reference string (see `data::load_ref`).
    pub dataset: String,
    /// Held-out set for per-epoch accuracy; the training set when absent.
    pub eval_dataset: Option<String>,
    pub model: ModelSpec,
    pub train: TrainConfig,
}

impl Default for TrainJob {
    fn default() -> Self {
        TrainJob {
            tag: "model".into(),
            dataset: "blobs:n=2048,k=4,seed=7".into(),
            eval_dataset: None,
            model: ModelSpec::small_cnn([1, 16, 16], 4),
            train: TrainConfig::default(),
        }
    }
}

/// Parses a config file body. A leading `{` means JSON; anything else is
/// treated as `key = value` lines with dotted paths (`train.lr = 0.1`),
/// `#` comments, and JSON literals on the right-hand side.
pub fn parse_config_text(text: &str) -> Result<Value, String> {
    if text.trim_start().starts_with('{') {
        return serde_json::from_str(text).map_err(|e| format!("bad JSON config: {e}"));
    }
    let mut root = json!({});
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected 'key = value', got '{raw}'", lineno + 1))?;
        set_path(&mut root, key.trim(), parse_scalar(value.trim()))?;
    }
    Ok(root)
}

/// A right-hand side: JSON literal when it parses as one, string otherwise.
fn parse_scalar(s: &str) -> Value {
    serde_json::from_str(s).unwrap_or_else(|_| Value::String(s.to_string()))
}

/// Sets `root[a][b][c] = value` for a dotted path `a.b.c`, creating objects
/// along the way.
pub fn set_path(root: &mut Value, dotted: &str, value: Value) -> Result<(), String> {
    let mut cur = root;
    let parts: Vec<&str> = dotted.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(format!("empty path segment in '{dotted}'"));
        }
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| format!("'{dotted}': segment '{part}' is not an object"))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert_with(|| json!({}));
    }
    unreachable!("parts is non-empty")
}

/// Loads a train job: defaults, then file contents, then `key=value`
/// overrides, deep-merged in that order so partial objects work
/// (`model.num_classes = 2` leaves the rest of the model alone).
pub fn load_train_job(path: &Path, overrides: &[String]) -> Result<TrainJob, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    let mut value = parse_config_text(&text)?;
    apply_overrides(&mut value, overrides)?;
    job_from_value(value)
}

pub fn job_from_value(value: Value) -> Result<TrainJob, String> {
    let mut merged = serde_json::to_value(TrainJob::default()).expect("defaults serialize");
    deep_merge(&mut merged, value);
    serde_json::from_value(merged).map_err(|e| format!("invalid train config: {e}"))
}

/// Overlays `patch` onto `base`: objects merge key by key, anything else
/// replaces the base value.
fn deep_merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => deep_merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

pub fn apply_overrides(value: &mut Value, overrides: &[String]) -> Result<(), String> {
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| format!("override '{o}' is not key=value"))?;
        set_path(value, k.trim(), parse_scalar(v.trim()))?;
    }
    Ok(())
}
