//! Run settings: defaults, overridden by a config file, overridden by flags.

use std::fs;
use std::path::Path;

use cdtm_core::eval::{CoherenceReference, DEFAULT_TOP_N, DEFAULT_WINDOW};
use cdtm_core::{CorpusConfig, Error, Result, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::manifest::RunManifest;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub top_n: usize,
    pub window_size: usize,
    pub folds: usize,
    pub reference: CoherenceReference,
    pub train_fraction: f64,
    pub ks: Vec<usize>,
    pub lambdas: Vec<f64>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            top_n: DEFAULT_TOP_N,
            window_size: DEFAULT_WINDOW,
            folds: 5,
            reference: CoherenceReference::Validation,
            train_fraction: 0.8,
            ks: vec![5, 10, 15, 20, 25, 30],
            lambdas: vec![25.0, 30.0, 35.0, 40.0, 45.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub train: TrainConfig,
    pub corpus: CorpusConfig,
    pub eval: EvalSettings,
}

/// Where each flat config key lives in the serialized settings.
const SECTIONS: [&[&str]; 4] = [&["train"], &["corpus"], &["corpus", "tokenizer"], &["eval"]];

impl Settings {
    /// Loads a `key = value` file (`#` starts a comment), or the settings
    /// recorded in a `manifest.json` from an earlier run.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        if text.trim_start().starts_with('{') {
            return Ok(RunManifest::from_json_str(&text)?.settings);
        }
        let mut settings = Self::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                what: "config file",
                line: lineno + 1,
                msg: "expected key = value".into(),
            })?;
            settings.set(key.trim(), value.trim())?;
        }
        Ok(settings)
    }

    /// Sets one field by its flat name. `lambda` is shorthand for a shared
    /// penalty weight; lists are comma separated.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let field = if key == "lambda" { "penalty" } else { key };
        let mut tree = serde_json::to_value(&*self)?;
        let path = SECTIONS
            .iter()
            .find(|path| {
                let section = path.iter().try_fold(&tree, |node, p| node.get(*p));
                section.is_some_and(|s| s.get(field).is_some())
            })
            .ok_or_else(|| Error::Config(format!("unknown setting {key:?}")))?;
        let section = path.iter().fold(&mut tree, |node, p| &mut node[*p]);
        let slot = &mut section[field];
        let mut value = parse_value(raw);
        if slot.is_array() && !value.is_array() {
            value = Value::Array(vec![value]);
        }
        *slot = value;
        *self = serde_json::from_value(tree).map_err(|e| Error::Config(format!("{key} = {raw}: {e}")))?;
        Ok(())
    }
}

fn parse_value(raw: &str) -> Value {
    if let Ok(v) = serde_json::from_str::<Value>(raw) {
        return v;
    }
    if raw.contains(',') {
        return Value::Array(raw.split(',').map(|p| parse_value(p.trim())).collect());
    }
    Value::String(raw.to_owned())
}
