//! Config files, seeds and the run manifest.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Result;
use dirvr::estimators::ReferencePolicy;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::usage;

pub const SEED_ENV: &str = "DIRVR_SEED";

pub fn load_config(path: Option<&Path>) -> Result<Option<Map<String, Value>>> {
    let Some(path) = path else { return Ok(None) };
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    match serde_json::from_str(&text) {
        Ok(Value::Object(map)) => Ok(Some(map)),
        Ok(_) => Err(usage(format!("config {} must hold a JSON object", path.display()))),
        Err(e) => Err(usage(format!("malformed config {}: {e}", path.display()))),
    }
}

/// Overlays the flags given on the command line onto the config file.
///
/// Flags left unset serialize as `null` (or `false` for switches) and do not
/// override the file. Unknown keys in the file are rejected.
pub fn merge<T: Serialize + DeserializeOwned>(cli: &T, file: Option<&Map<String, Value>>) -> Result<T> {
    let mut merged = file.cloned().unwrap_or_default();
    let Value::Object(flags) = serde_json::to_value(cli)? else {
        unreachable!("argument structs serialize to objects")
    };
    for (key, value) in flags {
        if !(value.is_null() || value == Value::Bool(false)) {
            merged.insert(key, value);
        }
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| usage(format!("invalid configuration: {e}")))
}

/// Flag or config value, then `$DIRVR_SEED`, then 0.
pub fn resolve_seed(seed: Option<u64>) -> Result<u64> {
    if let Some(s) = seed {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(text) => text.trim().parse().map_err(|_| usage(format!("{SEED_ENV}='{text}' is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}

/// Everything needed to rerun a command: the resolved configuration and seed.
/// Thread counts are left out because results do not depend on them.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub artifact_version: String,
    pub seed: u64,
    pub config: Value,
    /// source of the exact moments behind every datapoint, when one is used
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_policy: Option<ReferencePolicy>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub started_unix_ms: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub finished_unix_ms: Option<u64>,
}

/// Per-invocation settings that are not part of any command's configuration.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunContext {
    started_unix_ms: Option<u64>,
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

impl RunContext {
    pub fn new(timestamps: bool) -> Self {
        Self {
            started_unix_ms: timestamps.then(now_ms),
        }
    }

    pub fn manifest(&self, command: &str, config: &impl Serialize, seed: u64) -> RunManifest {
        let mut config = serde_json::to_value(config).expect("configuration serializes");
        if let Value::Object(map) = &mut config {
            map.retain(|_, v| !v.is_null());
            map.insert("seed".into(), seed.into());
        }
        RunManifest {
            command: command.into(),
            artifact_version: env!("CARGO_PKG_VERSION").into(),
            seed,
            config,
            reference_policy: None,
            started_unix_ms: self.started_unix_ms,
            finished_unix_ms: self.started_unix_ms.map(|_| now_ms()),
        }
    }
}
