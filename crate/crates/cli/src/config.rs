//! Layered configuration: defaults, then command-line flags, then a TOML or
//! JSON file whose keys win over both.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::error::{CliError, CliResult};
use crate::io::read_bytes;

fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
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

/// Parses a config file as JSON (`.json`) or TOML (anything else).
pub fn read_config_value(path: &Path) -> CliResult<(Value, Vec<u8>)> {
    let bytes = read_bytes(path)?;
    let bad = |e: String| CliError::Usage(format!("{}: {e}", path.display()));
    let value = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_slice(&bytes).map_err(|e| bad(e.to_string()))?
    } else {
        let text = std::str::from_utf8(&bytes).map_err(|e| bad(e.to_string()))?;
        let table: toml::Table = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
        serde_json::to_value(table).map_err(|e| bad(e.to_string()))?
    };
    Ok((value, bytes))
}

/// `base` with the file's keys laid over it. Unknown keys are rejected by `T`.
pub fn overlay<T: Serialize + DeserializeOwned>(base: &T, file: Option<&Value>) -> CliResult<T> {
    let mut v = serde_json::to_value(base).map_err(|e| CliError::Usage(e.to_string()))?;
    if let Some(top) = file {
        if !top.is_object() {
            return Err(CliError::Usage("config file must be a table".into()));
        }
        merge(&mut v, top.clone());
    }
    serde_json::from_value(v).map_err(|e| CliError::Usage(format!("config: {e}")))
}
