use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::CliError;

/// Reads a JSON object whose keys mirror the command-line flags.
pub fn read_config_file(path: &Path) -> Result<Map<String, Value>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::validation(format!("cannot read config {}: {e}", path.display())))?;
    match serde_json::from_str::<Value>(&text) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(CliError::usage(format!(
            "config {} must contain a JSON object",
            path.display()
        ))),
        Err(e) => Err(CliError::usage(format!("config {}: {e}", path.display()))),
    }
}

/// Defaults, then config-file values, then explicitly given flags.
pub fn resolve<C, F>(
    defaults: C,
    file: Option<&Map<String, Value>>,
    flags: &F,
) -> Result<C, CliError>
where
    C: Serialize + DeserializeOwned,
    F: Serialize,
{
    let mut merged = match serde_json::to_value(defaults).expect("config serializes") {
        Value::Object(m) => m,
        _ => unreachable!("config is a struct"),
    };
    if let Some(file) = file {
        for (k, v) in file {
            merged.insert(k.clone(), v.clone());
        }
    }
    if let Value::Object(f) = serde_json::to_value(flags).expect("flags serialize") {
        for (k, v) in f {
            merged.insert(k, v);
        }
    }
    serde_json::from_value(Value::Object(merged))
        .map_err(|e| CliError::usage(format!("config: {e}")))
}
