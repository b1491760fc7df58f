//! Declarative config files.
//!
//! A config file is TOML whose keys are the field names of the command's
//! settings. Keys may sit at the top level or under a table named after
//! the subcommand (`[train]`, `[eval]`, ...). Command-line flags win.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use toml::Value;

use crate::CliError;

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Table(b), Value::Table(o)) => {
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

/// `base` with the file's settings laid over it.
pub fn apply_file<T: Serialize + DeserializeOwned>(base: T, path: Option<&Path>, section: &str) -> Result<T, CliError> {
    let Some(path) = path else { return Ok(base) };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let mut file: Value =
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    if let Some(Value::Table(t)) = file.as_table_mut().and_then(|t| t.remove(section)) {
        file = Value::Table(t);
    }
    let mut merged = Value::try_from(&base).map_err(|e| CliError::Usage(e.to_string()))?;
    merge(&mut merged, file);
    merged.try_into().map_err(|e: toml::de::Error| CliError::Usage(format!("{}: {e}", path.display())))
}
