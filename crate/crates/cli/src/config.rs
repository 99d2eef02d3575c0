//! Layered configuration: defaults, then an optional JSON file, then flags.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::{CliError, CliResult};

/// Builds `C` from its defaults overlaid with `file` (if any) and then with every
/// flag that was set. Unknown keys in the file are rejected.
pub fn resolve<C, F>(file: Option<&Path>, flags: &F) -> CliResult<C>
where
    C: Default + Serialize + DeserializeOwned,
    F: Serialize,
{
    let mut value = serde_json::to_value(C::default())?;
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        let overlay: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))?;
        merge(&mut value, overlay, path)?;
    }
    merge(&mut value, serde_json::to_value(flags)?, Path::new("<flags>"))?;
    serde_json::from_value(value).map_err(|e| CliError::usage(format!("invalid configuration: {e}")))
}

fn merge(base: &mut Value, overlay: Value, origin: &Path) -> CliResult<()> {
    let (Value::Object(b), Value::Object(o)) = (base, overlay) else {
        return Err(CliError::usage(format!("{}: configuration must be a JSON object", origin.display())));
    };
    for (k, v) in o {
        if v.is_null() {
            continue;
        }
        match b.get_mut(&k) {
            Some(slot) => *slot = v,
            None => {
                return Err(CliError::usage(format!("{}: unknown configuration key {k:?}", origin.display())));
            }
        }
    }
    Ok(())
}

/// Writes `config.json` into `dir`.
pub fn write_effective<C: Serialize>(dir: &Path, cfg: &C) -> CliResult<()> {
    crate::io::write_json(&dir.join("config.json"), cfg)
}
