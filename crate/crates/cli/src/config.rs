//! Config files and the resolved-config record written next to outputs.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;

use crate::commands::CliError;

/// Config from `path`, or the defaults when no file was given. Missing keys
/// take their defaults.
pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, CliError> {
    match path {
        Some(p) => Ok(matting::io::read_json(p)?),
        None => Ok(T::default()),
    }
}

/// Overwrite `slot` when a flag was given.
pub fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

/// `<dir>/<stem>.config.json` for a file output.
pub fn beside(output: &Path) -> PathBuf {
    let stem = output
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "output".into());
    output.with_file_name(format!("{stem}.config.json"))
}

/// Record the command, its paths and the fully resolved options.
pub fn write_resolved<C: Serialize>(
    path: &Path,
    command: &str,
    paths: &[(&str, Option<&Path>)],
    config: &C,
) -> Result<(), CliError> {
    let paths: serde_json::Map<String, serde_json::Value> = paths
        .iter()
        .filter_map(|(k, v)| v.map(|p| (k.to_string(), json!(p.display().to_string()))))
        .collect();
    let record = json!({
        "command": command,
        "paths": paths,
        "config": config,
    });
    Ok(matting::io::write_json(path, &record)?)
}
