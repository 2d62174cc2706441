//! Layered job configuration: built-in defaults, then an optional JSON file,
//! then command-line flags. The resolved result is written next to the outputs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CliResult, Exit, OrExit};

/// Defaults overlaid with the JSON object in `path`, if any. Unknown keys
/// are rejected.
pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).or_exit(Exit::Usage, format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).or_exit(Exit::Usage, format!("parsing config {}", path.display()))
}

/// Writes `cfg` as compact JSON with a fixed key order.
pub fn echo<T: Serialize>(cfg: &T, path: &Path) -> CliResult<()> {
    let text = serde_json::to_string(cfg).expect("config serializes");
    fs::write(path, text).or_exit(Exit::Data, format!("writing {}", path.display()))
}

/// `preds.json` becomes `preds.config.json` in the same directory.
pub fn sidecar(out: &Path) -> PathBuf {
    let stem = out.file_stem().map_or_else(|| "output".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}.config.json"))
}

/// Parses `a,b,c` into three numbers.
pub fn parse_triple(s: &str) -> Result<[f64; 3], String> {
    let v = parse_list(s)?;
    v.try_into().map_err(|v: Vec<f64>| format!("expected 3 comma-separated numbers, got {}", v.len()))
}

/// Parses `lo,hi`.
pub fn parse_pair(s: &str) -> Result<[f64; 2], String> {
    let v = parse_list(s)?;
    v.try_into().map_err(|v: Vec<f64>| format!("expected 2 comma-separated numbers, got {}", v.len()))
}

pub fn parse_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect()
}

/// Replaces `slot` when the flag was given.
pub fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}
