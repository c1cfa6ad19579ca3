//! Run configuration: a JSON training config merged with command-line
//! overrides, plus the resolved paths of one run.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use scribble_da::trainer::TrainConfig;
use scribble_da::Error;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::TrainArgs;

#[derive(Debug, Serialize)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub data_manifest: PathBuf,
    pub out_dir: PathBuf,
    pub deterministic: bool,
}

/// Sets `key` (dot-separated for nested tables) to `raw`, read as JSON when
/// it parses and as a string otherwise.
fn set_path(root: &mut Map<String, Value>, key: &str, raw: &str) -> Result<(), Error> {
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|k| !k.is_empty()).ok_or_else(|| Error::Config(format!("empty key in {key:?}")))?;
    let mut table = root;
    for part in parts {
        let entry = table.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
        table = entry.as_object_mut().ok_or_else(|| Error::Config(format!("{part} is not a table in {key:?}")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

fn absolute(path: &Path) -> Result<PathBuf, Error> {
    Ok(if path.is_absolute() { path.to_path_buf() } else { std::env::current_dir()?.join(path) })
}

impl RunConfig {
    pub fn from_args(args: &TrainArgs) -> Result<Self, Error> {
        let mut root = match &args.config {
            Some(path) => match serde_json::from_str(&fs::read_to_string(path)?)? {
                Value::Object(m) => m,
                _ => return Err(Error::Config(format!("{} must hold a JSON object", path.display()))),
            },
            None => Map::new(),
        };
        for item in &args.overrides {
            let (k, v) = item.split_once('=').ok_or_else(|| Error::Config(format!("override {item:?} is not KEY=VALUE")))?;
            set_path(&mut root, k, v)?;
        }
        if let Some(mode) = &args.mode {
            root.insert("mode".into(), Value::String(mode.clone()));
        }
        if let Some(seed) = args.seed {
            root.insert("seed".into(), seed.into());
        }
        if let Some(threads) = args.threads {
            root.insert("threads".into(), threads.into());
        }
        if let Some(epochs) = args.max_epochs {
            root.insert("max_epochs".into(), epochs.into());
        }
        if let Some(lr) = args.lr {
            root.insert("lr".into(), lr.into());
        }
        let mut train: TrainConfig =
            serde_json::from_value(Value::Object(root)).map_err(|e| Error::Config(format!("training config: {e}")))?;
        if args.deterministic {
            train.threads = 1;
        }
        train.validate()?;
        let out_dir = match &args.out_dir {
            Some(dir) => dir.clone(),
            None => {
                let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
                PathBuf::from("runs").join(format!("{stamp}-seed{}", train.seed))
            }
        };
        Ok(Self {
            train,
            data_manifest: absolute(&args.data_manifest)?,
            out_dir: absolute(&out_dir)?,
            deterministic: args.deterministic,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nested_keys_and_raw_strings() {
        let mut m = Map::new();
        set_path(&mut m, "kernel.lambda_i", "0.2").unwrap();
        set_path(&mut m, "mode", "scrib").unwrap();
        assert_eq!(m["kernel"]["lambda_i"], 0.2);
        assert_eq!(m["mode"], "scrib");
        assert!(set_path(&mut m, "mode.x", "1").is_err());
        assert!(set_path(&mut m, "a.", "1").is_err());
    }
}
