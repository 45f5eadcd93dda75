//! Parameter resolution and run manifests.
//!
//! Every subcommand has a parameter struct whose keys mirror its flags in
//! kebab-case. Values resolve as flag > config section > default. A config
//! file (TOML or JSON) holds optional top-level `seed` and `out-dir` plus one
//! section per subcommand; a run manifest has the same shape, so
//! `--config manifest.json` repeats the run.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Parsed config file as a JSON object.
#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    root: Map<String, Value>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::data(format!("cannot read config {}: {e}", path.display())))?;
        let is_toml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
        let value: Value = if is_toml {
            toml::from_str(&text).map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))?
        } else {
            serde_json::from_str(&text).map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))?
        };
        match value {
            Value::Object(root) => Ok(Self { root }),
            _ => Err(CliError::usage(format!("config {} must be a table/object", path.display()))),
        }
    }

    pub fn seed(&self) -> Result<Option<u64>, CliError> {
        match self.root.get("seed") {
            None | Some(Value::Null) => Ok(None),
            Some(v) => v
                .as_u64()
                .map(Some)
                .ok_or_else(|| CliError::usage(format!("config key `seed` must be a non-negative integer, got {v}"))),
        }
    }

    pub fn out_dir(&self) -> Result<Option<PathBuf>, CliError> {
        match self.root.get("out-dir") {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => Ok(Some(PathBuf::from(s))),
            Some(v) => Err(CliError::usage(format!("config key `out-dir` must be a string, got {v}"))),
        }
    }

    fn section(&self, name: &str) -> Result<Map<String, Value>, CliError> {
        match self.root.get(name) {
            None | Some(Value::Null) => Ok(Map::new()),
            Some(Value::Object(m)) => Ok(m.clone()),
            Some(v) => Err(CliError::usage(format!("config section `{name}` must be a table, got {v}"))),
        }
    }
}

/// Merges defaults, the config section and the flags into `P`.
/// Unset flags (`None`, `false`) leave lower layers untouched.
pub fn resolve<P, A>(section: &str, config: &ConfigFile, flags: &A) -> Result<P, CliError>
where
    P: Serialize + DeserializeOwned + Default,
    A: Serialize,
{
    let mut merged = match serde_json::to_value(P::default()).map_err(internal)? {
        Value::Object(m) => m,
        _ => unreachable!("parameter structs serialize to objects"),
    };
    for (k, v) in config.section(section)? {
        merged.insert(k, v);
    }
    if let Value::Object(m) = serde_json::to_value(flags).map_err(internal)? {
        for (k, v) in m {
            if !matches!(v, Value::Null | Value::Bool(false)) {
                merged.insert(k, v);
            }
        }
    }
    serde_json::from_value(Value::Object(merged))
        .map_err(|e| CliError::usage(format!("parameters for `{section}`: {e}")))
}

fn internal(e: serde_json::Error) -> CliError {
    CliError::usage(format!("parameter encoding: {e}"))
}

/// Echo of one run: the resolved parameters plus the files it read and wrote.
#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct Manifest<'a, P: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub seed: u64,
    pub out_dir: &'a Path,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<String>,
    #[serde(skip)]
    pub params: &'a P,
}

impl<P: Serialize> Manifest<'_, P> {
    pub fn write(&self) -> Result<PathBuf, CliError> {
        let mut value = serde_json::to_value(self).map_err(internal)?;
        let params = serde_json::to_value(self.params).map_err(internal)?;
        value
            .as_object_mut()
            .expect("manifest is an object")
            .insert(self.command.to_string(), params);
        let path = self.out_dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&value).map_err(internal)?;
        std::fs::write(&path, text + "\n")
            .map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Serialize, Deserialize, PartialEq)]
    #[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
    struct P {
        count: usize,
        min_len: usize,
        flag: bool,
    }

    impl Default for P {
        fn default() -> Self {
            Self { count: 5, min_len: 60, flag: false }
        }
    }

    #[derive(Serialize)]
    #[serde(rename_all = "kebab-case")]
    struct A {
        count: Option<usize>,
        min_len: Option<usize>,
        flag: bool,
    }

    fn config(text: &str) -> ConfigFile {
        match serde_json::from_str(text).unwrap() {
            Value::Object(root) => ConfigFile { root },
            _ => unreachable!(),
        }
    }

    #[test]
    fn flags_override_config_override_defaults() {
        let cfg = config(r#"{"seed": 3, "ingest": {"count": 10, "min-len": 90, "flag": true}}"#);
        let flags = A { count: Some(20), min_len: None, flag: false };
        let p: P = resolve("ingest", &cfg, &flags).unwrap();
        assert_eq!(p, P { count: 20, min_len: 90, flag: true });
        assert_eq!(cfg.seed().unwrap(), Some(3));
        let p: P = resolve("ingest", &ConfigFile::default(), &A { count: None, min_len: None, flag: false }).unwrap();
        assert_eq!(p, P::default());
    }

    #[test]
    fn unknown_config_key_is_rejected() {
        let cfg = config(r#"{"ingest": {"cout": 10}}"#);
        let flags = A { count: None, min_len: None, flag: false };
        assert!(resolve::<P, _>("ingest", &cfg, &flags).is_err());
    }
}
