//! Per-command defaults from a JSON file. A flag given on the command line
//! wins over the file, and the file wins over built-in defaults.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde_json::{Map, Value};

use crate::{CliError, Exit};

#[derive(Debug, Default)]
pub struct Config {
    doc: Map<String, Value>,
}

fn config_error(message: impl Into<String>) -> CliError {
    CliError::new(Exit::Usage, "config", message)
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Config, CliError> {
        let Some(path) = path else {
            return Ok(Config::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        match serde_json::from_str(&text) {
            Ok(Value::Object(doc)) => Ok(Config { doc }),
            Ok(_) => Err(config_error(format!("{}: top level must be an object", path.display()))),
            Err(e) => Err(config_error(format!("{}: {e}", path.display()))),
        }
    }

    /// View of one command's section. Keys outside `known` are rejected so
    /// that typos do not pass silently.
    pub fn section(&self, command: &str, known: &[&str]) -> Result<Section, CliError> {
        let map = match self.doc.get(command) {
            None => Map::new(),
            Some(Value::Object(m)) => m.clone(),
            Some(_) => return Err(config_error(format!("section '{command}' must be an object"))),
        };
        if let Some(k) = map.keys().find(|k| !known.contains(&k.as_str())) {
            return Err(config_error(format!("unknown key '{command}.{k}'")));
        }
        Ok(Section {
            command: command.into(),
            map,
            resolved: Map::new(),
        })
    }
}

/// Looks up values for one command and records what was finally used.
#[derive(Debug)]
pub struct Section {
    command: String,
    map: Map<String, Value>,
    resolved: Map<String, Value>,
}

impl Section {
    /// Flag, then config file, then nothing.
    pub fn opt<T: DeserializeOwned + serde::Serialize>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>, CliError> {
        let value = match flag {
            Some(v) => Some(v),
            None => match self.map.get(key) {
                Some(Value::Null) | None => None,
                Some(v) => Some(
                    serde_json::from_value(v.clone())
                        .map_err(|e| config_error(format!("{}.{key}: {e}", self.command)))?,
                ),
            },
        };
        if let Some(v) = &value {
            self.resolved
                .insert(key.into(), serde_json::to_value(v).expect("config values serialize"));
        }
        Ok(value)
    }

    pub fn or<T: DeserializeOwned + serde::Serialize>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, CliError> {
        match self.opt(key, flag)? {
            Some(v) => Ok(v),
            None => {
                self.resolved
                    .insert(key.into(), serde_json::to_value(&default).expect("config values serialize"));
                Ok(default)
            }
        }
    }

    pub fn required<T: DeserializeOwned + serde::Serialize>(&mut self, key: &str, flag: Option<T>) -> Result<T, CliError> {
        self.opt(key, flag)?
            .ok_or_else(|| CliError::usage(format!("--{} is required", key.replace('_', "-"))))
    }

    /// Everything resolved so far, for the run manifest.
    pub fn resolved(&self) -> Value {
        Value::Object(self.resolved.clone())
    }
}
