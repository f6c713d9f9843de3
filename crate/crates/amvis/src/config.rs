//! Flat key=value run configs with `[section]` headers. Sections correspond
//! to CLI subcommands; command-line flags override config values.

use crate::error::{AmvisError, Result};
use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

#[derive(Clone, Debug, Default)]
pub struct RunConfig {
    /// (section, key) -> value; keys before any section header live in "".
    values: BTreeMap<(String, String), String>,
    path: String,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let ps = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| AmvisError::io(&ps, e))?;
        RunConfig::parse(&text, &ps)
    }

    pub fn parse(text: &str, path: &str) -> Result<RunConfig> {
        let mut values = BTreeMap::new();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| AmvisError::Config {
                path: path.to_string(),
                detail: format!("line {}: expected key=value, got '{}'", lineno + 1, line),
            })?;
            values.insert(
                (section.clone(), k.trim().to_string()),
                v.trim().to_string(),
            );
        }
        Ok(RunConfig {
            values,
            path: path.to_string(),
        })
    }

    pub fn raw(&self, section: &str, key: &str) -> Option<&str> {
        self.values
            .get(&(section.to_string(), key.to_string()))
            .or_else(|| self.values.get(&(String::new(), key.to_string())))
            .map(String::as_str)
    }

    /// Typed lookup; a present-but-unparseable value is a config error.
    pub fn get<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<T>> {
        match self.raw(section, key) {
            None => Ok(None),
            Some(s) => s.parse().map(Some).map_err(|_| AmvisError::Config {
                path: self.path.clone(),
                detail: format!("[{}] {} = '{}' is not a valid {}", section, key, s, std::any::type_name::<T>()),
            }),
        }
    }
}
