//! Flat `key = value` study configuration with `#` comments, plus built-in presets.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{AppError, AppResult};

pub const PRESETS: &[(&str, &str)] = &[
    ("table1-case1", include_str!("../presets/table1-case1.cfg")),
    ("table1-case2", include_str!("../presets/table1-case2.cfg")),
    ("table1-case3", include_str!("../presets/table1-case3.cfg")),
    ("table1-case4", include_str!("../presets/table1-case4.cfg")),
    ("table2", include_str!("../presets/table2.cfg")),
    ("table3", include_str!("../presets/table3.cfg")),
    ("table4-top", include_str!("../presets/table4-top.cfg")),
    ("table4-bottom", include_str!("../presets/table4-bottom.cfg")),
    ("calibrated", include_str!("../presets/calibrated.cfg")),
];

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> AppResult<Self> {
        let mut entries = BTreeMap::new();
        for (k, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| AppError::Config(format!("line {}: expected key = value", k + 1)))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(AppError::Config(format!("line {}: empty key", k + 1)));
            }
            entries.insert(key.to_string(), value.trim().to_string());
        }
        Ok(Config { entries })
    }

    pub fn load(path: &Path) -> AppResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn preset(name: &str) -> AppResult<Self> {
        let (_, text) = PRESETS.iter().find(|(n, _)| *n == name).ok_or_else(|| {
            AppError::Usage(format!("unknown preset {name:?} (known: {})", preset_names().join(", ")))
        })?;
        Self::parse(text)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|s| s.as_str())
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), value.into());
    }

    /// Apply a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> AppResult<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| AppError::Usage(format!("override {assignment:?} is not key=value")))?;
        self.set(k.trim(), v.trim());
        Ok(())
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.entries
    }

    pub fn parsed<T: FromStr>(&self, key: &str) -> AppResult<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| AppError::Config(format!("{key}: cannot parse {v:?}"))),
        }
    }

    pub fn or<T: FromStr>(&self, key: &str, default: T) -> AppResult<T> {
        Ok(self.parsed(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> AppResult<T> {
        self.parsed(key)?
            .ok_or_else(|| AppError::Config(format!("missing required key {key:?}")))
    }

    /// Comma-separated list; empty when the key is absent.
    pub fn list(&self, key: &str) -> Vec<String> {
        self.get(key)
            .map(|v| {
                v.split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect()
            })
            .unwrap_or_default()
    }
}
