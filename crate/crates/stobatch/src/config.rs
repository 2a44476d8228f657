//! Line-based `key = value` run configuration with `[section]` headers and
//! `#` comments. Zero-dependency and diff-friendly.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct Config {
    sections: BTreeMap<String, BTreeMap<String, String>>,
    hash: u64,
}

impl Config {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        let mut current = String::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| {
                        Error::Config(format!("line {}: unterminated section header", ln + 1))
                    })?
                    .trim();
                if name.is_empty() {
                    return Err(Error::Config(format!("line {}: empty section name", ln + 1)));
                }
                current = name.to_string();
                sections.entry(current.clone()).or_default();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got `{line}`", ln + 1))
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", ln + 1)));
            }
            sections
                .entry(current.clone())
                .or_default()
                .insert(key.to_string(), value.trim().to_string());
        }
        Ok(Self { sections, hash: fnv1a_str(text) })
    }

    /// FNV-1a over the raw config text; embedded in every report.
    pub fn hash(&self) -> u64 {
        self.hash
    }

    pub fn get(&self, section: &str, key: &str) -> Result<&str> {
        self.sections
            .get(section)
            .and_then(|s| s.get(key))
            .map(String::as_str)
            .ok_or_else(|| Error::Config(format!("missing config key `{section}.{key}`")))
    }

    pub fn get_opt(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section).and_then(|s| s.get(key)).map(String::as_str)
    }

    pub fn get_or<'a>(&'a self, section: &str, key: &str, default: &'a str) -> &'a str {
        self.get_opt(section, key).unwrap_or(default)
    }

    pub fn f64(&self, section: &str, key: &str) -> Result<f64> {
        let raw = self.get(section, key)?;
        raw.parse().map_err(|_| {
            Error::Config(format!("config key `{section}.{key}`: `{raw}` is not a number"))
        })
    }

    pub fn f64_or(&self, section: &str, key: &str, default: f64) -> Result<f64> {
        match self.get_opt(section, key) {
            Some(raw) => raw.parse().map_err(|_| {
                Error::Config(format!("config key `{section}.{key}`: `{raw}` is not a number"))
            }),
            None => Ok(default),
        }
    }

    pub fn usize(&self, section: &str, key: &str) -> Result<usize> {
        let raw = self.get(section, key)?;
        raw.parse().map_err(|_| {
            Error::Config(format!("config key `{section}.{key}`: `{raw}` is not an integer"))
        })
    }

    pub fn usize_or(&self, section: &str, key: &str, default: usize) -> Result<usize> {
        match self.get_opt(section, key) {
            Some(raw) => raw.parse().map_err(|_| {
                Error::Config(format!("config key `{section}.{key}`: `{raw}` is not an integer"))
            }),
            None => Ok(default),
        }
    }

    pub fn u64_or(&self, section: &str, key: &str, default: u64) -> Result<u64> {
        match self.get_opt(section, key) {
            Some(raw) => raw.parse().map_err(|_| {
                Error::Config(format!("config key `{section}.{key}`: `{raw}` is not an integer"))
            }),
            None => Ok(default),
        }
    }

    pub fn bool_or(&self, section: &str, key: &str, default: bool) -> Result<bool> {
        match self.get_opt(section, key) {
            Some("true") | Some("1") | Some("yes") => Ok(true),
            Some("false") | Some("0") | Some("no") => Ok(false),
            Some(other) => Err(Error::Config(format!(
                "config key `{section}.{key}`: `{other}` is not a boolean"
            ))),
            None => Ok(default),
        }
    }

    /// Comma-separated list value.
    pub fn list(&self, section: &str, key: &str) -> Result<Vec<String>> {
        Ok(self
            .get(section, key)?
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect())
    }
}

pub fn fnv1a_str(text: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
