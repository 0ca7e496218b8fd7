//! Flat `key = value` configuration text.
//!
//! One entry per line, `#` starts a comment, keys are unique. Rendering is
//! sorted by key so the same settings always produce the same bytes.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::format(origin, format!("line {}: expected key = value", lineno + 1))
            })?;
            let key = k.trim();
            if key.is_empty() {
                return Err(Error::format(origin, format!("line {}: empty key", lineno + 1)));
            }
            if entries.insert(key.to_string(), v.trim().to_string()).is_some() {
                return Err(Error::format(
                    origin,
                    format!("line {}: duplicate key {key}", lineno + 1),
                ));
            }
        }
        Ok(Self { entries })
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get_parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| Error::InvalidArgument(format!("config key {key} = {v:?}: {e}")))
            })
            .transpose()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Entries in `other` replace entries here.
    pub fn merge(&mut self, other: &KvConfig) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(v);
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_render_round_trip() {
        let text = "# header\nseed = 7\n\nlr=0.0002 # trailing\n";
        let cfg = KvConfig::parse(text, Path::new("c.txt")).unwrap();
        assert_eq!(cfg.get("seed"), Some("7"));
        assert_eq!(cfg.get_parsed::<f64>("lr").unwrap(), Some(2e-4));
        assert_eq!(cfg.get_parsed::<u64>("missing").unwrap(), None);
        let again = KvConfig::parse(&cfg.render(), Path::new("c.txt")).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(cfg.render(), "lr = 0.0002\nseed = 7\n");
    }

    #[test]
    fn errors_name_line_and_key() {
        let e = KvConfig::parse("a = 1\nbogus\n", Path::new("c.txt")).unwrap_err();
        assert!(e.to_string().contains("line 2"), "{e}");
        let e = KvConfig::parse("a = 1\na = 2\n", Path::new("c.txt")).unwrap_err();
        assert!(e.to_string().contains("duplicate"), "{e}");
        let cfg = KvConfig::parse("n = x\n", Path::new("c.txt")).unwrap();
        assert!(cfg.get_parsed::<usize>("n").is_err());
    }
}
