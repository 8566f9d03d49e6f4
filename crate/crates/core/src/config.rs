//! Key=value config files: one `key = value` pair per line, `#` comments.
//! Keys mirror the training/retrieval/generator field names; commands
//! validate the keys they consume. Seeds carry no default — commands that
//! need entropy require an explicit `seed` key.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<KvConfig> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::invalid_config(format!(
                    "line {}: expected key=value, got {raw:?}",
                    lineno + 1
                )));
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                return Err(Error::invalid_config(format!(
                    "line {}: empty key",
                    lineno + 1
                )));
            }
            if entries.insert(key.clone(), value).is_some() {
                return Err(Error::invalid_config(format!(
                    "line {}: duplicate key {key:?}",
                    lineno + 1
                )));
            }
        }
        Ok(KvConfig { entries })
    }

    pub fn load(path: &Path) -> Result<KvConfig> {
        let text = std::fs::read_to_string(path)?;
        KvConfig::parse(&text)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|s| s.as_str())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(v) => v.parse::<T>().map(Some).map_err(|_| {
                Error::invalid_config(format!("key {key:?}: cannot parse value {v:?}"))
            }),
        }
    }

    pub fn get_u64(&self, key: &str) -> Result<Option<u64>> {
        self.parsed(key)
    }

    pub fn get_usize(&self, key: &str) -> Result<Option<usize>> {
        self.parsed(key)
    }

    pub fn get_f64(&self, key: &str) -> Result<Option<f64>> {
        self.parsed(key)
    }

    pub fn get_bool(&self, key: &str) -> Result<Option<bool>> {
        match self.entries.get(key).map(|s| s.as_str()) {
            None => Ok(None),
            Some("true") | Some("1") => Ok(Some(true)),
            Some("false") | Some("0") => Ok(Some(false)),
            Some(v) => Err(Error::invalid_config(format!(
                "key {key:?}: expected true/false, got {v:?}"
            ))),
        }
    }

    pub fn require_u64(&self, key: &str) -> Result<u64> {
        self.get_u64(key)?
            .ok_or_else(|| Error::invalid_config(format!("missing required key {key:?}")))
    }

    pub fn require_usize(&self, key: &str) -> Result<usize> {
        self.get_usize(key)?
            .ok_or_else(|| Error::invalid_config(format!("missing required key {key:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_values_and_comments() {
        let cfg = KvConfig::parse(
            "# comment\nseed = 7\nlr=0.5  # trailing\n\nname = planted\nflag=true\n",
        )
        .unwrap();
        assert_eq!(cfg.require_u64("seed").unwrap(), 7);
        assert_eq!(cfg.get_f64("lr").unwrap(), Some(0.5));
        assert_eq!(cfg.raw("name"), Some("planted"));
        assert_eq!(cfg.get_bool("flag").unwrap(), Some(true));
        assert_eq!(cfg.get_u64("absent").unwrap(), None);
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(KvConfig::parse("novalue\n").is_err());
        assert!(KvConfig::parse("a=1\na=2\n").is_err());
        assert!(KvConfig::parse("=3\n").is_err());
    }

    #[test]
    fn missing_required_key_is_config_error() {
        let cfg = KvConfig::parse("a=1\n").unwrap();
        match cfg.require_u64("seed") {
            Err(Error::InvalidConfig(msg)) => assert!(msg.contains("seed")),
            other => panic!("expected invalid-config, got {other:?}"),
        }
    }
}
